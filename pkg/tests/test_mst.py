import numpy as np
import pytest

from cmsn import mst, nn, optim
from cmsn.frontend import CnnArch


def tiny_arch(classes):
    return CnnArch(classes=classes, input_len=64, conv_filters=(2, 3, 4, 4),
                   kernel=3, pool_widths=(2, 2, 2, 1), dense_units=8)


def toy_config(classes=2, **kw):
    defaults = dict(classes=classes, members=3, group_size=2, stages=3,
                    schedule=(0.05, 0.02), arch=tiny_arch(classes), seed=0)
    defaults.update(kw)
    return mst.CmsnConfig(**defaults)


def toy_data(classes, per_class, input_len=64, seed=0):
    rng = np.random.default_rng(seed)
    rows, labels = [], []
    for c in range(classes):
        center = np.zeros(input_len)
        center[c * 7:(c * 7) + 7] = 3.0
        for _ in range(per_class):
            rows.append(center + rng.normal(scale=0.3, size=input_len))
            labels.append(c)
    return np.array(rows), np.array(labels)


# ---------------------------------------------------------------------------
# targets / config validation
# ---------------------------------------------------------------------------

def test_build_stage_targets_examples():
    np.testing.assert_array_equal(mst.build_stage_targets([0, 1, 0], 0), [1, 0, 1])
    np.testing.assert_array_equal(mst.build_stage_targets([2, 2, 2], 2), [1, 1, 1])


def test_build_stage_targets_full_scale_counts():
    labels = np.repeat(np.arange(17), 11)
    for c in range(17):
        t = mst.build_stage_targets(labels, c)
        assert t.sum() == 11 and t.size == 187


def test_config_rejects_non_decreasing_schedule():
    with pytest.raises(ValueError, match="strictly decrease"):
        toy_config(schedule=(0.05, 0.05))
    with pytest.raises(ValueError, match="entries"):
        toy_config(schedule=(0.05,))
    with pytest.raises(ValueError, match="2 stages"):
        toy_config(stages=1, schedule=())


def test_default_config_matches_production_scale():
    cfg = mst.CmsnConfig(classes=17)
    assert cfg.members == 12 and cfg.group_size == 4 and cfg.stages == 4
    assert cfg.schedule == (0.05, 0.02, 0.005)


# ---------------------------------------------------------------------------
# structural layout
# ---------------------------------------------------------------------------

def test_structure_full_scale_widths():
    model = mst.build_cmsn_structure(mst.CmsnConfig(classes=17))
    assert len(model.bank) == 12
    assert model.stage_input_width(2) == 204
    assert model.stage_input_width(3) == 68
    assert len(model.stages) == 3
    for stage in model.stages:
        assert len(stage.networks) == 68
    assert model.stages[0].networks[0].input_shape == (204,)
    assert model.stages[1].networks[0].input_shape == (68,)


def test_structure_class_extension_is_incremental():
    # one more class: +1 softmax width, +G networks per stage, and the
    # class-major slices of existing classes stay where they were
    small = mst.build_cmsn_structure(toy_config(classes=3))
    big = mst.build_cmsn_structure(toy_config(classes=4, arch=tiny_arch(4)))
    g = small.config.group_size
    assert len(big.stages[0].networks) - len(small.stages[0].networks) == g
    assert big.bank.members[0].output_shape[0] == small.bank.members[0].output_shape[0] + 1
    for c in range(small.config.classes):
        assert slice(c * g, (c + 1) * g) == slice(c * g, (c + 1) * g)
    # stage >= 3 input width grows only by the appended block
    assert big.stage_input_width(3) == small.stage_input_width(3) + g


def test_stage_forward_order_is_class_major():
    cfg = toy_config(classes=2)
    model = mst.build_cmsn_structure(cfg)
    x, labels = toy_data(2, 2)
    feats = np.random.default_rng(0).normal(size=(4, cfg.members * cfg.classes))
    out = mst.stage_forward(model.stages[0], feats)
    assert out.shape == (4, cfg.classes * cfg.group_size)
    for idx, net in enumerate(model.stages[0].networks):
        single, _ = nn.forward(net, feats, "infer")
        np.testing.assert_array_equal(out[:, idx], single[:, 0])


# ---------------------------------------------------------------------------
# stage training
# ---------------------------------------------------------------------------

def test_train_stage_identical_seeds_identical_networks():
    spec = mst.StageSpec(index=2, classes=2, group_size=2, target_error=0.05)
    rng = np.random.default_rng(1)
    inputs = rng.normal(size=(10, 6))
    labels = np.array([0, 0, 0, 0, 0, 1, 1, 1, 1, 1])
    stage, _ = mst.train_stage(spec, inputs, labels, seeds=[7, 7, 3, 3])
    assert np.array_equal(stage.networks[0].get_vector(), stage.networks[1].get_vector())
    assert np.array_equal(stage.networks[2].get_vector(), stage.networks[3].get_vector())
    assert not np.array_equal(stage.networks[0].get_vector(), stage.networks[2].get_vector())


def test_train_stage_reaches_target_on_separable_input():
    # oracle run pinned: both class networks hit the stage-2 target within 3 epochs
    spec = mst.StageSpec(index=2, classes=2, group_size=1, target_error=0.05)
    rng = np.random.default_rng(2)
    x0 = rng.normal(loc=-1, scale=0.2, size=(10, 4))
    x1 = rng.normal(loc=+1, scale=0.2, size=(10, 4))
    inputs = np.vstack([x0, x1])
    labels = np.array([0] * 10 + [1] * 10)
    stage, histories = mst.train_stage(spec, inputs, labels, seeds=[0, 1])
    for hist in histories:
        assert hist[-1]["train_error"] < 0.05
        assert len(hist) <= 3


def test_train_stage_seed_count_validation():
    spec = mst.StageSpec(index=2, classes=2, group_size=2)
    with pytest.raises(ValueError, match="4 seeds"):
        mst.train_stage(spec, np.zeros((4, 3)), np.array([0, 0, 1, 1]), seeds=[1, 2])


def test_train_stage_member_constant_zero_target():
    # a network trained toward all-zero targets should sit near 0 on its inputs
    spec = mst.StageSpec(index=2, classes=2, group_size=1, target_error=0.001)
    rng = np.random.default_rng(3)
    inputs = rng.normal(size=(12, 5))
    labels = np.ones(12, dtype=int)  # class 0 never fires
    stage, _ = mst.train_stage(spec, inputs, labels, seeds=[4, 5])
    out, _ = nn.forward(stage.networks[0], inputs, "infer")
    assert np.max(np.abs(out)) < 0.25


# ---------------------------------------------------------------------------
# end-to-end multistage training
# ---------------------------------------------------------------------------

def test_train_cmsn_minimal_two_stage_model():
    cfg = toy_config(classes=2, stages=2, schedule=(0.05,))
    x, labels = toy_data(2, 6, seed=4)
    model, histories = mst.train_cmsn(x, labels, cfg)
    assert len(model.stages) == 1
    preds = mst.predict_labels(model, x)
    accuracy = float(np.mean(preds == labels))
    assert accuracy > 0.5  # oracle run pinned: 1.0 on this toy problem


def test_train_cmsn_stage_errors_non_increasing_on_toy_set():
    cfg = toy_config(classes=2, stages=3, schedule=(0.05, 0.02))
    x, labels = toy_data(2, 6, seed=5)
    model, histories = mst.train_cmsn(x, labels, cfg)
    stage_mses = [float(np.mean([h[-1]["train_error"] for h in histories[s]]))
                  for s in (2, 3)]
    assert stage_mses[1] <= stage_mses[0] + 1e-6


def test_train_cmsn_is_seed_reproducible():
    cfg = toy_config(classes=2)
    x, labels = toy_data(2, 3, seed=6)
    m1, _ = mst.train_cmsn(x, labels, cfg)
    m2, _ = mst.train_cmsn(x, labels, toy_config(classes=2))
    for a, b in zip(m1.bank.members, m2.bank.members):
        assert np.array_equal(a.get_vector(), b.get_vector())
    for sa, sb in zip(m1.stages, m2.stages):
        for na, nb in zip(sa.networks, sb.networks):
            assert np.array_equal(na.get_vector(), nb.get_vector())


def test_train_cmsn_requires_two_samples_per_class():
    cfg = toy_config(classes=2)
    x, labels = toy_data(2, 2)
    with pytest.raises(ValueError, match="2 samples"):
        mst.train_cmsn(x[:3], labels[:3], cfg)


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------

def test_predict_group_averaging_hand_example():
    cfg = toy_config(classes=2, group_size=4, schedule=(0.05, 0.02))
    model = mst.build_cmsn_structure(cfg)
    # overwrite final-stage outputs by constant-bias networks
    final = model.stages[-1]
    wanted = [0.9, 1.0, 0.8, 0.9, 0.1, 0.0, 0.2, 0.1]
    for net, value in zip(final.networks, wanted):
        for layer, block in zip(net.layers, net.params):
            if block:
                block["W"][:] = 0.0
                block["b"][:] = 0.0
        net.params[-1]["b"][:] = value
    feats = np.zeros((1, cfg.classes * cfg.group_size))
    out = mst.stage_forward(final, feats)
    grouped = out.reshape(1, 2, 4).mean(axis=2)
    np.testing.assert_allclose(grouped[0], [0.9, 0.1], atol=1e-12)


def test_class_scores_tie_break_lowest_index():
    scores = mst.ClassScores(np.array([0.4, 0.4, 0.1]))
    assert scores.label == 0


def test_predict_shapes_and_tie_break():
    cfg = toy_config(classes=2)
    x, labels = toy_data(2, 3, seed=8)
    model, _ = mst.train_cmsn(x, labels, cfg)
    scores = mst.predict(model, x[0])
    assert scores.scores.shape == (2,)
    matrix = mst.predict_scores(model, x)
    assert matrix.shape == (x.shape[0], 2)
