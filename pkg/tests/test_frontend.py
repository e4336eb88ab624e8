import numpy as np
import pytest

from cmsn import frontend, nn, optim
from cmsn.parallel import WorkerPool


def tiny_arch(classes=2):
    return frontend.CnnArch(classes=classes, input_len=64,
                            conv_filters=(2, 3, 4, 4), kernel=3,
                            pool_widths=(2, 2, 2, 1), dense_units=8)


def toy_data(classes, per_class, input_len=64, seed=0):
    rng = np.random.default_rng(seed)
    rows, labels = [], []
    for c in range(classes):
        center = np.zeros(input_len)
        center[c * 5:(c * 5) + 5] = 3.0
        for _ in range(per_class):
            rows.append(center + rng.normal(scale=0.3, size=input_len))
            labels.append(c)
    return np.array(rows), np.array(labels)


# ---------------------------------------------------------------------------
# architecture arithmetic
# ---------------------------------------------------------------------------

def test_default_arch_softmax_width_17():
    net = frontend.build_cnn(frontend.CnnArch(classes=17), seed=0)
    assert net.output_shape == (17,)


def test_build_cnn_seed_determinism():
    arch = tiny_arch()
    a = frontend.build_cnn(arch, seed=5)
    b = frontend.build_cnn(arch, seed=5)
    assert np.array_equal(a.get_vector(), b.get_vector())


def test_default_shape_chain_matches_shape_oracle():
    # independent shape calculator for the default stack
    arch = frontend.CnnArch(classes=17)
    length = arch.input_len
    for stride, pool in zip(arch.conv_strides, arch.pool_widths):
        length = (length - arch.kernel) // stride + 1
        length //= pool
    assert length == 35  # 9600 -> 9594/4 -> 2392/4 -> 592/4 -> 142/4

    net = frontend.build_cnn(arch, seed=0)
    # shape entering the first dense layer: (length, filters) after block 4
    assert net.output_shapes[15] == (length, arch.conv_filters[-1])
    pre_dense = int(np.prod(net.output_shapes[15]))
    assert pre_dense == length * arch.conv_filters[-1] == 2240


def test_build_cnn_rejects_collapsed_chain_with_block_index():
    arch = frontend.CnnArch(classes=3, input_len=40, conv_filters=(2, 2, 2, 2),
                            kernel=3, pool_widths=(4, 4, 4, 4), dense_units=4)
    with pytest.raises(nn.ShapeError, match="inner block"):
        frontend.build_cnn(arch, seed=0)


def test_stacked_channel_layout():
    arch = frontend.CnnArch(classes=4, input_len=1600, channels=6,
                            channel_layout="stacked")
    net = frontend.build_cnn(arch, seed=1)
    assert net.input_shape == (1600, 6)
    assert net.output_shape == (4,)


# ---------------------------------------------------------------------------
# bank training
# ---------------------------------------------------------------------------

def test_train_bank_structure_and_feature_width():
    arch = tiny_arch(classes=3)
    x, labels = toy_data(3, 2)
    seeds = list(range(12))
    bank, histories = frontend.train_bank(arch, x, labels, seeds, epochs=1)
    assert len(bank) == 12 and len(histories) == 12
    assert all(m.output_shape == (3,) for m in bank.members)
    feats = frontend.extract_features(bank, x)
    assert feats.shape == (6, 36)
    assert frontend.feature_width(arch, 12) == 36


def test_train_bank_loss_improves_on_toy_problem():
    arch = tiny_arch(classes=2)
    x, labels = toy_data(2, 8)
    bank, histories = frontend.train_bank(
        arch, x, labels, seeds=[0], epochs=3,
        adam_config=optim.AdamConfig(lr=5e-3))
    init = frontend.build_cnn(arch, seed=0)
    out, _ = nn.forward(init, x.reshape(-1, 64, 1), "infer")
    init_loss = nn.loss("cross_entropy", out, nn.one_hot(labels, 2))
    assert histories[0][-1]["train_error"] < init_loss


def test_train_bank_member_permutation_equivariance():
    arch = tiny_arch(classes=2)
    x, labels = toy_data(2, 3)
    bank_a, _ = frontend.train_bank(arch, x, labels, seeds=[3, 9], epochs=1)
    bank_b, _ = frontend.train_bank(arch, x, labels, seeds=[9, 3], epochs=1)
    assert np.array_equal(bank_a.members[0].get_vector(), bank_b.members[1].get_vector())
    assert np.array_equal(bank_a.members[1].get_vector(), bank_b.members[0].get_vector())


def test_train_bank_bit_identical_across_worker_counts():
    arch = tiny_arch(classes=2)
    x, labels = toy_data(2, 3)
    serial, _ = frontend.train_bank(arch, x, labels, seeds=[1, 2, 3], epochs=1,
                                    pool=WorkerPool(1))
    forked, _ = frontend.train_bank(arch, x, labels, seeds=[1, 2, 3], epochs=1,
                                    pool=WorkerPool(2))
    for a, b in zip(serial.members, forked.members):
        assert np.array_equal(a.get_vector(), b.get_vector())


def test_train_bank_validates_inputs():
    arch = tiny_arch(classes=3)
    x, labels = toy_data(2, 2)  # class 2 missing
    with pytest.raises(ValueError, match="every class"):
        frontend.train_bank(arch, x, labels, seeds=[0])
    x3, labels3 = toy_data(3, 2)
    with pytest.raises(ValueError, match="distinct"):
        frontend.train_bank(arch, x3, labels3, seeds=[4, 4])
    with pytest.raises(ValueError, match="labels"):
        frontend.train_bank(arch, x3, labels3 + 5, seeds=[0])


def test_train_bank_reports_member_divergence(monkeypatch):
    arch = tiny_arch(classes=2)
    x, labels = toy_data(2, 2)

    def explode(job):
        raise nn.NumericsError("non-finite gradients; Adam step rejected")

    monkeypatch.setattr(frontend, "_train_member", explode)
    with pytest.raises(RuntimeError, match="diverged"):
        frontend.train_bank(arch, x, labels, seeds=[0, 1])


# ---------------------------------------------------------------------------
# feature extraction
# ---------------------------------------------------------------------------

def untrained_bank(arch, seeds):
    return frontend.CnnBank(arch=arch, members=[frontend.build_cnn(arch, s) for s in seeds],
                            seeds=list(seeds))


def test_extract_features_blocks_are_distributions():
    arch = tiny_arch(classes=5)
    bank = untrained_bank(arch, seeds=range(4))
    x, _ = toy_data(5, 2)
    feats = frontend.extract_features(bank, x)
    assert feats.shape == (10, 20)
    blocks = feats.reshape(10, 4, 5)
    np.testing.assert_allclose(blocks.sum(axis=2), 1.0, atol=1e-9)
    assert np.all(blocks > 0) and np.all(blocks < 1)


def test_extract_features_single_member_distribution():
    arch = tiny_arch(classes=2)
    bank = untrained_bank(arch, seeds=[0])
    x, _ = toy_data(2, 2)
    feats = frontend.extract_features(bank, x)
    np.testing.assert_allclose(feats.sum(axis=1), 1.0, atol=1e-9)


def test_extract_features_member_order_is_block_order():
    arch = tiny_arch(classes=3)
    bank = untrained_bank(arch, seeds=[0, 1])
    swapped = frontend.CnnBank(arch=arch, members=bank.members[::-1], seeds=[1, 0])
    x, _ = toy_data(3, 1)
    a = frontend.extract_features(bank, x)
    b = frontend.extract_features(swapped, x)
    np.testing.assert_array_equal(a[:, :3], b[:, 3:])
    np.testing.assert_array_equal(a[:, 3:], b[:, :3])


def test_extract_features_is_side_effect_free():
    arch = tiny_arch(classes=2)
    bank = untrained_bank(arch, seeds=[0])
    x, _ = toy_data(2, 2)
    before = [b["run_mean"].copy() for b in bank.members[0].params if b and "run_mean" in b]
    frontend.extract_features(bank, x)
    after = [b["run_mean"] for b in bank.members[0].params if b and "run_mean" in b]
    for a, b in zip(before, after):
        assert np.array_equal(a, b)


def test_extract_features_length_mismatch():
    arch = tiny_arch(classes=2)
    bank = untrained_bank(arch, seeds=[0])
    with pytest.raises(ValueError):
        frontend.extract_features(bank, np.zeros(63))
