"""Reference methods the multistage model is compared against.

CNN: one stage-1-architecture network, Adam, capped epochs, 70/30
stratified validation split, weights taken from the epoch with minimal
validation error.  FCN: three dense layers (200/200/C) with softmax head
and L2 regularization, same validation protocol with a 100-epoch cap.
The committees train 12 such members from different seeds and majority-vote
their labels (lowest class index on ties).
"""

from dataclasses import dataclass

import numpy as np

from . import nn, optim
from .frontend import build_cnn
from .mst import derive_seed
from .parallel import WorkerPool

DEFAULT_COMMITTEE_SIZE = 12
DEFAULT_VAL_FRACTION = 0.3
CNN_MAX_EPOCHS = 50
FCN_MAX_EPOCHS = 100
FCN_HIDDEN = (200, 200)
FCN_L2 = 1e-4


def stratified_split(labels, val_fraction, seed):
    """Seeded per-class split; returns ``(train_idx, val_idx)``.

    Every class keeps at least one sample on each side; a single-sample
    class cannot be split and is reported by name.
    """
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train, val = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if idx.size < 2:
            raise ValueError(f"class {c} has one sample; a validation split needs two")
        n_val = int(np.clip(round(idx.size * val_fraction), 1, idx.size - 1))
        perm = rng.permutation(idx)
        val.append(perm[:n_val])
        train.append(perm[n_val:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(val))


def train_cnn_baseline(x, labels, arch, seed, max_epochs=CNN_MAX_EPOCHS,
                       patience=None, val_fraction=DEFAULT_VAL_FRACTION,
                       adam_config=None, split_seed=None):
    """Validation-early-stopped CNN; returns ``(net, history)``.

    The returned weights are from the epoch with minimal validation error;
    history has one entry per epoch actually run (at most ``max_epochs``).
    ``split_seed`` pins the 70/30 split independently of the weight seed
    (committees share one split so members differ only in initialization).
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    if split_seed is None:
        split_seed = derive_seed(seed, 97)
    train_idx, val_idx = stratified_split(labels, val_fraction, split_seed)
    shaped = x.reshape((-1,) + arch.input_shape)
    targets = nn.one_hot(labels, arch.classes)
    net = build_cnn(arch, seed)
    return optim.train(
        net, shaped[train_idx], targets[train_idx], "adam",
        optim.StopCriterion(max_epochs=max_epochs, patience=patience),
        seed=seed, loss_kind="cross_entropy",
        val=(shaped[val_idx], targets[val_idx]),
        adam_config=adam_config or optim.AdamConfig())


def fcn_baseline_layers(classes, hidden=FCN_HIDDEN):
    layers = []
    for width in hidden:
        layers += [nn.Dense(width), nn.Relu()]
    layers += [nn.Dense(classes), nn.Softmax()]
    return layers


def train_fcn_baseline(x, labels, classes, seed, hidden=FCN_HIDDEN,
                       max_epochs=FCN_MAX_EPOCHS, l2=FCN_L2, patience=None,
                       val_fraction=DEFAULT_VAL_FRACTION, adam_config=None,
                       split_seed=None):
    """Dense baseline on raw fingerprints (no feature extraction), L2-regularized."""
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    if split_seed is None:
        split_seed = derive_seed(seed, 97)
    train_idx, val_idx = stratified_split(labels, val_fraction, split_seed)
    targets = nn.one_hot(labels, classes)
    net = nn.build_network((x.shape[1],), fcn_baseline_layers(classes, hidden), seed=seed)
    cfg = adam_config or optim.AdamConfig()
    cfg = optim.AdamConfig(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                           eps=cfg.eps, batch_size=cfg.batch_size, l2=l2)
    return optim.train(
        net, x[train_idx], targets[train_idx], "adam",
        optim.StopCriterion(max_epochs=max_epochs, patience=patience),
        seed=seed, loss_kind="cross_entropy",
        val=(x[val_idx], targets[val_idx]), adam_config=cfg)


@dataclass
class CommitteeModel:
    """M identically-architected members combined by majority vote."""
    kind: str                 # "cnn" or "fcn"
    members: list
    seeds: list
    input_shape: tuple

    def __post_init__(self):
        if not self.members:
            raise ValueError("committee needs at least one member")

    def __len__(self):
        return len(self.members)


def committee_vote(member_labels):
    """Majority vote; ties go to the lowest class index."""
    member_labels = np.asarray(member_labels, dtype=np.int64)
    if member_labels.size == 0:
        raise ValueError("cannot vote over an empty label list")
    if member_labels.min() < 0:
        raise ValueError("labels must be non-negative class indices")
    return int(np.bincount(member_labels).argmax())


def _train_cnn_member(job):
    x, labels, arch, seed, max_epochs, patience, cfg, split_seed = job
    return train_cnn_baseline(x, labels, arch, seed, max_epochs=max_epochs,
                              patience=patience, adam_config=cfg,
                              split_seed=split_seed)


def _train_fcn_member(job):
    x, labels, classes, seed, hidden, max_epochs, patience, l2, cfg, split_seed = job
    return train_fcn_baseline(x, labels, classes, seed, hidden=hidden,
                              max_epochs=max_epochs, patience=patience,
                              l2=l2, adam_config=cfg, split_seed=split_seed)


def train_cnn_committee(x, labels, arch, seeds, max_epochs=CNN_MAX_EPOCHS,
                        patience=None, adam_config=None, pool=None):
    """Members share one 70/30 split and differ only in initial conditions."""
    pool = pool or WorkerPool(1)
    seeds = list(seeds)
    split_seed = derive_seed(seeds[0], 97)
    jobs = [(x, labels, arch, s, max_epochs, patience, adam_config, split_seed)
            for s in seeds]
    results = pool.map(_train_cnn_member, jobs)
    members = [net for net, _ in results]
    return (CommitteeModel(kind="cnn", members=members, seeds=seeds,
                           input_shape=arch.input_shape),
            [hist for _, hist in results])


def train_fcn_committee(x, labels, classes, seeds, hidden=FCN_HIDDEN,
                        max_epochs=FCN_MAX_EPOCHS, patience=None, l2=FCN_L2,
                        adam_config=None, pool=None):
    """Members share one 70/30 split and differ only in initial conditions."""
    pool = pool or WorkerPool(1)
    seeds = list(seeds)
    split_seed = derive_seed(seeds[0], 97)
    jobs = [(x, labels, classes, s, hidden, max_epochs, patience, l2,
             adam_config, split_seed) for s in seeds]
    results = pool.map(_train_fcn_member, jobs)
    members = [net for net, _ in results]
    return (CommitteeModel(kind="fcn", members=members, seeds=seeds,
                           input_shape=(np.asarray(x).shape[1],)),
            [hist for _, hist in results])


def network_classify(net, x, input_shape=None):
    """Argmax labels from one softmax-headed network."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if input_shape and len(input_shape) > 1:
        x = x.reshape((-1,) + tuple(input_shape))
    out, _ = nn.forward(net, x, "infer")
    return np.argmax(out, axis=1)


def committee_classify(model, x, combine="vote"):
    """Labels for ``x`` by member vote (default) or softmax-score averaging."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    shaped = x.reshape((-1,) + tuple(model.input_shape)) if len(model.input_shape) > 1 else x
    if combine == "vote":
        votes = np.stack([network_classify(m, shaped) for m in model.members])
        return np.array([committee_vote(votes[:, i]) for i in range(votes.shape[1])])
    if combine == "average":
        scores = np.mean([nn.forward(m, shaped, "infer")[0] for m in model.members], axis=0)
        return np.argmax(scores, axis=1)
    raise ValueError(f"unknown combine rule {combine!r}")
