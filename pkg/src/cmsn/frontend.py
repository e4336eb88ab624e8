"""Stage-1 convolutional feature bank.

A bank is K independently seeded CNNs of the same architecture, each
trained for a fixed small number of epochs (no early stopping) with Adam on
cross-entropy.  Inference concatenates the K softmax vectors into one
K*C-wide feature row: member-major, class-minor, every C-block a proper
probability distribution.
"""

from dataclasses import dataclass, field

import numpy as np

from . import nn, optim
from .parallel import WorkerPool


@dataclass
class CnnArch:
    """Four conv/batchnorm/relu/maxpool blocks, then dropout/dense/dense/softmax.

    ``channel_layout`` is ``"flat"`` (9,600 x 1 signal, the default) or
    ``"stacked"`` (1,600 x 6: per-angle real/imag as channels).
    """
    classes: int
    input_len: int = 9600
    channels: int = 1
    conv_filters: tuple = (8, 16, 32, 64)
    kernel: int = 7
    conv_strides: tuple = (1, 1, 1, 1)
    pool_widths: tuple = (4, 4, 4, 4)
    dropout: float = 0.5
    dense_units: int = 64
    pad: bool = False
    channel_layout: str = "flat"
    bn_momentum: float = 0.9

    def __post_init__(self):
        n = len(self.conv_filters)
        if n != 4:
            raise ValueError("architecture uses exactly 4 inner blocks")
        if len(self.conv_strides) != n or len(self.pool_widths) != n:
            raise ValueError("conv_strides and pool_widths must match conv_filters")
        if self.channel_layout not in ("flat", "stacked"):
            raise ValueError("channel_layout must be 'flat' or 'stacked'")

    @property
    def input_shape(self):
        return (self.input_len, self.channels)

    def layers(self):
        specs = []
        for f, s, p in zip(self.conv_filters, self.conv_strides, self.pool_widths):
            specs += [nn.Conv1d(f, self.kernel, stride=s, pad=self.pad),
                      nn.BatchNorm(momentum=self.bn_momentum), nn.Relu(),
                      nn.MaxPool1d(p)]
        specs += [nn.Dropout(self.dropout), nn.Dense(self.dense_units),
                  nn.Dense(self.classes), nn.Softmax()]
        return specs


def build_cnn(arch, seed):
    """Seeded network realizing ``arch``; same seed gives bit-identical weights.

    Architectures whose pooling chain collapses the signal below one sample
    are rejected with the offending inner-block index.
    """
    try:
        return nn.build_network(arch.input_shape, arch.layers(), seed=seed)
    except nn.ShapeError as exc:
        msg = str(exc)
        if msg.startswith("layer "):
            layer_idx = int(msg.split()[1])
            raise nn.ShapeError(f"inner block {layer_idx // 4 + 1}: {msg}") from None
        raise


def feature_width(arch, members):
    return members * arch.classes


@dataclass
class CnnBank:
    """K trained CNNs sharing one architecture, with pairwise-distinct seeds."""
    arch: CnnArch
    members: list
    seeds: list = field(default_factory=list)

    def __post_init__(self):
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("bank seeds must be pairwise distinct")
        if len(self.members) != len(self.seeds):
            raise ValueError("one seed per member required")

    def __len__(self):
        return len(self.members)


def _train_member(job):
    arch, x, labels, seed, epochs, cfg = job
    net = build_cnn(arch, seed)
    x = np.asarray(x, dtype=np.float64).reshape((-1,) + arch.input_shape)
    targets = nn.one_hot(labels, arch.classes)
    net, history = optim.train(
        net, x, targets, "adam",
        optim.StopCriterion(max_epochs=epochs),
        seed=seed, loss_kind="cross_entropy", adam_config=cfg)
    return net, history


def train_bank(arch, x, labels, seeds, epochs=3, adam_config=None, pool=None):
    """Train K independent CNNs; returns ``(CnnBank, histories)``.

    Members are pure functions of their seeds, so training order and worker
    count cannot change the result.  A member whose loss turns non-finite
    fails the whole bank with its index and seed named.
    """
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= arch.classes:
        raise ValueError(f"labels must lie in [0, {arch.classes})")
    if np.unique(labels).size < arch.classes:
        raise ValueError("every class needs at least one training sample")
    if len(set(seeds)) != len(seeds):
        raise ValueError("bank seeds must be pairwise distinct")
    pool = pool or WorkerPool(1)
    cfg = adam_config or optim.AdamConfig()
    jobs = [(arch, x, labels, seed, epochs, cfg) for seed in seeds]
    try:
        results = pool.map(_train_member, jobs)
    except nn.NumericsError as exc:
        raise RuntimeError(f"bank member training diverged: {exc}") from exc
    members, histories = zip(*results)
    return CnnBank(arch=arch, members=list(members), seeds=list(seeds)), list(histories)


def extract_features(bank, x):
    """Concatenated softmax outputs of all bank members.

    ``x`` is one fingerprint or a matrix of them; the result is
    ``(n, K*C)`` ordered member-major / class-minor, every C-block summing
    to one.  Inference is side-effect free (running statistics frozen).
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None]
    n = x.shape[0]
    shaped = x.reshape((n,) + bank.arch.input_shape)
    blocks = []
    for net in bank.members:
        out, _ = nn.forward(net, shaped, "infer")
        blocks.append(out)
    feats = np.hstack(blocks)
    return feats[0] if single else feats
