"""Multistage ensemble engine.

Stage 1 is the convolutional bank; stages 2..S are ensembles of small
per-class dense networks (two tanh hidden layers, one linear output)
trained with Levenberg-Marquardt under a strictly decreasing target-error
schedule ("very early stopping").  Each stage consumes the previous stage's
concatenated outputs; the final stage's per-class groups are averaged into
class scores.

Layout contracts: stage-2 input is the bank feature vector (member-major,
K*C wide); stage s >= 3 input is the previous stage's output (class-major,
C*G wide).  Appending a class therefore appends G networks per stage and
leaves every existing class's input slice in place.
"""

from dataclasses import dataclass, field

import numpy as np

from . import nn, optim
from .frontend import CnnArch, CnnBank, build_cnn, extract_features, train_bank
from .parallel import WorkerPool

DEFAULT_SCHEDULE = (0.05, 0.02, 0.005)


def derive_seed(base, *path):
    """Deterministic child seed for a namespaced position (stage, class, ...)."""
    ss = np.random.SeedSequence([int(base)] + [int(p) for p in path])
    return int(ss.generate_state(1)[0])


@dataclass(frozen=True)
class StageSpec:
    """One FCN stage: C*G small dense networks and their stopping target."""
    index: int                # stage number; the bank is stage 1
    classes: int
    group_size: int = 4
    hidden: tuple = (10, 10)
    epochs: int = 3
    target_error: float = 0.05

    def __post_init__(self):
        if self.group_size < 1:
            raise ValueError("group size must be >= 1")
        if self.index < 2:
            raise ValueError("FCN stages are numbered from 2")


@dataclass
class CmsnConfig:
    classes: int
    members: int = 12            # stage-1 bank size
    group_size: int = 4          # FCNs per class in each stage
    stages: int = 4              # total stages including the bank
    schedule: tuple = DEFAULT_SCHEDULE   # stage 2..S target errors
    cnn_epochs: int = 3
    fcn_epochs: int = 3
    hidden: tuple = (10, 10)
    arch: CnnArch | None = None
    adam: optim.AdamConfig = field(default_factory=optim.AdamConfig)
    lm: optim.LmConfig = field(default_factory=optim.LmConfig)
    seed: int = 0

    def __post_init__(self):
        if self.stages < 2:
            raise ValueError("need at least 2 stages (bank + one FCN stage)")
        if len(self.schedule) != self.stages - 1:
            raise ValueError(
                f"schedule needs {self.stages - 1} entries for {self.stages} stages")
        if any(b >= a for a, b in zip(self.schedule, self.schedule[1:])):
            raise ValueError("stage target errors must strictly decrease")
        if self.arch is None:
            self.arch = CnnArch(classes=self.classes)
        if self.arch.classes != self.classes:
            raise ValueError("architecture class count must match the config")

    def stage_spec(self, index):
        return StageSpec(index=index, classes=self.classes,
                         group_size=self.group_size, hidden=self.hidden,
                         epochs=self.fcn_epochs,
                         target_error=self.schedule[index - 2])


@dataclass
class Stage:
    spec: StageSpec
    networks: list   # class-major: class 0 groups 0..G-1, class 1 groups ...

    def __post_init__(self):
        expected = self.spec.classes * self.spec.group_size
        if len(self.networks) != expected:
            raise ValueError(f"stage {self.spec.index} needs {expected} networks")


@dataclass
class ClassScores:
    """Per-class responses; the label is the argmax (lowest index on ties)."""
    scores: np.ndarray

    @property
    def label(self):
        return int(np.argmax(self.scores))


@dataclass
class CmsnModel:
    config: CmsnConfig
    bank: CnnBank
    stages: list

    def stage_input_width(self, index):
        """Expected input width for stage ``index`` (2-based)."""
        if index == 2:
            return self.config.members * self.config.classes
        return self.config.classes * self.config.group_size


def fcn_layers(hidden):
    layers = []
    for width in hidden:
        layers += [nn.Dense(width), nn.Tanh()]
    layers.append(nn.Dense(1))
    return layers


def build_fcn(input_width, hidden, seed):
    return nn.build_network((input_width,), fcn_layers(hidden), seed=seed)


def build_stage_targets(labels, cls):
    """Binary fire/no-fire target per sample for one class."""
    labels = np.asarray(labels)
    return (labels == cls).astype(np.float64)


def _train_stage_member(job):
    x, targets, width, hidden, seed, epochs, target_error, lm_cfg = job
    net = build_fcn(width, hidden, seed)
    net, history = optim.train(
        net, x, targets[:, None], "lm",
        optim.StopCriterion(max_epochs=epochs, target_error=target_error),
        loss_kind="mse", lm_config=lm_cfg)
    return net, history


def train_stage(spec, inputs, labels, seeds, lm_config=None, pool=None):
    """Train one stage's C*G networks independently; returns ``(Stage, histories)``.

    ``seeds`` is class-major, one per network.  Any member failure aborts
    the stage with the class/group named.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    labels = np.asarray(labels)
    expected = spec.classes * spec.group_size
    if len(seeds) != expected:
        raise ValueError(f"need {expected} seeds (one per network)")
    lm_cfg = lm_config or optim.LmConfig()
    width = inputs.shape[1]
    jobs = []
    for c in range(spec.classes):
        targets = build_stage_targets(labels, c)
        for g in range(spec.group_size):
            seed = seeds[c * spec.group_size + g]
            jobs.append((inputs, targets, width, spec.hidden, seed,
                         spec.epochs, spec.target_error, lm_cfg))
    pool = pool or WorkerPool(1)
    try:
        results = pool.map(_train_stage_member, jobs)
    except Exception as exc:
        raise RuntimeError(f"stage {spec.index} member training failed: {exc}") from exc
    networks = [net for net, _ in results]
    histories = [hist for _, hist in results]
    return Stage(spec=spec, networks=networks), histories


def stage_forward(stage, x):
    """Concatenated member outputs, class-major; ``(n, C*G)`` for batch input."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None]
    cols = []
    for net in stage.networks:
        out, _ = nn.forward(net, x, "infer")
        cols.append(out[:, 0])
    result = np.column_stack(cols)
    return result[0] if single else result


def train_cmsn(x, labels, config, pool=None):
    """Train the full multistage model; returns ``(CmsnModel, stage_histories)``.

    Stage 1 trains the bank; each later stage trains on the previous
    stage's outputs over the training set.  Everything derives its seed
    from ``config.seed`` through :func:`derive_seed`, so a fixed config
    reproduces the model bit-exactly at any worker count.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    counts = np.bincount(labels, minlength=config.classes)
    if np.any(counts < 2):
        raise ValueError("need at least 2 samples per class")
    pool = pool or WorkerPool(1)

    bank_seeds = [derive_seed(config.seed, 1, k) for k in range(config.members)]
    bank, bank_hist = train_bank(config.arch, x, labels, bank_seeds,
                                 epochs=config.cnn_epochs,
                                 adam_config=config.adam, pool=pool)
    histories = {1: bank_hist}
    feats = extract_features(bank, x)

    stages = []
    for index in range(2, config.stages + 1):
        spec = config.stage_spec(index)
        seeds = [derive_seed(config.seed, index, c, g)
                 for c in range(config.classes) for g in range(config.group_size)]
        try:
            stage, hist = train_stage(spec, feats, labels, seeds,
                                      lm_config=config.lm, pool=pool)
        except RuntimeError as exc:
            raise RuntimeError(f"multistage training aborted at stage {index}") from exc
        stages.append(stage)
        histories[index] = hist
        feats = stage_forward(stage, feats)

    return CmsnModel(config=config, bank=bank, stages=stages), histories


def build_cmsn_structure(config):
    """Untrained model with the exact production layout.

    Used for structural checks and as the skeleton that persistence fills
    when loading saved parameters.
    """
    bank = CnnBank(
        arch=config.arch,
        members=[build_cnn(config.arch, derive_seed(config.seed, 1, k))
                 for k in range(config.members)],
        seeds=[derive_seed(config.seed, 1, k) for k in range(config.members)])
    stages = []
    width = config.members * config.classes
    for index in range(2, config.stages + 1):
        spec = config.stage_spec(index)
        nets = [build_fcn(width, config.hidden, derive_seed(config.seed, index, c, g))
                for c in range(config.classes) for g in range(config.group_size)]
        stages.append(Stage(spec=spec, networks=nets))
        width = config.classes * config.group_size
    return CmsnModel(config=config, bank=bank, stages=stages)


def predict_scores(model, x):
    """Class-score matrix ``(n, C)``: final-stage group means, unclipped."""
    feats = extract_features(model.bank, np.atleast_2d(np.asarray(x, dtype=np.float64)))
    for stage in model.stages:
        feats = stage_forward(stage, feats)
    n = feats.shape[0]
    grouped = feats.reshape(n, model.config.classes, model.config.group_size)
    return grouped.mean(axis=2)


def predict(model, fingerprint):
    """Scores for one fingerprint; ``.label`` is argmax with lowest-index ties."""
    return ClassScores(predict_scores(model, fingerprint)[0])


def predict_labels(model, x):
    return np.argmax(predict_scores(model, x), axis=1)
