"""Method adapters: one train/classify protocol over all five approaches.

Each adapter owns a frozen hyperparameter configuration; the per-trial seed
arrives through ``train`` so the evaluation harness fully controls initial
conditions.  ``describe()`` feeds the report's config hash.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import baselines, mst, optim
from .frontend import CnnArch
from .parallel import WorkerPool
from .persist import arch_to_json

METHOD_IDS = ("cmsn", "cnn", "cnn-committee", "fcn", "fcn-committee")


@dataclass
class CmsnMethod:
    config: mst.CmsnConfig
    workers: int = 1
    method_id: str = "cmsn"

    def describe(self):
        from .persist import cmsn_config_to_json
        d = cmsn_config_to_json(self.config)
        d.pop("seed", None)  # the trial seed is not part of the method identity
        return {"method": self.method_id, "config": d}

    def train(self, x, labels, seed):
        config = replace(self.config, seed=seed, arch=self.config.arch)
        model, _ = mst.train_cmsn(x, labels, config, pool=WorkerPool(self.workers))
        return model

    def classify(self, model, x):
        return mst.predict_labels(model, x)


@dataclass
class CnnMethod:
    arch: CnnArch
    max_epochs: int = baselines.CNN_MAX_EPOCHS
    patience: int | None = None
    adam: optim.AdamConfig = field(default_factory=optim.AdamConfig)
    method_id: str = "cnn"

    def describe(self):
        return {"method": self.method_id, "arch": arch_to_json(self.arch),
                "max_epochs": self.max_epochs, "patience": self.patience,
                "adam": vars(self.adam)}

    def train(self, x, labels, seed):
        net, _ = baselines.train_cnn_baseline(
            x, labels, self.arch, seed, max_epochs=self.max_epochs,
            patience=self.patience, adam_config=self.adam)
        return net

    def classify(self, net, x):
        return baselines.network_classify(net, x, input_shape=self.arch.input_shape)


@dataclass
class CnnCommitteeMethod:
    arch: CnnArch
    members: int = baselines.DEFAULT_COMMITTEE_SIZE
    max_epochs: int = baselines.CNN_MAX_EPOCHS
    patience: int | None = None
    adam: optim.AdamConfig = field(default_factory=optim.AdamConfig)
    combine: str = "vote"
    workers: int = 1
    method_id: str = "cnn-committee"

    def describe(self):
        return {"method": self.method_id, "arch": arch_to_json(self.arch),
                "members": self.members, "max_epochs": self.max_epochs,
                "patience": self.patience, "adam": vars(self.adam),
                "combine": self.combine}

    def train(self, x, labels, seed):
        seeds = [mst.derive_seed(seed, k) for k in range(self.members)]
        model, _ = baselines.train_cnn_committee(
            x, labels, self.arch, seeds, max_epochs=self.max_epochs,
            patience=self.patience, adam_config=self.adam,
            pool=WorkerPool(self.workers))
        return model

    def classify(self, model, x):
        return baselines.committee_classify(model, x, combine=self.combine)


@dataclass
class FcnMethod:
    classes: int
    input_width: int = 9600
    hidden: tuple = baselines.FCN_HIDDEN
    max_epochs: int = baselines.FCN_MAX_EPOCHS
    l2: float = baselines.FCN_L2
    patience: int | None = None
    adam: optim.AdamConfig = field(default_factory=optim.AdamConfig)
    method_id: str = "fcn"

    def describe(self):
        return {"method": self.method_id, "classes": self.classes,
                "hidden": list(self.hidden), "max_epochs": self.max_epochs,
                "l2": self.l2, "patience": self.patience, "adam": vars(self.adam)}

    def train(self, x, labels, seed):
        net, _ = baselines.train_fcn_baseline(
            x, labels, self.classes, seed, hidden=self.hidden,
            max_epochs=self.max_epochs, l2=self.l2, patience=self.patience,
            adam_config=self.adam)
        return net

    def classify(self, net, x):
        return baselines.network_classify(net, x)


@dataclass
class FcnCommitteeMethod:
    classes: int
    members: int = baselines.DEFAULT_COMMITTEE_SIZE
    hidden: tuple = baselines.FCN_HIDDEN
    max_epochs: int = baselines.FCN_MAX_EPOCHS
    l2: float = baselines.FCN_L2
    patience: int | None = None
    adam: optim.AdamConfig = field(default_factory=optim.AdamConfig)
    combine: str = "vote"
    workers: int = 1
    method_id: str = "fcn-committee"

    def describe(self):
        return {"method": self.method_id, "classes": self.classes,
                "members": self.members, "hidden": list(self.hidden),
                "max_epochs": self.max_epochs, "l2": self.l2,
                "patience": self.patience, "adam": vars(self.adam),
                "combine": self.combine}

    def train(self, x, labels, seed):
        seeds = [mst.derive_seed(seed, k) for k in range(self.members)]
        model, _ = baselines.train_fcn_committee(
            x, labels, self.classes, seeds, hidden=self.hidden,
            max_epochs=self.max_epochs, patience=self.patience, l2=self.l2,
            adam_config=self.adam, pool=WorkerPool(self.workers))
        return model

    def classify(self, model, x):
        return baselines.committee_classify(model, x, combine=self.combine)
