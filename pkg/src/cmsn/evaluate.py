"""Leave-one-out evaluation protocol, robustness sweep, and core-count benchmark.

LOOCV here is per-class: fold k holds out the k-th sample of every class,
giving ``samples_per_class`` folds; the plan is repeated with fresh seeds
(``repeats`` times, 12 x 5 = 60 trials at production scale).  Every trial's
training seed is a pure function of ``(seed, repeat, fold)``, so reports are
reproducible trial-for-trial at any worker count.
"""

import hashlib
import json
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .data import Dataset
from .mst import derive_seed


class EvalError(ValueError):
    """Evaluation protocol misuse (unequal classes, bad label ranges, ...)."""


@dataclass
class FoldPlan:
    """Per-fold (train indices, validation indices); validation holds exactly
    one sample of every class."""
    folds: list

    def __len__(self):
        return len(self.folds)


def make_folds(dataset):
    """Leave-one-out-per-class folds over a balanced dataset."""
    labels = np.asarray(dataset.labels)
    counts = np.bincount(labels, minlength=dataset.num_classes)
    if np.unique(counts).size != 1:
        raise EvalError("LOOCV needs the same number of samples in every class")
    per_class = int(counts[0])
    by_class = [np.flatnonzero(labels == c) for c in range(dataset.num_classes)]
    folds = []
    for k in range(per_class):
        val = np.sort(np.array([idx[k] for idx in by_class]))
        mask = np.ones(labels.size, dtype=bool)
        mask[val] = False
        folds.append((np.flatnonzero(mask), val))
    return FoldPlan(folds=folds)


def confusion_matrix(truths, predictions, num_classes):
    truths = np.asarray(truths, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    if truths.shape != predictions.shape:
        raise EvalError("truth/prediction lists must have equal length")
    if truths.size and not (
            0 <= truths.min() and truths.max() < num_classes
            and 0 <= predictions.min() and predictions.max() < num_classes):
        raise EvalError(f"labels must lie in [0, {num_classes})")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (truths, predictions), 1)
    return counts


@dataclass
class TrialResult:
    repeat: int
    fold: int
    seed: int
    accuracy: float
    seconds: float
    status: str = "ok"           # "ok" | "failed"
    error: str = ""
    truths: list = field(default_factory=list)
    predictions: list = field(default_factory=list)


@dataclass
class EvalReport:
    """Aggregated LOOCV result for one method on one dataset."""
    method_id: str
    config_hash: str
    classes: int
    trials: list
    mean_accuracy: float
    std_accuracy: float
    mean_seconds: float
    confusion: np.ndarray

    @property
    def failed_trials(self):
        return [t for t in self.trials if t.status != "ok"]

    def to_json(self):
        return {
            "method": self.method_id, "config_hash": self.config_hash,
            "classes": self.classes,
            "mean_accuracy": self.mean_accuracy, "std_accuracy": self.std_accuracy,
            "mean_seconds": self.mean_seconds,
            "confusion": self.confusion.tolist(),
            "trials": [{"repeat": t.repeat, "fold": t.fold, "seed": t.seed,
                        "accuracy": t.accuracy, "seconds": t.seconds,
                        "status": t.status, "error": t.error}
                       for t in self.trials],
        }

    def summary_row(self):
        return {"method": self.method_id, "classes": self.classes,
                "mean_accuracy": self.mean_accuracy,
                "std_accuracy": self.std_accuracy,
                "mean_seconds": self.mean_seconds}


def config_hash(method):
    return hashlib.sha256(
        json.dumps(method.describe(), sort_keys=True).encode()).hexdigest()[:16]


# worker context: set in the parent before forking so trial processes inherit
# the dataset and method without per-job pickling
_CTX = {}


def _run_trial(job):
    repeat, fold_index, trial_seed = job
    method = _CTX["method"]
    x, labels = _CTX["x"], _CTX["labels"]
    train_idx, val_idx = _CTX["folds"][fold_index]
    try:
        start = time.perf_counter()
        model = method.train(x[train_idx], labels[train_idx], trial_seed)
        seconds = time.perf_counter() - start
        preds = np.asarray(method.classify(model, x[val_idx]))
        truths = labels[val_idx]
        accuracy = float(np.mean(preds == truths))
        return TrialResult(repeat=repeat, fold=fold_index, seed=trial_seed,
                           accuracy=accuracy, seconds=seconds,
                           truths=truths.tolist(), predictions=preds.tolist())
    except Exception as exc:  # failures are recorded per trial, not raised
        return TrialResult(repeat=repeat, fold=fold_index, seed=trial_seed,
                           accuracy=float("nan"), seconds=float("nan"),
                           status="failed", error=f"{type(exc).__name__}: {exc}")


def run_loocv(method, dataset, repeats=5, seed=0, trial_workers=1, max_folds=None):
    """Full LOOCV-by-class protocol; returns an :class:`EvalReport`.

    ``repeats`` re-runs the fold plan with fresh derived seeds (fresh
    initial conditions); trial count is ``folds x repeats`` exactly.
    ``max_folds`` truncates the plan for reduced desk-scale budgets.
    ``trial_workers`` parallelizes over trials; use it only with methods
    configured for serial training (one level of parallelism at a time).
    """
    plan = make_folds(dataset)
    folds = plan.folds[:max_folds] if max_folds else plan.folds
    jobs = [(r, k, derive_seed(seed, r, k))
            for r in range(repeats) for k in range(len(folds))]

    _CTX.update(method=method, x=dataset.x, labels=np.asarray(dataset.labels),
                folds=folds)
    try:
        with threadpool_limits(limits=1):
            if trial_workers == 1 or len(jobs) <= 1:
                results = [_run_trial(job) for job in jobs]
            else:
                ctx = multiprocessing.get_context("fork")
                with ProcessPoolExecutor(max_workers=trial_workers,
                                         mp_context=ctx) as ex:
                    results = list(ex.map(_run_trial, jobs, chunksize=1))
    finally:
        _CTX.clear()

    ok = [t for t in results if t.status == "ok"]
    accs = np.array([t.accuracy for t in ok])
    confusion = confusion_matrix(
        [v for t in ok for v in t.truths],
        [v for t in ok for v in t.predictions], dataset.num_classes)
    return EvalReport(
        method_id=method.method_id, config_hash=config_hash(method),
        classes=dataset.num_classes, trials=results,
        mean_accuracy=float(accs.mean()) if accs.size else float("nan"),
        std_accuracy=float(accs.std(ddof=1)) if accs.size > 1 else 0.0,
        mean_seconds=float(np.mean([t.seconds for t in ok])) if ok else float("nan"),
        confusion=confusion)


def robustness_sweep(method_factory, dataset, class_counts=range(17, 7, -1),
                     repeats=5, seed=0, trial_workers=1, max_folds=None):
    """One report per class count, all with the identical frozen configuration.

    Subsets take the lowest class indices; ``method_factory(classes)`` must
    apply the same hyperparameters at every count.
    """
    reports = []
    for count in class_counts:
        sub = dataset.subset_classes(count)
        method = method_factory(count)
        reports.append(run_loocv(method, sub, repeats=repeats, seed=seed,
                                 trial_workers=trial_workers, max_folds=max_folds))
    return reports


def benchmark_cores(train_callable, core_counts, timing_repeats=3):
    """Median-of-N wall times and speedups for a worker-count sweep.

    ``train_callable(workers)`` must run one full training and return a
    model-identity hash; hashes are reported per row so callers can assert
    the models are bit-identical across core counts.  ``speedup`` is
    ``time(min(core_counts)) / time(n)`` with 1 expected in the first row.
    """
    rows = []
    for cores in core_counts:
        times, hashes = [], set()
        for _ in range(timing_repeats):
            start = time.perf_counter()
            digest = train_callable(cores)
            times.append(time.perf_counter() - start)
            hashes.add(digest)
        if len(hashes) != 1:
            raise EvalError(f"training at {cores} workers was not deterministic")
        rows.append({"cores": cores, "seconds": float(np.median(times)),
                     "model_hash": hashes.pop()})
    base = rows[0]["seconds"]
    for row in rows:
        row["speedup"] = base / row["seconds"]
    return rows
