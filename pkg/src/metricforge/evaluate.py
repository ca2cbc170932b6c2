"""Benchmark protocol: stratified cross-validation with 1-NN error,
pair-verification ROC sweeps, and PCA preprocessing.

Everything here is deterministic given the seed.  Constraint construction
and PCA are fit on each training split only, never on held-out samples.
"""

import time
from dataclasses import dataclass

import numpy as np

from .errors import StratificationError
from .linalg import sym_eig
from .model import MetricModel
from .ncml import NcmlConfig, train_ncml
from .pairs import Dataset, build_constraints
from .pcml import PcmlConfig, train_pcml


@dataclass
class CvReport:
    """Per-fold 1-NN error rates plus their mean and population std.

    fold_errors is ordered by fold index; wall_times records training
    seconds per fold and is excluded from determinism comparisons.
    """

    fold_errors: list
    mean_error: float
    std_error: float
    wall_times: list
    converged: list

    @classmethod
    def from_folds(cls, errors, wall_times, converged):
        errors = [float(e) for e in errors]
        return cls(
            fold_errors=errors,
            mean_error=float(np.mean(errors)),
            std_error=float(np.std(errors)),
            wall_times=[float(t) for t in wall_times],
            converged=[bool(c) for c in converged],
        )


@dataclass
class RocReport:
    """Verification sweep: matched is predicted when distance <= threshold."""

    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray
    accuracy: np.ndarray
    best_accuracy: float
    best_threshold: float


@dataclass
class PcaTransform:
    """Centered orthonormal projection onto the top principal directions."""

    mean: np.ndarray
    projection: np.ndarray

    def apply(self, features) -> np.ndarray:
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        return (features - self.mean) @ self.projection


def stratified_folds(labels, folds: int, seed: int) -> np.ndarray:
    """Assign each sample a fold id in [0, folds), stratified by class.

    Within each class the samples are shuffled by the seeded generator and
    dealt round-robin, so fold class proportions match the dataset's up to
    rounding.
    """
    labels = np.asarray(labels)
    if folds < 2:
        raise ValueError(f"folds must be >= 2, got {folds}")
    if folds > labels.size:
        raise ValueError("more folds than samples")
    rng = np.random.default_rng(seed)
    assignment = np.empty(labels.size, dtype=np.int64)
    offset = 0
    for cls in np.unique(labels):
        members = np.where(labels == cls)[0]
        rng.shuffle(members)
        assignment[members] = (np.arange(members.size) + offset) % folds
        offset += members.size
    return assignment


def _check_train_classes(labels, train_mask, fold):
    all_classes = np.unique(labels)
    train_classes = np.unique(labels[train_mask])
    missing = np.setdiff1d(all_classes, train_classes)
    if missing.size:
        raise StratificationError(
            f"fold {fold}: training split lost class {missing[0]}"
        )


def pca_fit_transform(data: Dataset, r: int):
    """Fit PCA on the dataset and return (transform, projected dataset).

    The covariance eigendecomposition supplies the top-r directions in
    descending eigenvalue order.
    """
    n, d = data.features.shape
    if not (1 <= r <= min(n, d)):
        raise ValueError(f"r must lie in [1, {min(n, d)}], got {r}")
    mean = data.features.mean(axis=0)
    centered = data.features - mean
    cov = (centered.T @ centered) / (n - 1)
    decomp = sym_eig(cov)
    projection = decomp.vectors[:, :r]
    transform = PcaTransform(mean=mean, projection=projection)
    return transform, Dataset(centered @ projection, data.labels)


def _train_metric(pairs, algo, config):
    if algo == "pcml":
        model, _ = train_pcml(pairs, config)
    elif algo == "ncml":
        model, _ = train_ncml(pairs, config)
    else:
        raise ValueError(f"unknown algorithm {algo!r}")
    return model


def _run_fold(data, assignment, fold, algo, config, k, pca_dim):
    test_mask = assignment == fold
    train_mask = ~test_mask
    _check_train_classes(data.labels, train_mask, fold)
    train = data.subset(np.where(train_mask)[0])
    test = data.subset(np.where(test_mask)[0])
    if pca_dim is not None:
        transform, train = pca_fit_transform(train, pca_dim)
        test = Dataset(transform.apply(test.features), test.labels)
    started = time.perf_counter()
    pairs = build_constraints(train, k)
    model = _train_metric(pairs, algo, config)
    elapsed = time.perf_counter() - started
    predicted = model.predict_1nn(train, test.features)
    error = float((predicted != test.labels).mean())
    return error, elapsed, model.meta.converged


def kfold_cv(data: Dataset, algo: str, config=None, folds: int = 10,
             seed: int = 0, k: int = 1, pca_dim: int = None,
             jobs: int = 1) -> CvReport:
    """Stratified k-fold 1-NN benchmark with a learned metric.

    Each fold trains on the other folds' samples only: constraints, PCA,
    and the metric never see held-out data.  Identical seed and settings
    give an identical report apart from wall times.
    """
    if config is None:
        config = PcmlConfig() if algo == "pcml" else NcmlConfig()
    if algo == "pcml" and not isinstance(config, PcmlConfig):
        raise ValueError("pcml requires a PcmlConfig")
    if algo == "ncml" and not isinstance(config, NcmlConfig):
        raise ValueError("ncml requires an NcmlConfig")
    assignment = stratified_folds(data.labels, folds, seed)
    fold_ids = list(range(folds))
    if jobs > 1:
        from joblib import Parallel, delayed
        results = Parallel(n_jobs=jobs)(
            delayed(_run_fold)(data, assignment, f, algo, config, k, pca_dim)
            for f in fold_ids
        )
    else:
        results = [
            _run_fold(data, assignment, f, algo, config, k, pca_dim)
            for f in fold_ids
        ]
    errors = [r[0] for r in results]
    times = [r[1] for r in results]
    converged = [r[2] for r in results]
    return CvReport.from_folds(errors, times, converged)


def verify_pairs(model: MetricModel, left, right, matched,
                 n_thresholds: int = 200) -> RocReport:
    """Sweep decision thresholds over pair distances.

    left and right are aligned (n, d) matrices, matched is a boolean vector.
    Thresholds are n_thresholds values equally spaced between the smallest
    and largest observed distance, plus -inf and +inf endpoints, so the
    sweep always contains the all-negative and all-positive deciders.
    """
    left = np.atleast_2d(np.asarray(left, dtype=np.float64))
    right = np.atleast_2d(np.asarray(right, dtype=np.float64))
    matched = np.asarray(matched, dtype=bool)
    if left.shape != right.shape or left.shape[0] != matched.shape[0]:
        raise ValueError("left, right, and matched must be aligned")
    if matched.all() or (~matched).all():
        raise ValueError("need both matched and mismatched pairs")
    if n_thresholds < 2:
        raise ValueError("n_thresholds must be >= 2")

    deltas = left - right
    dist = np.sqrt(np.maximum(
        np.einsum("pi,ij,pj->p", deltas, model.matrix, deltas), 0.0))
    inner = np.linspace(dist.min(), dist.max(), n_thresholds)
    thresholds = np.concatenate(([-np.inf], inner, [np.inf]))

    predicted = dist[None, :] <= thresholds[:, None]
    n_match = int(matched.sum())
    n_mismatch = matched.size - n_match
    tpr = (predicted[:, matched]).sum(axis=1) / n_match
    fpr = (predicted[:, ~matched]).sum(axis=1) / n_mismatch
    accuracy = (predicted == matched[None, :]).mean(axis=1)
    best = int(accuracy.argmax())
    return RocReport(
        thresholds=thresholds, tpr=tpr, fpr=fpr, accuracy=accuracy,
        best_accuracy=float(accuracy[best]),
        best_threshold=float(thresholds[best]),
    )


def cv_report_json(report: CvReport, settings: dict) -> dict:
    """Deterministic summary payload: settings plus error statistics.

    Wall times stay out of this dict on purpose so that identical runs
    serialize to identical bytes; timing goes in the per-fold CSV.
    """
    payload = dict(sorted(settings.items()))
    payload["fold_errors"] = report.fold_errors
    payload["mean_error"] = report.mean_error
    payload["std_error"] = report.std_error
    payload["all_converged"] = all(report.converged)
    return payload


def roc_report_rows(report: RocReport):
    """One (threshold, tpr, fpr, accuracy) row per swept threshold."""
    for t, tp, fp, acc in zip(report.thresholds, report.tpr, report.fpr,
                              report.accuracy):
        yield float(t), float(tp), float(fp), float(acc)
