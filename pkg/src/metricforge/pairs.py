"""Pairwise constraint construction and the induced pair kernel.

A constraint couples two samples (i, j) with an indicator h: -1 for pairs
that should end up close (same class), +1 for pairs that should end up far
(different class).  The learners never see raw samples, only the difference
vectors x_i - x_j and the kernel

    k(p, q) = (d_p . d_q)^2

between difference vectors, which equals the Frobenius product of the
rank-one outer products d_p d_p^T and d_q d_q^T.
"""

import warnings
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .errors import GramSizeError

SIMILAR = -1
DISSIMILAR = 1

# Largest pair count for which the Gram matrix is materialized densely.
DENSE_GRAM_CAP = 4096


@dataclass
class Dataset:
    """Feature matrix (n, d) with integer class labels (n,)."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labs = np.asarray(self.labels)
        if feats.ndim != 2:
            raise ValueError(f"features must be 2-d, got shape {feats.shape}")
        if feats.shape[0] < 2 or feats.shape[1] < 1:
            raise ValueError("need at least 2 samples and 1 feature")
        if not np.isfinite(feats).all():
            raise ValueError("features contain non-finite values")
        if labs.ndim != 1 or labs.shape[0] != feats.shape[0]:
            raise ValueError("labels must be 1-d and aligned with features")
        if not np.issubdtype(labs.dtype, np.integer):
            rounded = np.rint(np.asarray(labs, dtype=np.float64))
            if not np.array_equal(rounded, np.asarray(labs, dtype=np.float64)):
                raise ValueError("labels must be integers")
            labs = rounded.astype(np.int64)
        else:
            labs = labs.astype(np.int64)
        self.features = feats
        self.labels = labs

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[indices], self.labels[indices])


@dataclass(frozen=True)
class PairConstraint:
    """Indices into a dataset plus the indicator h (-1 similar, +1 dissimilar)."""

    i: int
    j: int
    h: int


@dataclass
class PairSet:
    """Ordered constraints with precomputed difference vectors.

    diffs[p] = features[i_p] - features[j_p], signs[p] = h_p.
    """

    constraints: tuple
    diffs: np.ndarray
    signs: np.ndarray = field(default=None)

    def __post_init__(self):
        self.diffs = np.asarray(self.diffs, dtype=np.float64)
        if self.diffs.ndim != 2 or self.diffs.shape[0] != len(self.constraints):
            raise ValueError("diffs must have one row per constraint")
        if self.signs is None:
            self.signs = np.array([c.h for c in self.constraints], dtype=np.float64)
        else:
            self.signs = np.asarray(self.signs, dtype=np.float64)
        if not np.all(np.isin(self.signs, (-1.0, 1.0))):
            raise ValueError("signs must be -1 or +1")

    @property
    def n_pairs(self) -> int:
        return len(self.constraints)

    @property
    def n_features(self) -> int:
        return self.diffs.shape[1]


def build_constraints(data: Dataset, k: int) -> PairSet:
    """Select constraints from labeled data.

    For each sample, its k nearest same-class neighbors (Euclidean distance)
    become similar pairs and its k farthest different-class samples become
    dissimilar pairs.  Distance ties break toward the lower sample index, and
    duplicate unordered pairs are dropped keeping the first occurrence, so the
    result is deterministic and has at most 2*k*n constraints.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    labels = data.labels
    classes, counts = np.unique(labels, return_counts=True)
    if classes.size < 2:
        raise ValueError("constraint construction needs at least 2 distinct labels")
    for cls, cnt in zip(classes, counts):
        if cnt < 2:
            warnings.warn(
                f"class {cls} has a single member; it contributes no similar pairs",
                stacklevel=2,
            )

    x = data.features
    n = data.n_samples
    sq = (x * x).sum(axis=1)
    dist2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(dist2, 0.0, out=dist2)

    similar = []
    dissimilar = []
    idx = np.arange(n)
    for i in range(n):
        same = idx[(labels == labels[i]) & (idx != i)]
        if same.size:
            order = np.lexsort((same, dist2[i, same]))
            for j in same[order[: min(k, same.size)]]:
                similar.append((i, int(j)))
        other = idx[labels != labels[i]]
        order = np.lexsort((other, -dist2[i, other]))
        for j in other[order[: min(k, other.size)]]:
            dissimilar.append((i, int(j)))

    constraints = []
    seen = set()
    for group, h in ((similar, SIMILAR), (dissimilar, DISSIMILAR)):
        for i, j in group:
            key = (min(i, j), max(i, j))
            if key in seen:
                continue
            seen.add(key)
            constraints.append(PairConstraint(i, j, h))

    diffs = np.array([x[c.i] - x[c.j] for c in constraints], dtype=np.float64)
    return PairSet(tuple(constraints), diffs)


def pair_kernel(d1, d2) -> float:
    """Kernel between two difference vectors: the squared dot product."""
    d1 = np.asarray(d1, dtype=np.float64)
    d2 = np.asarray(d2, dtype=np.float64)
    if d1.ndim != 1 or d1.shape != d2.shape:
        raise ValueError("difference vectors must be 1-d and equally sized")
    dot = float(d1 @ d2)
    return dot * dot


@dataclass
class PairGram:
    """Dense pair-kernel matrix."""

    entries: np.ndarray

    @property
    def n_pairs(self) -> int:
        return self.entries.shape[0]


def gram(pairs: PairSet, cap: int = DENSE_GRAM_CAP) -> PairGram:
    """Materialize the full pair-kernel matrix, refusing above the cap."""
    if pairs.n_pairs > cap:
        raise GramSizeError(pairs.n_pairs, cap)
    dots = pairs.diffs @ pairs.diffs.T
    return PairGram(dots * dots)


class DenseKernel:
    """Pair kernel backed by a fully materialized matrix."""

    def __init__(self, entries: np.ndarray):
        entries = np.asarray(entries, dtype=np.float64)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise ValueError("kernel matrix must be square")
        self.entries = entries
        self.diag = np.ascontiguousarray(np.diag(entries))

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def row(self, p: int) -> np.ndarray:
        return self.entries[p]

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self.entries @ v


class LazyKernel:
    """Pair kernel computed on demand from difference vectors.

    Rows cost O(n * d) each and pass through a small LRU cache; matvec runs
    in row blocks so memory stays O(block * n).
    """

    def __init__(self, diffs: np.ndarray, cache_rows: int = 256, block: int = 512):
        self._diffs = np.asarray(diffs, dtype=np.float64)
        norms = (self._diffs * self._diffs).sum(axis=1)
        self.diag = norms * norms
        self._cache = OrderedDict()
        self._cache_rows = cache_rows
        self._block = block

    @property
    def n(self) -> int:
        return self._diffs.shape[0]

    def row(self, p: int) -> np.ndarray:
        hit = self._cache.get(p)
        if hit is not None:
            self._cache.move_to_end(p)
            return hit
        dots = self._diffs @ self._diffs[p]
        row = dots * dots
        self._cache[p] = row
        if len(self._cache) > self._cache_rows:
            self._cache.popitem(last=False)
        return row

    def matvec(self, v: np.ndarray) -> np.ndarray:
        out = np.empty(self.n, dtype=np.float64)
        for start in range(0, self.n, self._block):
            stop = min(start + self._block, self.n)
            dots = self._diffs[start:stop] @ self._diffs.T
            out[start:stop] = (dots * dots) @ v
        return out


def kernel_for(pairs: PairSet, cap: int = DENSE_GRAM_CAP):
    """Dense kernel when the pair count fits under the cap, lazy otherwise."""
    if pairs.n_pairs <= cap:
        return DenseKernel(gram(pairs, cap).entries)
    return LazyKernel(pairs.diffs)
