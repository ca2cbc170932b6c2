"""Learned Mahalanobis metric: distances, nearest-neighbor prediction, and a
versioned text serialization.

The squared distance under a PSD matrix M is

    dist2(x, y) = (x - y)^T M (x - y)

which is nonnegative up to floating-point noise and is clamped to zero on
return.  Model files are plain text with a fixed header so that independent
tooling can parse them; matrix entries are printed with 17 significant
digits, which round-trips 64-bit floats exactly.
"""

import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import ModelFormatError, ModelIntegrityError
from .linalg import symmetrize

FORMAT_TAG = "metricforge-model"
FORMAT_VERSION = "v1"
# Loaded or constructed metrics must have min eigenvalue >= -PSD_TOL * scale.
PSD_TOL = 1e-8


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


@dataclass
class ModelMeta:
    """Provenance recorded alongside the matrix."""

    algorithm: str
    C: float
    eps: float
    iterations: int
    converged: bool
    final_gap: float

    def __post_init__(self):
        if not self.algorithm or any(ch.isspace() for ch in self.algorithm):
            raise ValueError("algorithm must be a non-empty token without spaces")
        self.C = float(self.C)
        self.eps = float(self.eps)
        self.iterations = int(self.iterations)
        self.converged = bool(self.converged)
        self.final_gap = float(self.final_gap)
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")


class MetricModel:
    """A PSD matrix with training metadata and optional pair coefficients.

    coeffs, when given, is a (mus, diffs) tuple recording the nonnegative
    combination M = sum_p mus_p * d_p d_p^T that produced the matrix; it is
    runtime provenance only and is not serialized.
    """

    def __init__(self, matrix, meta: ModelMeta, coeffs=None):
        m = symmetrize(matrix)
        if not np.isfinite(m).all():
            raise ValueError("metric matrix contains non-finite entries")
        scale = max(1.0, float(np.abs(m).max()))
        min_eig = float(np.linalg.eigvalsh(m)[0])
        if min_eig < -PSD_TOL * scale:
            raise ModelIntegrityError(
                f"matrix is not positive semidefinite: min eigenvalue {min_eig:.3e}"
            )
        if coeffs is not None:
            mus, diffs = coeffs
            mus = np.asarray(mus, dtype=np.float64)
            diffs = np.asarray(diffs, dtype=np.float64)
            rebuilt = (diffs * mus[:, None]).T @ diffs
            err = float(np.abs(m - symmetrize(rebuilt)).max())
            if err > 1e-8 * scale:
                raise ValueError(
                    f"coefficients do not reproduce the matrix (max error {err:.3e})"
                )
            coeffs = (mus, diffs)
        self.matrix = m
        self.meta = meta
        self.coeffs = coeffs

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def _check_point(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1 or x.shape[0] != self.dim:
            raise ValueError(f"expected a vector of length {self.dim}, got {x.shape}")
        return x

    def distance2(self, x, y) -> float:
        """Squared metric distance, clamped to be nonnegative."""
        diff = self._check_point(x) - self._check_point(y)
        return max(float(diff @ self.matrix @ diff), 0.0)

    def pairwise_distance2(self, queries, refs) -> np.ndarray:
        """Squared distances between every query row and every ref row."""
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        refs = np.atleast_2d(np.asarray(refs, dtype=np.float64))
        if queries.shape[1] != self.dim or refs.shape[1] != self.dim:
            raise ValueError("row dimension does not match the metric")
        gq = queries @ self.matrix
        gr = refs @ self.matrix
        out = (
            (gq * queries).sum(axis=1)[:, None]
            - 2.0 * (gq @ refs.T)
            + (gr * refs).sum(axis=1)[None, :]
        )
        return np.maximum(out, 0.0)

    def predict_1nn(self, train, query):
        """Label of the nearest training sample; ties go to the lowest index.

        train is a Dataset; query may be a single vector or a matrix of rows.
        """
        query = np.asarray(query, dtype=np.float64)
        single = query.ndim == 1
        dist = self.pairwise_distance2(query, train.features)
        nearest = dist.argmin(axis=1)
        labels = train.labels[nearest]
        return int(labels[0]) if single else labels

    def save(self, path):
        """Write the model atomically (temp file + rename)."""
        lines = [
            f"{FORMAT_TAG} {FORMAT_VERSION}",
            f"algorithm {self.meta.algorithm}",
            f"dim {self.dim}",
            f"C {_fmt(self.meta.C)}",
            f"eps {_fmt(self.meta.eps)}",
            f"iterations {self.meta.iterations}",
            f"converged {int(self.meta.converged)}",
            f"final_gap {_fmt(self.meta.final_gap)}",
            "matrix",
        ]
        for row in self.matrix:
            lines.append(" ".join(_fmt(v) for v in row))
        text = "\n".join(lines) + "\n"
        path = os.fspath(path)
        directory = os.path.dirname(path) or "."
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".model-", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as handle:
                handle.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


def _meta_field(lines, index, key):
    if index >= len(lines):
        raise ModelFormatError(f"missing '{key}' line", line=index + 1)
    parts = lines[index].split(maxsplit=1)
    if len(parts) != 2 or parts[0] != key:
        raise ModelFormatError(f"expected '{key} <value>'", line=index + 1)
    return parts[1].strip()


def _parse_float(token, line):
    try:
        return float(token)
    except ValueError:
        raise ModelFormatError(f"bad float {token!r}", line=line) from None


def _parse_int(token, line):
    try:
        return int(token)
    except ValueError:
        raise ModelFormatError(f"bad integer {token!r}", line=line) from None


def load(path) -> MetricModel:
    """Parse and validate a model file.

    Raises ModelFormatError with the offending line for grammar problems and
    ModelIntegrityError when the parsed matrix fails dimension, symmetry, or
    PSD checks.
    """
    with open(path, "r", encoding="utf-8") as handle:
        lines = handle.read().splitlines()
    if not lines:
        raise ModelFormatError("empty file", line=1)
    header = lines[0].split()
    if header != [FORMAT_TAG, FORMAT_VERSION]:
        raise ModelFormatError(
            f"expected header '{FORMAT_TAG} {FORMAT_VERSION}'", line=1
        )
    algorithm = _meta_field(lines, 1, "algorithm")
    dim = _parse_int(_meta_field(lines, 2, "dim"), 3)
    if dim < 1:
        raise ModelFormatError(f"dim must be >= 1, got {dim}", line=3)
    c_value = _parse_float(_meta_field(lines, 3, "C"), 4)
    eps = _parse_float(_meta_field(lines, 4, "eps"), 5)
    iterations = _parse_int(_meta_field(lines, 5, "iterations"), 6)
    converged_token = _meta_field(lines, 6, "converged")
    if converged_token not in ("0", "1"):
        raise ModelFormatError("converged must be 0 or 1", line=7)
    final_gap = _parse_float(_meta_field(lines, 7, "final_gap"), 8)
    if len(lines) <= 8 or lines[8].strip() != "matrix":
        raise ModelFormatError("expected 'matrix' separator", line=9)

    rows = []
    for r in range(dim):
        line_no = 10 + r
        if 9 + r >= len(lines):
            raise ModelFormatError("truncated matrix block", line=line_no)
        tokens = lines[9 + r].split()
        if len(tokens) != dim:
            raise ModelFormatError(
                f"expected {dim} entries, got {len(tokens)}", line=line_no
            )
        rows.append([_parse_float(tok, line_no) for tok in tokens])
    extra = [ln for ln in lines[9 + dim:] if ln.strip()]
    if extra:
        raise ModelFormatError("trailing content after matrix block", line=10 + dim)

    matrix = np.array(rows, dtype=np.float64)
    if not np.isfinite(matrix).all():
        raise ModelIntegrityError("matrix contains non-finite entries")
    scale = max(1.0, float(np.abs(matrix).max()))
    if float(np.abs(matrix - matrix.T).max()) > 1e-12 * scale:
        raise ModelIntegrityError("matrix is not symmetric")
    try:
        meta = ModelMeta(
            algorithm=algorithm, C=c_value, eps=eps,
            iterations=iterations, converged=converged_token == "1",
            final_gap=final_gap,
        )
        return MetricModel(matrix, meta)
    except ValueError as exc:
        raise ModelIntegrityError(str(exc)) from exc
