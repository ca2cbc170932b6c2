"""Positive-semidefinite constrained metric learning by alternating dual
updates.

The primal problem regularizes the metric M directly:

    min  1/2 ||M||_F^2 + C sum_p xi_p
    s.t. h_p (<M, X_p> + b) >= 1 - xi_p,  xi_p >= 0,  M PSD

where X_p = d_p d_p^T is the outer product of the p-th difference vector.
Its dual couples box-constrained multipliers a_p with a PSD matrix Y through
M = sum_p a_p h_p X_p + Y.  Training alternates between the two blocks:

1. with Y fixed, the a-subproblem is an SVM-style dual whose linear term is
   eta_p = 1 - h_p <X_p, Y>, solved by the working-set QP solver;
2. with a fixed, the optimal Y is the PSD projection of
   Y0 = -sum_p a_p h_p X_p.

Writing the eigendecomposition Y0 = U diag(w) U^T, the projection keeps the
positive part and the metric M = Y - Y0 keeps the flipped negative part, so
M is PSD by construction at every iteration.  The duality gap

    gap = C sum_p xi_p - sum_p a_p + sum(neg_part(w)^2)

is tracked per iteration and training stops once it falls below eps times
the gap after the first iteration.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError
from .linalg import RANK_TOL, symmetrize
from .model import MetricModel, ModelMeta
from .pairs import PairSet, kernel_for
from .qp import BoxEqQp, solve_box_eq

# Absolute floor under which a duality gap counts as converged even when the
# ratio test against the first-iteration gap is inconclusive.
GAP_FLOOR = 1e-12


@dataclass
class PcmlConfig:
    """Training knobs: penalty C, gap ratio eps, iteration cap, QP tolerance."""

    C: float = 0.5
    eps: float = 0.01
    max_iter: int = 100
    qp_tol: float = 1e-6

    def __post_init__(self):
        if not (np.isfinite(self.C) and self.C > 0):
            raise ValueError(f"C must be positive, got {self.C}")
        if not (0 < self.eps < 1):
            raise ValueError(f"eps must lie in (0, 1), got {self.eps}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not (self.qp_tol > 0):
            raise ValueError("qp_tol must be positive")


@dataclass
class TraceRow:
    iteration: int
    primal: float
    dual: float
    gap: float
    seconds: float


@dataclass
class TrainTrace:
    """Per-iteration objective values and wall time."""

    rows: list = field(default_factory=list)

    def append(self, row: TraceRow):
        self.rows.append(row)

    @property
    def gaps(self):
        return [r.gap for r in self.rows]

    def __len__(self):
        return len(self.rows)


@dataclass
class PcmlState:
    """Mutually consistent snapshot of one outer iteration."""

    lam: np.ndarray
    Y: np.ndarray
    eta: np.ndarray
    bias: float
    trace: TrainTrace


def _weighted_outer(diffs: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """sum_p weights_p * d_p d_p^T as a symmetric matrix."""
    return symmetrize((diffs * weights[:, None]).T @ diffs)


def _responses(m: np.ndarray, diffs: np.ndarray) -> np.ndarray:
    """d_p^T M d_p for every difference vector."""
    return np.einsum("pi,ij,pj->p", diffs, m, diffs)


def _split_spectrum(y0: np.ndarray):
    """Eigendecompose Y0 and split into the PSD projection and the metric.

    Returns (Y, M, neg_sq) where Y keeps the positive eigenvalues of Y0,
    M = Y - Y0 keeps the flipped negative ones, and neg_sq is the summed
    square of the clamped negative part, i.e. ||M||_F^2.
    """
    y0 = symmetrize(y0)
    values, vectors = np.linalg.eigh(y0)
    cut = RANK_TOL * float(np.linalg.norm(y0))
    pos = np.where(values > cut, values, 0.0)
    neg = np.where(values < -cut, -values, 0.0)
    y = symmetrize((vectors * pos) @ vectors.T)
    m = symmetrize((vectors * neg) @ vectors.T)
    return y, m, float((neg * neg).sum())


def margin_bias(signs, responses, lam, cap):
    """Bias per the KKT conditions given margins s_p = <M, X_p>.

    Averages 1/h_p - s_p over free multipliers; with none free, falls back
    to the midpoint of the interval that the bound multipliers imply.
    """
    targets = signs - responses
    free = (lam > 0.0) & (lam < cap)
    if free.any():
        return float(targets[free].mean())
    at_zero = lam <= 0.0
    at_cap = lam >= cap
    pos = signs > 0
    lower = targets[(at_zero & pos) | (at_cap & ~pos)]
    upper = targets[(at_zero & ~pos) | (at_cap & pos)]
    lo = float(lower.max()) if lower.size else -np.inf
    hi = float(upper.min()) if upper.size else np.inf
    if np.isfinite(lo) and np.isfinite(hi):
        return 0.5 * (lo + hi)
    if np.isfinite(lo):
        return lo
    if np.isfinite(hi):
        return hi
    return 0.0


def hinge_slacks(signs, responses, bias):
    """Minimal feasible slacks [1 - h_p (s_p + b)]_+ for the given bias."""
    return np.maximum(1.0 - signs * (responses + bias), 0.0)


def pcml_bias_and_slacks(state: PcmlState, pairs: PairSet, cap: float):
    """Recover (bias, slacks) from a training state.

    The slack vector is the elementwise hinge of the margins, which equals
    the KKT prescription (zero at free or inactive multipliers, the hinge
    at multipliers stuck at C) whenever the state is subproblem-optimal,
    and stays primal-feasible even when it is not.
    """
    y0 = -_weighted_outer(pairs.diffs, state.lam * pairs.signs)
    m = symmetrize(state.Y - y0)
    responses = _responses(m, pairs.diffs)
    bias = margin_bias(pairs.signs, responses, state.lam, cap)
    return bias, hinge_slacks(pairs.signs, responses, bias)


def _gap_value(cap, slacks, lam, neg_sq):
    return float(cap * slacks.sum() - lam.sum() + neg_sq)


def pcml_duality_gap(state: PcmlState, pairs: PairSet, config: PcmlConfig) -> float:
    """Duality gap of a consistent state; raises if it comes out negative.

    Rebuilds Y0 from the multipliers, splits its spectrum, and evaluates
    C sum(xi) - sum(lam) + ||neg part||_F^2 with hinge slacks.
    """
    y0 = -_weighted_outer(pairs.diffs, state.lam * pairs.signs)
    _, m, neg_sq = _split_spectrum(y0)
    responses = _responses(m, pairs.diffs)
    bias = margin_bias(pairs.signs, responses, state.lam, config.C)
    slacks = hinge_slacks(pairs.signs, responses, bias)
    gap = _gap_value(config.C, slacks, state.lam, neg_sq)
    scale = max(1.0, config.C * pairs.n_pairs)
    if gap < -1e-6 * scale:
        raise NumericalError(f"negative duality gap {gap:.3e}")
    return gap


def train_pcml(pairs: PairSet, config: PcmlConfig = None, progress=None,
               kernel=None, return_state: bool = False):
    """Alternating training loop.

    Returns (model, trace), or (model, trace, state) with return_state.
    progress, when given, is called with each TraceRow as it is produced.
    The QP subproblem is warm-started with the previous multipliers, and if
    the iteration cap is hit the state with the smallest gap wins.
    """
    if config is None:
        config = PcmlConfig()
    if pairs.n_pairs < 1:
        raise ValueError("need at least one pair constraint")
    kernel = kernel if kernel is not None else kernel_for(pairs)
    signs = pairs.signs
    diffs = pairs.diffs
    cap = config.C

    start = time.perf_counter()
    y = np.zeros((pairs.n_features, pairs.n_features))
    lam = None
    trace = TrainTrace()
    first_gap = None
    best = None

    for iteration in range(1, config.max_iter + 1):
        eta = 1.0 - signs * _responses(y, diffs)
        solution = solve_box_eq(BoxEqQp(
            kernel=kernel, linear=eta, signs=signs, cap=cap,
            tol=config.qp_tol, warm=lam,
        ))
        lam = solution.alphas
        y0 = -_weighted_outer(diffs, lam * signs)
        y, m, neg_sq = _split_spectrum(y0)

        responses = _responses(m, diffs)
        bias = margin_bias(signs, responses, lam, cap)
        slacks = hinge_slacks(signs, responses, bias)
        gap = _gap_value(cap, slacks, lam, neg_sq)
        primal = 0.5 * neg_sq + cap * float(slacks.sum())
        dual = float(lam.sum()) - 0.5 * neg_sq
        row = TraceRow(iteration, primal, dual, gap, time.perf_counter() - start)
        trace.append(row)
        if progress is not None:
            progress(row)

        if best is None or gap < best[0]:
            best = (gap, lam.copy(), y.copy(), m.copy(), eta, bias, iteration)
        if first_gap is None:
            first_gap = gap
        scale = max(1.0, cap * pairs.n_pairs)
        if gap < config.eps * first_gap or gap <= GAP_FLOOR * scale:
            converged = True
            break
    else:
        converged = False

    gap, lam, y, m, eta, bias, _ = best
    state = PcmlState(lam=lam, Y=y, eta=eta, bias=bias, trace=trace)
    meta = ModelMeta(
        algorithm="pcml", C=cap, eps=config.eps,
        iterations=len(trace), converged=converged, final_gap=gap,
    )
    model = MetricModel(m, meta)
    if return_state:
        return model, trace, state
    return model, trace
