"""Dual quadratic program solvers for the metric learners.

Two problem shapes come up, both over a positive semidefinite kernel K:

* box + equality (solve_box_eq), the SVM-style dual with a general linear
  term:

      max  -1/2 sum_pq a_p a_q h_p h_q K_pq + sum_p eta_p a_p
      s.t. sum_p h_p a_p = 0,  0 <= a_p <= C

  solved by a two-variable working-set method that always picks the
  maximal KKT-violating pair.  A standard SVM dual is the special case
  eta = 1, so the solver is checked against that shape in the tests.

* nonnegative (solve_nonneg):

      max  -1/2 sum_pq m_p m_q K_pq + sum_p g_p m_p
      s.t. m_p >= 0

  solved by cyclic projected coordinate ascent with an O(n) gradient
  update per coordinate.

Both solvers accept warm starts, keep every iterate feasible, and report
the achieved KKT residual.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, NumericalError
from .pairs import DenseKernel

# Curvature along a working direction more negative than CURVATURE_TOL times
# the diagonal scale means the kernel is not PSD; milder negativity is
# clamped to CURVATURE_FLOOR times the scale.
CURVATURE_TOL = 1e-8
CURVATURE_FLOOR = 1e-12


def _as_kernel(kernel):
    if isinstance(kernel, np.ndarray):
        return DenseKernel(kernel)
    return kernel


def _check_vector(name, v, n):
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (n,):
        raise ValueError(f"{name} must have shape ({n},), got {v.shape}")
    if not np.isfinite(v).all():
        raise ValueError(f"{name} contains non-finite values")
    return v


@dataclass
class BoxEqQp:
    """Inputs for solve_box_eq.  kernel may be an ndarray or a kernel object."""

    kernel: object
    linear: np.ndarray
    signs: np.ndarray
    cap: float
    tol: float = 1e-6
    warm: np.ndarray = None
    max_steps: int = 1_000_000
    track_objective: bool = False

    def __post_init__(self):
        self.kernel = _as_kernel(self.kernel)
        n = self.kernel.n
        self.linear = _check_vector("linear", self.linear, n)
        self.signs = _check_vector("signs", self.signs, n)
        if not np.all(np.isin(self.signs, (-1.0, 1.0))):
            raise ValueError("signs must be -1 or +1")
        if not (np.isfinite(self.cap) and self.cap > 0):
            raise ValueError(f"cap must be positive, got {self.cap}")
        if not (self.tol > 0):
            raise ValueError("tol must be positive")
        if self.warm is not None:
            w = _check_vector("warm", self.warm, n)
            if (w < -1e-9).any() or (w > self.cap + 1e-9).any():
                raise ValueError("warm start violates the box constraints")
            if abs(float(self.signs @ w)) > 1e-9 * max(1.0, n * self.cap):
                raise ValueError("warm start violates the equality constraint")
            self.warm = np.clip(w, 0.0, self.cap)


@dataclass
class BoxEqSolution:
    alphas: np.ndarray
    bias: float
    objective: float
    kkt_residual: float
    iterations: int
    status: str
    objective_trace: list = field(default=None)


@dataclass
class NonnegQp:
    """Inputs for solve_nonneg."""

    kernel: object
    linear: np.ndarray
    tol: float = 1e-6
    warm: np.ndarray = None
    max_sweeps: int = 100_000
    track_objective: bool = False

    def __post_init__(self):
        self.kernel = _as_kernel(self.kernel)
        n = self.kernel.n
        self.linear = _check_vector("linear", self.linear, n)
        if not (self.tol > 0):
            raise ValueError("tol must be positive")
        if self.warm is not None:
            w = _check_vector("warm", self.warm, n)
            if (w < -1e-12).any():
                raise ValueError("warm start violates nonnegativity")
            self.warm = np.maximum(w, 0.0)


@dataclass
class NonnegSolution:
    mus: np.ndarray
    objective: float
    kkt_residual: float
    sweeps: int
    status: str
    objective_trace: list = field(default=None)


def _box_eq_objective(kernel, linear, signs, alphas):
    """Exact dual objective -1/2 a'Qa + eta'a with Q = (hh') * K."""
    weighted = kernel.matvec(signs * alphas)
    return float(-0.5 * (signs * alphas) @ weighted + linear @ alphas)


def _scores(signs, grad):
    # KKT scores -h_p * grad_p; the optimal bias lies between the I_up max
    # and the I_low min.
    return -signs * grad


def _select_sets(alphas, signs, cap):
    pos = signs > 0
    up = (pos & (alphas < cap)) | (~pos & (alphas > 0.0))
    low = (~pos & (alphas < cap)) | (pos & (alphas > 0.0))
    return up, low


def _bias_and_residual(alphas, signs, grad, cap):
    """Bias from free variables, else the midpoint of the KKT interval."""
    score = _scores(signs, grad)
    up, low = _select_sets(alphas, signs, cap)
    m_up = float(score[up].max()) if up.any() else -np.inf
    m_low = float(score[low].min()) if low.any() else np.inf
    residual = max(m_up - m_low, 0.0)
    free = (alphas > 0.0) & (alphas < cap)
    if free.any():
        bias = float(score[free].mean())
    elif np.isfinite(m_up) and np.isfinite(m_low):
        bias = 0.5 * (m_up + m_low)
    elif np.isfinite(m_up):
        bias = m_up
    elif np.isfinite(m_low):
        bias = m_low
    else:
        bias = 0.0
    return bias, residual


def solve_box_eq(problem: BoxEqQp) -> BoxEqSolution:
    """Working-set solver for the box-plus-equality dual.

    Returns the solution with the maximal working-set KKT violation at or
    below problem.tol.  When signs are all equal the equality constraint
    forces the zero vector, which is returned with status "degenerate".
    """
    kernel = problem.kernel
    linear = problem.linear
    signs = problem.signs
    cap = problem.cap
    n = kernel.n

    if (signs > 0).all() or (signs < 0).all():
        zeros = np.zeros(n)
        return BoxEqSolution(
            alphas=zeros, bias=0.0, objective=0.0, kkt_residual=0.0,
            iterations=0, status="degenerate",
            objective_trace=[0.0] if problem.track_objective else None,
        )

    if problem.warm is not None:
        alphas = problem.warm.copy()
        grad = signs * kernel.matvec(signs * alphas) - linear
    else:
        alphas = np.zeros(n)
        grad = -linear.copy()

    diag_scale = max(1.0, float(kernel.diag.max()))
    curvature_error = -CURVATURE_TOL * diag_scale
    curvature_floor = CURVATURE_FLOOR * diag_scale
    trace = [] if problem.track_objective else None
    if trace is not None:
        trace.append(_box_eq_objective(kernel, linear, signs, alphas))

    steps = 0
    while True:
        score = _scores(signs, grad)
        up, low = _select_sets(alphas, signs, cap)
        m_up = float(score[up].max()) if up.any() else -np.inf
        m_low = float(score[low].min()) if low.any() else np.inf
        if m_up - m_low <= problem.tol:
            break
        if steps >= problem.max_steps:
            raise ConvergenceError(
                f"working-set solver stalled after {steps} steps "
                f"(KKT violation {m_up - m_low:.3e}, tol {problem.tol:.3e})"
            )
        i = int(np.where(up, score, -np.inf).argmax())
        j = int(np.where(low, score, np.inf).argmin())

        row_i = kernel.row(i)
        row_j = kernel.row(j)
        quad = float(row_i[i] + row_j[j] - 2.0 * row_i[j])
        if quad < curvature_error:
            raise NumericalError(
                f"negative curvature {quad:.3e} on working pair ({i}, {j}); "
                f"kernel is not positive semidefinite"
            )
        quad = max(quad, curvature_floor)

        old_i = alphas[i]
        old_j = alphas[j]
        if signs[i] != signs[j]:
            delta = (-grad[i] - grad[j]) / quad
            diff = old_i - old_j
            ai = old_i + delta
            aj = old_j + delta
            if diff > 0.0:
                if aj < 0.0:
                    aj = 0.0
                    ai = diff
            else:
                if ai < 0.0:
                    ai = 0.0
                    aj = -diff
            if diff > 0.0:
                if ai > cap:
                    ai = cap
                    aj = cap - diff
            else:
                if aj > cap:
                    aj = cap
                    ai = cap + diff
        else:
            delta = (grad[i] - grad[j]) / quad
            total = old_i + old_j
            ai = old_i - delta
            aj = old_j + delta
            if total > cap:
                if ai > cap:
                    ai = cap
                    aj = total - cap
                elif aj > cap:
                    aj = cap
                    ai = total - cap
            else:
                if aj < 0.0:
                    aj = 0.0
                    ai = total
                elif ai < 0.0:
                    ai = 0.0
                    aj = total
        alphas[i] = ai
        alphas[j] = aj
        d_i = ai - old_i
        d_j = aj - old_j
        grad += (signs * d_i * signs[i]) * row_i + (signs * d_j * signs[j]) * row_j
        steps += 1
        if trace is not None:
            # O(n) identity: a'Qa = a'(grad + eta)
            trace.append(float(0.5 * (linear @ alphas - alphas @ grad)))

    bias, residual = _bias_and_residual(alphas, signs, grad, cap)
    objective = _box_eq_objective(kernel, linear, signs, alphas)
    return BoxEqSolution(
        alphas=alphas, bias=bias, objective=objective, kkt_residual=residual,
        iterations=steps, status="converged", objective_trace=trace,
    )


def _nonneg_residual(mus, grad):
    # KKT: grad_p <= 0 where m_p = 0, grad_p = 0 where m_p > 0.
    at_zero = mus <= 0.0
    viol = np.where(at_zero, np.maximum(grad, 0.0), np.abs(grad))
    return float(viol.max()) if viol.size else 0.0


def solve_nonneg(problem: NonnegQp) -> NonnegSolution:
    """Cyclic projected coordinate ascent for the nonnegative dual.

    Each coordinate takes its exact constrained maximizer
    m_p <- max(0, m_p + grad_p / K_pp), so the objective never decreases.
    Sweeps continue until the largest elementwise KKT violation is at or
    below problem.tol.
    """
    kernel = problem.kernel
    linear = problem.linear
    n = kernel.n
    diag = kernel.diag
    diag_floor = 1e-12 * max(1.0, float(diag.max()))
    dead = diag <= diag_floor
    if dead.any():
        bad = np.where(dead & (linear > problem.tol))[0]
        if bad.size:
            raise NumericalError(
                f"unbounded direction: pair {int(bad[0])} has zero kernel "
                f"diagonal but positive linear term {linear[bad[0]]:.3e}"
            )

    if problem.warm is not None:
        mus = problem.warm.copy()
        grad = linear - kernel.matvec(mus)
    else:
        mus = np.zeros(n)
        grad = linear.copy()

    trace = [] if problem.track_objective else None
    if trace is not None:
        trace.append(float(linear @ mus - 0.5 * mus @ (linear - grad)))

    sweeps = 0
    while True:
        residual = _nonneg_residual(mus, grad)
        if residual <= problem.tol:
            break
        if sweeps >= problem.max_sweeps:
            raise ConvergenceError(
                f"coordinate ascent stalled after {sweeps} sweeps "
                f"(KKT violation {residual:.3e}, tol {problem.tol:.3e})"
            )
        for p in range(n):
            if dead[p]:
                continue
            g = grad[p]
            old = mus[p]
            new = old + g / diag[p]
            if new < 0.0:
                new = 0.0
            if new == old:
                continue
            mus[p] = new
            grad -= (new - old) * kernel.row(p)
        sweeps += 1
        if trace is not None:
            trace.append(float(linear @ mus - 0.5 * mus @ (linear - grad)))

    objective = float(linear @ mus - 0.5 * mus @ kernel.matvec(mus))
    return NonnegSolution(
        mus=mus, objective=objective, kkt_residual=residual,
        sweeps=sweeps, status="converged", objective_trace=trace,
    )
