import numpy as np
import pytest
from numpy.testing import assert_allclose

from metricforge.datasets import two_gaussians
from metricforge.errors import NumericalError
from metricforge.linalg import min_eigenvalue
from metricforge.ncml import (
    NcmlConfig,
    NcmlState,
    ncml_duality_gap,
    ncml_inner_gap,
    ncml_linear_terms,
    train_ncml,
)
from metricforge.pairs import (
    DenseKernel,
    PairConstraint,
    PairSet,
    build_constraints,
    gram,
    pair_kernel,
)
from metricforge.pcml import TrainTrace
from oracles import nonneg_combo_primal_oracle


def axis_pairs():
    # same construction as the box-constrained learner's closed-form case:
    # orthogonal difference vectors, pair kernel diag(1, 4)
    constraints = (PairConstraint(0, 1, -1), PairConstraint(2, 3, 1))
    diffs = np.array([[1.0, 0.0], [0.0, np.sqrt(2.0)]])
    return PairSet(constraints=constraints, diffs=diffs)


def tiny_pairs():
    data = two_gaussians(n=24, d=3, seed=2, separation=2.0)
    return build_constraints(data, k=1)


def medium_pairs():
    data = two_gaussians(n=120, d=10, seed=0, separation=2.5)
    return build_constraints(data, k=2)


class TestAxisProblem:
    # closed form: beta = (1/2, 1/2), mu = (0, 1/2), eta = (1/2, 0),
    # M = diag(0, 1), bias = -1, both objectives 1/2

    def train(self):
        config = NcmlConfig(C=1.0, eps=1e-6, max_iter=200)
        return train_ncml(axis_pairs(), config, return_state=True)

    def test_optimum_reached(self):
        model, trace, state = self.train()
        assert model.meta.converged
        assert_allclose(state.beta, [0.5, 0.5], atol=1e-3)
        assert_allclose(state.mu, [0.0, 0.5], atol=1e-3)
        assert_allclose(state.eta, [0.5, 0.0], atol=1e-3)
        assert_allclose(model.matrix, np.diag([0.0, 1.0]), atol=1e-3)
        assert abs(state.bias - (-1.0)) <= 1e-3

    def test_objectives_meet(self):
        model, trace, state = self.train()
        last = trace.rows[-1]
        assert abs(last.primal - 0.5) <= 1e-3
        assert abs(last.dual - 0.5) <= 1e-3
        assert last.gap <= 1e-6 * trace.rows[0].gap

    def test_reference_solver_agrees(self):
        pairs = axis_pairs()
        oracle = nonneg_combo_primal_oracle(gram(pairs).entries, pairs.signs,
                                            cap=1.0)
        assert abs(oracle - 0.5) <= 1e-6


class TestLinearTerms:

    def test_double_sum_recount(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            n = int(rng.integers(2, 9))
            d = int(rng.integers(1, 5))
            diffs = rng.standard_normal((n, d))
            signs = np.where(rng.random(n) < 0.5, -1.0, 1.0)
            eta = rng.standard_normal(n)
            beta = rng.uniform(0.0, 1.0, n)
            kernel = DenseKernel(gram(PairSet(
                constraints=tuple(
                    PairConstraint(2 * p, 2 * p + 1, int(signs[p]))
                    for p in range(n)),
                diffs=diffs,
            )).entries)
            delta, gamma = ncml_linear_terms(eta, beta, kernel, signs)
            for p in range(n):
                dsum = sum(pair_kernel(diffs[p], diffs[q]) * eta[q]
                           for q in range(n))
                gsum = sum(pair_kernel(diffs[p], diffs[q]) * signs[q] * beta[q]
                           for q in range(n))
                assert abs(delta[p] - (1.0 - signs[p] * dsum)) <= 1e-9 * max(
                    1.0, abs(dsum))
                assert abs(gamma[p] - gsum) <= 1e-9 * max(1.0, abs(gsum))


class TestNonnegativeCombination:

    def test_random_coefficients_give_psd(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            n = int(rng.integers(1, 40))
            d = int(rng.integers(1, 12))
            diffs = rng.standard_normal((n, d)) * rng.uniform(0.1, 10.0)
            mus = rng.uniform(0.0, 5.0, n)
            matrix = (diffs * mus[:, None]).T @ diffs
            scale = max(1.0, float(np.abs(matrix).max()))
            assert min_eigenvalue(matrix) >= -1e-10 * scale

    def test_trained_matrix_matches_coefficients(self):
        pairs = tiny_pairs()
        model, _, state = train_ncml(
            pairs, NcmlConfig(C=0.5, eps=1e-6, max_iter=300),
            return_state=True)
        mus, diffs = model.coeffs
        assert np.array_equal(mus, state.mu)
        rng = np.random.default_rng(0)
        scale = max(1.0, float(np.abs(model.matrix).max()))
        for _ in range(10):
            z = rng.standard_normal(pairs.n_features)
            direct = float(z @ model.matrix @ z)
            via_coeffs = float((mus * (diffs @ z) ** 2).sum())
            assert abs(direct - via_coeffs) <= 1e-8 * scale * max(1.0, z @ z)


class TestIterationInvariants:
    # each prefix run reproduces the first iterations of the full run, so
    # checking the returned state at every max_iter covers each iteration

    def test_identity_and_nonnegativity_each_iteration(self):
        pairs = tiny_pairs()
        scale = max(1.0, 0.5 * pairs.n_pairs)
        for cap_iters in range(1, 6):
            config = NcmlConfig(C=0.5, eps=1e-6, max_iter=cap_iters)
            _, _, state = train_ncml(pairs, config, return_state=True)
            assert state.mu.min() >= 0.0
            gap_to_identity = np.abs(
                state.eta - (state.mu - pairs.signs * state.beta)).max()
            assert gap_to_identity <= 1e-10
            assert abs(ncml_inner_gap(state, pairs)) <= 1e-6 * scale

    def test_gap_trace_decreases_overall(self):
        pairs = tiny_pairs()
        _, trace = train_ncml(pairs, NcmlConfig(C=0.5, eps=1e-6, max_iter=300))
        gaps = trace.gaps
        assert gaps[-1] < 1e-6 * gaps[0]


class TestDualityGap:

    def test_zero_state_gap_is_cap_times_pairs(self):
        pairs = tiny_pairs()
        config = NcmlConfig(C=0.5)
        n = pairs.n_pairs
        state = NcmlState(
            beta=np.zeros(n), eta=np.zeros(n), mu=np.zeros(n),
            delta=np.ones(n), gamma=np.zeros(n), bias=0.0,
            trace=TrainTrace(),
        )
        gap = ncml_duality_gap(state, pairs, config)
        assert abs(gap - config.C * n) <= 1e-10

    def test_recomputed_gap_matches_trace(self):
        pairs = medium_pairs()
        config = NcmlConfig(C=0.5, eps=0.01)
        model, trace, state = train_ncml(pairs, config, return_state=True)
        recomputed = ncml_duality_gap(state, pairs, config)
        assert abs(recomputed - model.meta.final_gap) <= 1e-9 * max(
            1.0, abs(model.meta.final_gap))
        assert model.meta.final_gap == min(trace.gaps)

    def test_inconsistent_state_rejected(self):
        pairs = axis_pairs()
        config = NcmlConfig(C=1.0)
        # beta claims full dual credit while mu and the slacks carry none,
        # which drives the gap to -2
        state = NcmlState(
            beta=np.array([1.0, 1.0]), eta=np.array([0.5, 0.0]),
            mu=np.zeros(2), delta=np.zeros(2),
            gamma=np.array([-0.5, 2.0]), bias=0.0, trace=TrainTrace(),
        )
        with pytest.raises(NumericalError):
            ncml_duality_gap(state, pairs, config)


class TestTraining:

    def test_synthetic_run_invariants(self):
        pairs = medium_pairs()
        config = NcmlConfig(C=0.5, eps=0.01)
        model, trace, state = train_ncml(pairs, config, return_state=True)
        assert model.meta.converged
        assert len(trace) <= 40
        assert trace.gaps[-1] < config.eps * trace.gaps[0]
        assert state.mu.min() >= 0.0
        scale = max(1.0, float(np.abs(model.matrix).max()))
        assert min_eigenvalue(model.matrix) >= -1e-10 * scale
        assert abs(ncml_inner_gap(state, pairs)) <= 1e-6 * max(
            1.0, config.C * pairs.n_pairs)

    def test_primal_meets_reference_solver(self):
        pairs = tiny_pairs()
        config = NcmlConfig(C=0.5, eps=1e-6, max_iter=300)
        _, trace = train_ncml(pairs, config)
        oracle = nonneg_combo_primal_oracle(
            gram(pairs).entries, pairs.signs, cap=config.C)
        achieved = trace.rows[-1].primal
        # the achieved primal can exceed the optimum by at most the final
        # duality gap, and can never beat it
        assert achieved >= oracle - 1e-6 * max(1.0, abs(oracle))
        assert achieved <= oracle + max(
            trace.gaps[-1], 1e-6 * max(1.0, abs(oracle))) + 1e-9

    def test_deterministic_for_fixed_seed(self):
        pairs = tiny_pairs()
        a, _ = train_ncml(pairs, NcmlConfig(C=0.5, seed=3))
        b, _ = train_ncml(pairs, NcmlConfig(C=0.5, seed=3))
        assert np.array_equal(a.matrix, b.matrix)
        assert a.meta.final_gap == b.meta.final_gap

    def test_progress_callback_sees_every_row(self):
        pairs = tiny_pairs()
        seen = []
        _, trace = train_ncml(pairs, NcmlConfig(C=0.5), progress=seen.append)
        assert len(seen) == len(trace)
        assert [r.iteration for r in seen] == list(range(1, len(trace) + 1))

    def test_iteration_cap_reports_no_convergence(self):
        pairs = tiny_pairs()
        model, trace = train_ncml(pairs, NcmlConfig(C=0.5, max_iter=1))
        assert not model.meta.converged
        assert len(trace) == 1

    def test_empty_pairs_rejected(self):
        pairs = PairSet(constraints=(), diffs=np.zeros((0, 3)))
        with pytest.raises(ValueError):
            train_ncml(pairs)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            NcmlConfig(C=-1.0)
        with pytest.raises(ValueError):
            NcmlConfig(eps=2.0)
        with pytest.raises(ValueError):
            NcmlConfig(max_iter=0)
        with pytest.raises(ValueError):
            NcmlConfig(qp_tol=-1e-9)
        with pytest.raises(ValueError):
            NcmlConfig(init_eta_scale=0.0)
