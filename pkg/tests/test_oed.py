import math

import numpy as np
import pytest

from diffdesign import fim, numerics, oed
from diffdesign.errors import Infeasible, NonIntegerBudget, SingularInformation


def synthetic_tensor(n_obs, n_time, n_basis, rng, rank=None, gramian=None):
    """Random PSD elementary matrices with an SPD Gramian."""
    rank = rank or n_basis
    mats = np.empty((n_obs, n_time, n_basis, n_basis))
    for k in range(n_obs):
        for li in range(n_time):
            a = rng.standard_normal((n_basis, rank))
            mats[k, li] = a @ a.T
    if gramian is None:
        b = rng.standard_normal((n_basis, n_basis))
        gramian = b @ b.T + n_basis * np.eye(n_basis)
    return fim.FimTensor(matrices=mats, gramian=gramian,
                         instants=np.arange(n_time), alpha0=0.01, alpha1=1.0)


def phi_of(w, tensor):
    return oed.a_criterion(fim.combine(w, tensor), tensor.gramian)


class TestACriterion:
    def test_identity_pair(self):
        assert oed.a_criterion(np.eye(9), np.eye(9)) == 9.0

    def test_reported_spectrum_sums_to_criterion(self):
        # internal consistency of the published 2D spectrum: the reciprocal
        # eigenvalues must add up to the criterion value within table rounding
        recip = [0.27, 0.49, 0.77, 1.04, 1.24, 2.58, 3.39, 6.68, 16.48]
        assert abs(sum(recip) - 32.93) <= 0.05

    def test_matches_generalized_spectrum(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            a = rng.standard_normal((6, 6))
            upsilon = a @ a.T + np.eye(6)
            b = rng.standard_normal((6, 6))
            gram = b @ b.T + 6 * np.eye(6)
            eig = numerics.generalized_eig(upsilon, gram)
            phi = oed.a_criterion(upsilon, gram)
            assert abs(phi - np.sum(1.0 / eig.values)) <= 1e-8 * abs(phi)

    def test_singular_is_infinite(self):
        v = np.array([1.0, 2.0])
        assert oed.a_criterion(np.outer(v, v), np.eye(2)) == math.inf


class TestGradient:
    def test_identity_tensor(self):
        mats = np.broadcast_to(np.eye(4), (2, 3, 4, 4)).copy()
        tensor = fim.FimTensor(matrices=mats, gramian=np.eye(4),
                               instants=np.arange(3), alpha0=0.01, alpha1=1.0)
        w = np.full(6, 1.0 / 6.0)           # combine = I
        grad = oed.gradient(w, tensor)
        assert np.allclose(grad, -4.0)

    def test_zero_matrix_zero_component(self):
        rng = np.random.default_rng(1)
        tensor = synthetic_tensor(1, 3, 3, rng)
        tensor.matrices[0, 1] = 0.0
        w = np.array([1.0, 0.5, 1.0])
        grad = oed.gradient(w, tensor)
        assert grad[1] == 0.0
        assert np.all(grad <= 0.0)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        tensor = synthetic_tensor(2, 3, 4, rng)
        n = tensor.n_weights
        for _ in range(20):
            w = 0.2 + 0.6 * rng.random(n)
            grad = oed.gradient(w, tensor)
            step = 1e-6
            for idx in rng.integers(0, n, 3):
                wp, wm = w.copy(), w.copy()
                wp[idx] += step
                wm[idx] -= step
                fd = (phi_of(wp, tensor) - phi_of(wm, tensor)) / (2.0 * step)
                assert abs(fd - grad[idx]) <= 1e-5 * max(abs(fd), 1e-12)

    def test_singular_information_raises(self):
        rng = np.random.default_rng(3)
        tensor = synthetic_tensor(1, 2, 4, rng, rank=1)
        with pytest.raises(SingularInformation):
            oed.gradient(np.array([1.0, 0.0]), tensor)


class TestVertexOracle:
    def test_example(self):
        v = oed.vertex_oracle(np.array([-3.0, -1.0, -2.0]), 2)
        assert np.array_equal(v, [1.0, 0.0, 1.0])

    def test_tie_break_lowest_index(self):
        v = oed.vertex_oracle(np.full(5, -1.0), 3)
        assert np.array_equal(v, [1.0, 1.0, 1.0, 0.0, 0.0])

    def test_against_sort(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            g = -rng.random(12)
            c = int(rng.integers(1, 12))
            v = oed.vertex_oracle(g, c)
            expect = np.zeros(12)
            expect[np.argsort(g, kind="stable")[:c]] = 1.0
            assert np.array_equal(v, expect)

    def test_non_integer_budget(self):
        with pytest.raises(NonIntegerBudget):
            oed.vertex_oracle(np.array([-1.0, -2.0]), 1.5)


class TestTorsneyMaster:
    def test_single_vertex(self):
        rng = np.random.default_rng(5)
        tensor = synthetic_tensor(1, 3, 2, rng)
        gamma = oed.torsney_master(np.array([[1.0, 1.0, 0.0]]), tensor)
        assert np.array_equal(gamma, [1.0])

    def test_symmetric_pair_fixpoint(self):
        rng = np.random.default_rng(6)
        base = rng.standard_normal((3, 3))
        mat = base @ base.T + np.eye(3)
        mats = np.stack([mat, mat])[None, :, :, :].transpose(1, 0, 2, 3)
        tensor = fim.FimTensor(matrices=mats.reshape(2, 1, 3, 3),
                               gramian=np.eye(3), instants=np.array([0]),
                               alpha0=0.01, alpha1=1.0)
        vertices = np.array([[1.0, 0.0], [0.0, 1.0]])
        gamma = oed.torsney_master(vertices, tensor,
                                   gamma0=np.array([0.5, 0.5]))
        assert np.allclose(gamma, [0.5, 0.5])

    def test_three_vertices_match_grid(self):
        rng = np.random.default_rng(7)
        tensor = synthetic_tensor(1, 3, 2, rng, rank=2)
        vertices = np.eye(3)
        gamma = oed.torsney_master(vertices, tensor, tol=1e-10, max_iter=20000)
        w = gamma @ vertices
        phi = phi_of(w, tensor)

        step = 1e-3
        a = np.arange(0.0, 1.0 + step / 2, step)
        g1, g2 = np.meshgrid(a, a, indexing="ij")
        g3 = 1.0 - g1 - g2
        mask = g3 >= -1e-12
        flat = tensor.flat()
        ups = (g1[..., None, None] * flat[0] + g2[..., None, None] * flat[1]
               + g3[..., None, None] * flat[2])
        det = ups[..., 0, 0] * ups[..., 1, 1] - ups[..., 0, 1] * ups[..., 1, 0]
        b = tensor.gramian
        tr = (b[0, 0] * ups[..., 1, 1] - b[0, 1] * ups[..., 1, 0]
              - b[1, 0] * ups[..., 0, 1] + b[1, 1] * ups[..., 0, 0])
        with np.errstate(divide="ignore", invalid="ignore"):
            phis = np.where(mask & (det > 0.0), tr / det, np.inf)
        assert phi <= phis.min() * (1.0 + 1e-4)

    def test_monotone_under_rejection(self):
        rng = np.random.default_rng(8)
        tensor = synthetic_tensor(2, 2, 3, rng)
        vertices = np.array([
            [1.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 1.0],
            [1.0, 0.0, 1.0, 0.0],
        ])
        gamma0 = np.array([0.8, 0.1, 0.1])
        phi0 = phi_of(gamma0 @ vertices, tensor)
        gamma = oed.torsney_master(vertices, tensor, gamma0=gamma0)
        assert phi_of(gamma @ vertices, tensor) <= phi0 * (1.0 + 1e-12)


class TestOptimalityResidual:
    def test_hand_built_example(self):
        # derivative vector (-3, -2, -1) with weights (1, 0.5, 0) satisfies
        # the optimality bands exactly at xi = 2
        class FakeTensor:
            pass

        neg = np.array([3.0, 2.0, 1.0])
        w = np.array([1.0, 0.5, 0.0])
        frac = (w > oed.WEIGHT_ZERO_TOL) & (w < 1 - oed.WEIGHT_ZERO_TOL)
        xi = neg[frac].mean()
        assert xi == 2.0
        ones = w >= 1 - oed.WEIGHT_ZERO_TOL
        zeros = w <= oed.WEIGHT_ZERO_TOL
        viol = np.zeros(3)
        viol[ones] = np.maximum(0.0, xi - neg[ones])
        viol[frac] = np.abs(neg[frac] - xi)
        viol[zeros] = np.maximum(0.0, neg[zeros] - xi)
        assert np.all(viol == 0.0)

    def test_equal_gradients_zero_violation(self):
        mats = np.broadcast_to(np.eye(3), (1, 4, 3, 3)).copy()
        tensor = fim.FimTensor(matrices=mats, gramian=np.eye(3),
                               instants=np.arange(4), alpha0=0.01, alpha1=1.0)
        w = np.full(4, 0.5)
        xi, viol = oed.optimality_residual(w, tensor, budget=2)
        assert viol.max() <= 1e-12
        assert xi > 0.0

    def test_interior_mean_rule(self):
        rng = np.random.default_rng(9)
        tensor = synthetic_tensor(1, 4, 3, rng)
        w = np.array([1.0, 0.4, 0.3, 0.0])
        neg = -oed.gradient(w, tensor)
        xi, _ = oed.optimality_residual(w, tensor, budget=2)
        assert abs(xi - neg[1:3].mean()) <= 1e-12


class TestRoundDesign:
    def test_binary_unchanged(self):
        d = oed.Design(weights=np.array([1.0, 0.0, 1.0, 0.0]), budget=2,
                       n_obs=2, n_time=2)
        r = oed.round_design(d)
        assert np.array_equal(r.weights, d.weights)

    def test_tie_lowest_index(self):
        d = oed.Design(weights=np.array([0.9, 0.5, 0.5, 0.1]), budget=2,
                       n_obs=2, n_time=2)
        r = oed.round_design(d)
        assert np.array_equal(r.weights, [1.0, 1.0, 0.0, 0.0])
        assert r.provenance == "rounded"

    def test_rounding_cannot_beat_relaxed(self):
        rng = np.random.default_rng(10)
        tensor = synthetic_tensor(2, 3, 2, rng)
        result = oed.simplicial_decomposition(tensor, budget=2, tol_outer=1e-6)
        rounded = oed.round_design(result.design)
        assert phi_of(rounded.weights, tensor) >= result.phi * (1.0 - 1e-10)


class TestSimplicialDecomposition:
    def test_dominant_matrix_selected(self):
        rng = np.random.default_rng(11)
        n_basis = 3
        mats = np.empty((1, 4, n_basis, n_basis))
        dom = 3.0 * np.eye(n_basis)
        mats[0, 0] = dom
        for li in range(1, 4):
            a = rng.standard_normal((n_basis, n_basis))
            small = a @ a.T
            mats[0, li] = 0.5 * small / np.linalg.norm(small, 2)
        tensor = fim.FimTensor(matrices=mats, gramian=np.eye(n_basis),
                               instants=np.arange(4), alpha0=0.01, alpha1=1.0)
        result = oed.simplicial_decomposition(tensor, budget=1, tol_outer=1e-5)
        assert result.design.weights[0] >= 1.0 - 1e-5
        assert result.design.weights[1:].max() <= 1e-5

    def test_budget_active(self):
        rng = np.random.default_rng(12)
        tensor = synthetic_tensor(2, 4, 3, rng)
        result = oed.simplicial_decomposition(tensor, budget=3)
        assert abs(result.design.weights.sum() - 3.0) <= 1e-8

    def test_history_nonincreasing(self):
        rng = np.random.default_rng(13)
        tensor = synthetic_tensor(3, 4, 3, rng)
        result = oed.simplicial_decomposition(tensor, budget=4)
        diffs = np.diff(result.phi_history)
        assert diffs.max() <= 1e-9 * abs(result.phi_history[0])
        assert result.phi_history[-1] < result.phi_history[0]

    def test_certificate_on_convergence(self):
        rng = np.random.default_rng(14)
        tensor = synthetic_tensor(2, 5, 3, rng)
        result = oed.simplicial_decomposition(tensor, budget=3, tol_outer=1e-4)
        assert result.converged
        assert result.violations.max() <= 1e-4 * result.xi

    def test_eigen_identity(self):
        rng = np.random.default_rng(15)
        tensor = synthetic_tensor(2, 4, 3, rng)
        result = oed.simplicial_decomposition(tensor, budget=2)
        assert abs(np.sum(1.0 / result.eigenvalues) - result.phi) \
            <= 1e-8 * abs(result.phi)

    def test_mirror_symmetric_problem(self):
        rng = np.random.default_rng(16)
        n_basis, n_time = 3, 3
        perm = np.array([1, 0, 2])
        p = np.eye(n_basis)[perm]
        mats = np.empty((2, n_time, n_basis, n_basis))
        for li in range(n_time):
            a = rng.standard_normal((n_basis, n_basis))
            mats[0, li] = a @ a.T
            mats[1, li] = p @ mats[0, li] @ p.T
        gram = np.array([[2.0, 0.3, 0.4], [0.3, 2.0, 0.4], [0.4, 0.4, 3.0]])
        assert np.array_equal(p @ gram @ p.T, gram)
        tensor = fim.FimTensor(matrices=mats, gramian=gram,
                               instants=np.arange(n_time), alpha0=0.01, alpha1=1.0)
        result = oed.simplicial_decomposition(tensor, budget=2, tol_outer=1e-6)
        w = result.design.weights.reshape(2, n_time)
        mirrored = w[::-1].reshape(-1)
        assert abs(phi_of(mirrored, tensor) - result.phi) <= 1e-6 * abs(result.phi)

    def test_infeasible(self):
        rng = np.random.default_rng(17)
        tensor = synthetic_tensor(1, 3, 4, rng, rank=1)
        # rank-1 matrices cannot fill a 4-dimensional basis with 3 indices
        with pytest.raises(Infeasible):
            oed.simplicial_decomposition(tensor, budget=2)

    def test_convexity_along_segments(self):
        rng = np.random.default_rng(18)
        tensor = synthetic_tensor(2, 3, 3, rng)
        n = tensor.n_weights
        for _ in range(5):
            w1 = 0.2 + 0.7 * rng.random(n)
            w2 = 0.2 + 0.7 * rng.random(n)
            for lam in (0.25, 0.5, 0.75):
                mix = phi_of(lam * w1 + (1 - lam) * w2, tensor)
                bound = lam * phi_of(w1, tensor) + (1 - lam) * phi_of(w2, tensor)
                assert mix <= bound + 1e-9

    def test_gradient_sign(self):
        rng = np.random.default_rng(19)
        tensor = synthetic_tensor(2, 3, 3, rng)
        for _ in range(5):
            w = 0.1 + 0.8 * rng.random(tensor.n_weights)
            assert np.all(oed.gradient(w, tensor) <= 0.0)


class TestSolveSpatial:
    def test_single_instant_identical(self):
        rng = np.random.default_rng(20)
        tensor = synthetic_tensor(5, 1, 3, rng)
        st = oed.simplicial_decomposition(tensor, budget=2)
        sp = oed.solve_spatial(tensor, budget=2)
        assert np.abs(st.design.weights - sp.design.weights).max() <= 1e-10
        assert abs(st.phi - sp.phi) <= 1e-12 * abs(st.phi)

    def test_budget_activity_near_full(self):
        rng = np.random.default_rng(21)
        tensor = synthetic_tensor(5, 3, 3, rng)
        result = oed.solve_spatial(tensor, budget=4)
        assert abs(result.design.weights.sum() - 4.0) <= 1e-8

    def test_spatial_never_beats_space_time(self):
        rng = np.random.default_rng(22)
        tensor = synthetic_tensor(4, 3, 3, rng)
        spatial = oed.solve_spatial(tensor, budget=1, tol_outer=1e-6)
        free = oed.simplicial_decomposition(tensor, budget=3, tol_outer=1e-6)
        assert free.phi <= spatial.phi * (1.0 + 1e-9)
