"""Stability: couplings, distortion costs, kernel-gap bounds, alignment."""
from __future__ import annotations

import math

import numpy as np
import pytest

from conftest import equilateral_triangle, random_metric_space, two_points
from mdslab.mds_core import double_center, eigendecompose
from mdslab.spaces import SampleSpec, Sphere, Torus, finite_space_from_matrix, fourth_moment_norm, sample
from mdslab.stability import (
    BoundViolated,
    Coupling,
    MarginalMismatch,
    TooLarge,
    UnsupportedSpace,
    check_gw_bound,
    check_transport_bound,
    circle_limit_map,
    convergence_experiment,
    coupling_identity,
    coupling_nearest,
    coupling_product,
    eigen_perturbation_check,
    gw_bruteforce,
    gw_cost,
    hs_gap,
    make_coupling,
    nearest_grid_assignment,
    procrustes,
    pullback_operator,
    w4_circle_grid,
    w4_circle_grid_numeric,
)

TWO_PI = 2.0 * math.pi


def gw_cost_bruteloop(G, DA, DB, p):
    """Quadruple-loop oracle for the coupling distortion cost."""
    total = 0.0
    n, m = G.shape
    for i in range(n):
        for j in range(m):
            for i2 in range(n):
                for j2 in range(m):
                    total += G[i, j] * G[i2, j2] * abs(DA[i, i2] - DB[j, j2]) ** p
    return total ** (1.0 / p)


class TestCouplings:
    def test_identity(self):
        tri = equilateral_triangle()
        c = coupling_identity(tri)
        assert np.allclose(c.G, np.diag([1 / 3] * 3))

    def test_product(self):
        a = two_points()
        b = two_points(2.0)
        c = coupling_product(a, b)
        assert np.allclose(c.G, 0.25)

    def test_nearest_refinement_mass(self):
        fine = sample(Sphere(1), SampleSpec("grid", 16))
        coarse = sample(Sphere(1), SampleSpec("grid", 8))
        c = coupling_nearest(fine, coarse, nearest_grid_assignment(16, 8))
        assert np.allclose(c.col_marginal, 1.0 / 8.0)
        assert np.allclose(c.row_marginal, 1.0 / 16.0)

    def test_marginal_mismatch(self):
        a = two_points()
        b = equilateral_triangle()
        with pytest.raises(MarginalMismatch):
            coupling_nearest(a, b, [0, 0])
        with pytest.raises(MarginalMismatch):
            make_coupling(np.full((2, 2), 0.3), a, two_points())


class TestGwCost:
    def test_identity_coupling_zero_exact(self, rng):
        fs = random_metric_space(rng, 9)
        c = coupling_identity(fs)
        assert gw_cost(c, fs, fs, 2) == 0.0
        assert gw_cost(c, fs, fs, 4) == 0.0

    def test_two_point_deterministic(self):
        a, b = two_points(1.0), two_points(1.5)
        c = coupling_nearest(a, b, [0, 1])
        assert gw_cost(c, a, b, 4) == pytest.approx(0.5 * 0.5**0.25)
        assert gw_cost(c, a, b, 2) == pytest.approx(0.5 * 0.5**0.5)

    def test_matches_quadruple_loop_oracle(self, rng):
        for p in (2, 4):
            A = random_metric_space(rng, 4, uniform=False)
            B = random_metric_space(rng, 5, uniform=False)
            c = coupling_product(A, B)
            got = gw_cost(c, A, B, p)
            want = gw_cost_bruteloop(c.G, A.D, B.D, p)
            assert got == pytest.approx(want, rel=1e-10)

    def test_relabeling_invariance(self, rng):
        A = random_metric_space(rng, 5)
        B = random_metric_space(rng, 6)
        c = coupling_product(A, B)
        perm = rng.permutation(5)
        A2 = finite_space_from_matrix(A.D[np.ix_(perm, perm)], A.w[perm])
        c2 = make_coupling(c.G[perm, :], A2, B)
        for p in (2, 4):
            assert gw_cost(c2, A2, B, p) == pytest.approx(gw_cost(c, A, B, p), rel=1e-12)

    def test_dominates_permutation_minimum(self, rng):
        for _ in range(50):
            n = int(rng.integers(2, 7))
            A = random_metric_space(rng, n)
            B = random_metric_space(rng, n)
            ident = coupling_nearest(A, B, np.arange(n))
            for p in (2, 4):
                assert gw_cost(ident, A, B, p) >= gw_bruteforce(A, B, p) - 1e-12


class TestGwBruteforce:
    def test_relabeled_copy_is_zero(self, rng):
        A = random_metric_space(rng, 5)
        perm = rng.permutation(5)
        B = finite_space_from_matrix(A.D[np.ix_(perm, perm)], A.w)
        assert gw_bruteforce(A, B, 4) == pytest.approx(0.0, abs=1e-12)

    def test_scaled_triangles(self):
        t1 = equilateral_triangle(1.0)
        t2 = equilateral_triangle(2.0)
        assert gw_bruteforce(t1, t2, 4) == pytest.approx((6.0 / 9.0) ** 0.25)

    def test_permutation_invariance(self, rng):
        A = random_metric_space(rng, 5)
        B = random_metric_space(rng, 5)
        perm = rng.permutation(5)
        A2 = finite_space_from_matrix(A.D[np.ix_(perm, perm)], A.w)
        assert gw_bruteforce(A2, B, 4) == pytest.approx(gw_bruteforce(A, B, 4), rel=1e-12)

    def test_too_large(self, rng):
        A = random_metric_space(rng, 9)
        with pytest.raises(TooLarge):
            gw_bruteforce(A, A, 4)


class TestW4:
    def test_closed_form_single_point(self):
        assert w4_circle_grid(1) == pytest.approx(math.pi * 5.0 ** (-0.25))

    def test_doubling_halves(self):
        for n in (1, 3, 10, 64):
            assert w4_circle_grid(2 * n) == pytest.approx(w4_circle_grid(n) / 2.0)

    def test_numeric_transport_oracle(self):
        for n in (1, 4, 16, 128):
            assert abs(w4_circle_grid(n) - w4_circle_grid_numeric(n)) <= 1e-6


class TestHsGapAndBounds:
    def test_same_space_zero(self, rng):
        fs = random_metric_space(rng, 8)
        assert hs_gap(fs, fs, coupling_identity(fs)) == 0.0

    def test_matches_quadruple_loop(self, rng):
        A = random_metric_space(rng, 4, uniform=False)
        B = random_metric_space(rng, 5, uniform=False)
        c = coupling_product(A, B)
        total = 0.0
        for i in range(4):
            for j in range(5):
                for i2 in range(4):
                    for j2 in range(5):
                        diff = 0.5 * (A.D[i, i2] ** 2 - B.D[j, j2] ** 2)
                        total += c.G[i, j] * c.G[i2, j2] * diff**2
        assert hs_gap(A, B, c) == pytest.approx(math.sqrt(total), rel=1e-10)

    def test_scaled_space_first_order(self, rng):
        # B = (1+eps) A makes every inequality step an equality, so the gap
        # sits exactly on the bound; check the first-order size and the
        # bound up to rounding
        fs = random_metric_space(rng, 12)
        eps = 0.01
        B = finite_space_from_matrix((1 + eps) * fs.D, fs.w)
        c = coupling_identity(fs)
        gap = hs_gap(fs, B, c)
        d2_norm = math.sqrt(float(fs.w @ fs.D**4 @ fs.w))
        assert gap == pytest.approx(eps * d2_norm, rel=2e-2)
        rep = check_gw_bound(fs, B, c)
        assert rep.lhs <= rep.rhs + 1e-12
        assert rep.lhs == pytest.approx(rep.rhs, rel=1e-12)

    def test_circle_refinement_bounds_hold(self):
        for n in (16, 32):
            fine_n = 8 * n
            fine = sample(Sphere(1), SampleSpec("grid", fine_n))
            coarse = sample(Sphere(1), SampleSpec("grid", n))
            assign = nearest_grid_assignment(fine_n, n)
            coup = coupling_nearest(fine, coarse, assign)
            rep = check_gw_bound(fine, coarse, coup)
            assert rep.ok and rep.slack > 0.0
            ft = TWO_PI * np.arange(fine_n) / fine_n
            ct = TWO_PI * np.arange(n) / n
            disp = np.abs(ft - ct[assign])
            disp = np.minimum(disp, TWO_PI - disp)
            w4 = float(np.sum(fine.w * disp**4) ** 0.25)
            rep2 = check_transport_bound(fine, coarse, coup, w4)
            assert rep2.ok and rep2.slack > 0.0

    def test_bound_report_require(self):
        fs = equilateral_triangle()
        rep = check_gw_bound(fs, fs, coupling_identity(fs))
        assert rep.require() is rep
        from mdslab.stability import BoundReport

        bad = BoundReport(name="x", lhs=2.0, rhs=1.0)
        with pytest.raises(BoundViolated):
            bad.require()


class TestProcrustes:
    def test_recovers_rotation(self, rng):
        X = rng.standard_normal((30, 3))
        theta = 0.83
        Q0 = np.array(
            [
                [math.cos(theta), -math.sin(theta), 0.0],
                [math.sin(theta), math.cos(theta), 0.0],
                [0.0, 0.0, 1.0],
            ]
        )
        Y = X @ Q0  # then X = Y @ Q0.T = (Q0 Y_i)_i
        res = procrustes(X, Y)
        assert res.residual <= 1e-10
        assert np.allclose(res.Q, Q0, atol=1e-10)

    def test_handles_reflection(self, rng):
        X = rng.standard_normal((25, 2))
        R = np.array([[1.0, 0.0], [0.0, -1.0]])
        res = procrustes(X, X @ R)
        assert res.residual <= 1e-10
        assert np.linalg.det(res.Q) == pytest.approx(-1.0)

    def test_noise_scale(self, rng):
        m = 4
        X = rng.standard_normal((60, m))
        theta = 0.4
        Q0 = np.eye(m)
        Q0[:2, :2] = [[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]]
        sigma = 1e-3
        Y = (X + rng.normal(scale=sigma, size=X.shape)) @ Q0
        res = procrustes(X, Y)
        assert res.residual <= 2 * sigma * math.sqrt(m)

    def test_never_worse_than_unaligned(self, rng):
        for _ in range(10):
            X = rng.standard_normal((12, 3))
            Y = rng.standard_normal((12, 3))
            w = np.full(12, 1 / 12)
            res = procrustes(X, Y, w)
            unaligned = math.sqrt(float(np.sum(w[:, None] * (X - Y) ** 2)))
            assert res.residual <= unaligned + 1e-12
            assert np.max(np.abs(res.Q.T @ res.Q - np.eye(3))) <= 1e-10

    def test_diagonal_mode(self, rng):
        X = rng.standard_normal((20, 5))
        signs = np.array([1.0, -1.0, 1.0, -1.0, -1.0])
        res = procrustes(X, X * signs, diagonal_only=True)
        assert res.diagonal_only
        assert res.residual <= 1e-12
        assert np.allclose(np.diagonal(res.Q), signs)
        # diagonal optimum is exhaustive over sign patterns: compare few
        Y = rng.standard_normal((20, 5))
        best = math.inf
        for mask in range(32):
            eps = np.array([1.0 if mask >> j & 1 else -1.0 for j in range(5)])
            best = min(best, float(np.mean(np.sum((X - Y * eps) ** 2, axis=1))))
        got = procrustes(X, Y, diagonal_only=True).residual
        assert got**2 == pytest.approx(best, rel=1e-12)


class TestEigenPerturbation:
    def test_identical_matrices(self, rng):
        S = rng.standard_normal((12, 12))
        S = (S + S.T) / 2
        rep = eigen_perturbation_check(S, S)
        assert rep.sup_gap == 0.0 and rep.matching_ok

    def test_rank_one_perturbation(self, rng):
        S = rng.standard_normal((16, 16))
        S = (S + S.T) / 2
        v = rng.standard_normal(16)
        v /= np.linalg.norm(v)
        eps = 1e-3
        rep = eigen_perturbation_check(S, S + eps * np.outer(v, v))
        assert rep.sup_gap <= eps + 1e-12
        assert rep.hs_norm == pytest.approx(eps, rel=1e-10)

    def test_hundred_random_pairs_exact(self, rng):
        for _ in range(100):
            n = int(rng.integers(2, 65))
            S1 = rng.standard_normal((n, n))
            S1 = (S1 + S1.T) / 2
            S2 = S1 + 0.1 * (lambda M: (M + M.T) / 2)(rng.standard_normal((n, n)))
            rep = eigen_perturbation_check(S1, S2)
            assert rep.matching_ok
            assert rep.sup_gap <= rep.hs_norm

    def test_projector_bound(self, rng):
        vals = np.array([3.0, 1.0, 0.5, 0.2, -0.4])
        Q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
        S1 = Q @ np.diag(vals) @ Q.T
        S1 = (S1 + S1.T) / 2
        delta = rng.standard_normal((5, 5))
        delta = (delta + delta.T) / 2
        delta *= 0.05 / np.linalg.norm(delta)
        rep = eigen_perturbation_check(S1, S1 + delta, projector_index=0)
        assert rep.projector_ok
        assert rep.projector_dims_match

    def test_circle_grid_pullback_matching(self):
        fine = sample(Sphere(1), SampleSpec("grid", 32))
        coarse = sample(Sphere(1), SampleSpec("grid", 16))
        assign = nearest_grid_assignment(32, 16)
        op_fine = double_center(fine)
        op_pull = pullback_operator(fine, coarse, assign)
        gap = hs_gap(fine, coarse, coupling_nearest(fine, coarse, assign))
        frob = float(np.linalg.norm(op_fine.S - op_pull.S))
        assert frob <= gap + 1e-12
        rep = eigen_perturbation_check(op_fine.S, op_pull.S)
        assert rep.sup_gap <= gap + 1e-12
        # the pullback keeps the coarse nonzero spectrum
        lam_coarse = eigendecompose(double_center(coarse)).eigenvalues
        lam_pull = eigendecompose(op_pull).eigenvalues
        nz = np.sort(lam_coarse[lam_coarse != 0.0])
        got = np.sort(lam_pull[lam_pull != 0.0])
        assert got.size == nz.size
        assert np.allclose(got, nz, atol=1e-12)


class TestConvergence:
    def test_circle_rows_decrease(self):
        rows = convergence_experiment(Sphere(1), [16, 32, 64, 128], 2)
        aligned = [r.aligned_l2 for r in rows]
        assert all(a > b for a, b in zip(aligned, aligned[1:]))
        gw2 = [r.gw2_images for r in rows]
        assert all(b <= a * 1.05 for a, b in zip(gw2, gw2[1:]))
        for r in rows:
            assert r.hs_lhs <= r.hs_rhs
            assert r.w4 == pytest.approx(w4_circle_grid(r.n))

    def test_limit_map_values(self):
        thetas = TWO_PI * np.arange(8) / 8
        L = circle_limit_map(thetas, 2)
        lam1 = 1.0
        assert np.allclose(L[:, 0], math.sqrt(2 * lam1) * np.cos(thetas), atol=1e-9)
        assert np.allclose(L[:, 1], math.sqrt(2 * lam1) * np.sin(thetas), atol=1e-9)
        L4 = circle_limit_map(thetas, 4)
        assert np.allclose(L4[:, 2], math.sqrt(2.0 / 9.0) * np.cos(3 * thetas), atol=1e-9)

    def test_torus_empirical_branch(self):
        rows = convergence_experiment(Torus(2), [4, 8, 16], 2)
        aligned = [r.aligned_l2 for r in rows]
        assert aligned[-1] <= 1e-10  # finest aligns with itself
        assert aligned[0] > aligned[1]
        assert math.isnan(rows[0].w4)

    def test_unsupported_space(self):
        with pytest.raises(UnsupportedSpace):
            convergence_experiment(Sphere(2), [8, 16], 2)
