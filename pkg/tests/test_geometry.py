from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kroncov.errors import DimensionError, NumericalError, SizeLimitError
from kroncov.geometry import (
    TangentBasis,
    avar_ratio_exact,
    avar_ratio_lower_bound,
    cos_sq_angle,
    fim_orthogonality_check,
    kron_cos,
    kron_tangent_basis,
    mle_aux_basis,
    orthog_param,
    orthog_unparam,
    principal_angles,
    pt_aux_basis,
    spiked_cos_inv_sq,
    sym_basis,
)
from kroncov.linalg import KroneckerCov, fim_inner, logdet, random_orthogonal, random_spd
from kroncov.partial_trace import partial_trace_matrix

from oracles import avar_ratio_delta_method, sym_basis_loop

seeds = st.integers(0, 2**32 - 1)


def rng(seed=0):
    return np.random.default_rng(seed)


def fim_gram(sigma, u, v):
    return np.array([[fim_inner(sigma, a, b) for b in v] for a in u])


class TestBases:
    def test_sym_basis_matches_loop(self):
        for p in (1, 2, 4):
            assert np.array_equal(sym_basis(p), sym_basis_loop(p))

    def test_scalar_tangent(self):
        b = kron_tangent_basis(np.eye(1), np.eye(1))
        assert b.dim == 1 and b.ambient_dim == 1

    @pytest.mark.parametrize("dims", [(2, 2), (2, 3), (3, 3), (1, 4)])
    def test_dimensions(self, dims):
        g = rng(sum(dims))
        p1, p2 = dims
        tan = kron_tangent_basis(random_spd(p1, g), random_spd(p2, g))
        aux = pt_aux_basis(dims)
        assert tan.dim == comb(p1 + 1, 2) + comb(p2 + 1, 2) - 1
        assert aux.dim == comb(p1 * p2 + 1, 2) - tan.dim
        assert tan.ambient_dim == aux.ambient_dim == comb(p1 * p2 + 1, 2)

    def test_dims_2x2_count(self):
        assert kron_tangent_basis(np.eye(2), np.eye(2)).dim == 5
        assert pt_aux_basis((2, 2)).dim == 5

    def test_tangent_spans_kron_directions(self):
        g = rng(1)
        s1, s2 = random_spd(2, g), random_spd(3, g)
        q = kron_tangent_basis(s1, s2).vectors.reshape(-1, 36)
        proj = q.T @ np.linalg.pinv(q.T)
        for _ in range(5):
            h1 = g.standard_normal((2, 2))
            h2 = g.standard_normal((3, 3))
            d = np.kron(h1 + h1.T, s2) + np.kron(s1, h2 + h2.T)
            assert np.allclose(proj @ d.ravel(), d.ravel(), atol=1e-10)

    def test_pt_aux_vanishing_traces(self):
        aux = pt_aux_basis((2, 3))
        v = np.einsum("m,mab->ab", rng(2).standard_normal(aux.dim), aux.vectors)
        assert np.abs(partial_trace_matrix(v, (2, 3), 1)).max() < 1e-12
        assert np.abs(partial_trace_matrix(v, (2, 3), 2)).max() < 1e-12
        assert np.allclose(np.trace(aux.vectors, axis1=1, axis2=2), 0.0, atol=1e-12)

    def test_orthogonal_at_identity(self):
        tan = kron_tangent_basis(np.eye(2), np.eye(3)).vectors
        aux = pt_aux_basis((2, 3)).vectors
        gram = np.einsum("mab,nab->mn", tan, aux)
        assert np.abs(gram).max() < 1e-12

    def test_mle_aux_fim_orthogonal(self):
        g = rng(3)
        s1, s2 = random_spd(2, g), random_spd(3, g)
        sig = np.kron(s1, s2)
        tan = kron_tangent_basis(s1, s2).vectors
        aux = mle_aux_basis(s1, s2).vectors
        assert np.abs(fim_gram(sig, tan, aux)).max() < 1e-10

    def test_mle_aux_matches_pt_aux_at_identity(self):
        a = mle_aux_basis(np.eye(2), np.eye(2)).vectors.reshape(5, -1)
        b = pt_aux_basis((2, 2)).vectors.reshape(5, -1)
        assert np.linalg.matrix_rank(np.vstack([a, b]), tol=1e-10) == 5

    def test_requires_k2(self):
        with pytest.raises(DimensionError):
            pt_aux_basis((2, 2, 2))

    def test_size_cap(self):
        with pytest.raises(SizeLimitError):
            pt_aux_basis((9, 8))


class TestPrincipalAngles:
    def test_same_subspace(self):
        g = rng(4)
        s1, s2 = random_spd(2, g), random_spd(2, g)
        b = kron_tangent_basis(s1, s2)
        ang = principal_angles(b, b, np.kron(s1, s2))
        assert np.allclose(ang, 0.0, atol=1e-6)

    def test_fim_complement(self):
        g = rng(5)
        s1, s2 = random_spd(2, g), random_spd(2, g)
        ang = principal_angles(kron_tangent_basis(s1, s2), mle_aux_basis(s1, s2), np.kron(s1, s2))
        assert np.allclose(ang, np.pi / 2, atol=1e-8)

    def test_identity_pt_efficient(self):
        ang = principal_angles(kron_tangent_basis(np.eye(2), np.eye(2)), pt_aux_basis((2, 2)), np.eye(4))
        assert ang.min() == pytest.approx(np.pi / 2, abs=1e-8)

    def test_ascending_in_range(self):
        g = rng(6)
        s1, s2 = random_spd(2, g), random_spd(3, g)
        ang = principal_angles(kron_tangent_basis(s1, s2), pt_aux_basis((2, 3)), np.kron(s1, s2))
        assert np.all(np.diff(ang) >= -1e-12)
        assert ang.min() >= 0 and ang.max() <= np.pi / 2

    def test_rank_deficient(self):
        v = np.stack([np.eye(2), 2 * np.eye(2)])
        with pytest.raises(NumericalError, match="rank deficient"):
            principal_angles(TangentBasis(v, "x"), TangentBasis(v[:1], "y"), np.eye(2))

    def test_dims_mismatch(self):
        with pytest.raises(DimensionError):
            principal_angles(pt_aux_basis((2, 2)), pt_aux_basis((2, 3)), np.eye(4))


class TestAvarRatio:
    def test_identity(self):
        assert avar_ratio_exact(np.eye(2), np.eye(2)) == pytest.approx(1.0, abs=1e-10)
        assert avar_ratio_exact(3 * np.eye(2), 0.5 * np.eye(3)) == pytest.approx(1.0, abs=1e-10)

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_delta_method_oracle(self, seed):
        g = rng(seed)
        dims = [(2, 2), (2, 3)][seed % 2]
        s1, s2 = random_spd(dims[0], g), random_spd(dims[1], g)
        assert avar_ratio_exact(s1, s2) == pytest.approx(avar_ratio_delta_method(s1, s2), rel=1e-5)

    def test_boundary_both_factors(self):
        # exact worst case with both factors at the boundary tends to p1 * p2
        vals = [avar_ratio_exact(np.diag([1, e]), np.diag([1, e])) for e in (1e-1, 1e-2, 1e-3, 1e-4)]
        assert np.all(np.diff(vals) > 0)
        assert vals[-1] == pytest.approx(4.0, abs=5e-3)
        d = np.diag([1, 1e-3])
        assert avar_ratio_delta_method(d, d, h=1e-8) == pytest.approx(vals[2], rel=1e-4)

    def test_boundary_one_factor(self):
        # only sigma1 degenerates: the ratio tends to p1, matching the bound
        for p1 in (2, 3):
            lam = np.r_[1.0, np.full(p1 - 1, 1e-4)]
            ex = avar_ratio_exact(np.diag(lam), np.eye(2))
            assert ex == pytest.approx(p1, rel=1e-3)
            assert ex == pytest.approx(avar_ratio_lower_bound(lam, np.ones(2)), rel=1e-6)

    @given(seeds)
    @settings(max_examples=15, deadline=None)
    def test_orthogonal_invariance(self, seed):
        g = rng(seed)
        s1, s2 = random_spd(2, g), random_spd(3, g)
        o1, o2 = random_orthogonal(2, g), random_orthogonal(3, g)
        base = avar_ratio_exact(s1, s2)
        assert avar_ratio_exact(o1 @ s1 @ o1.T, o2 @ s2 @ o2.T) == pytest.approx(base, rel=1e-6)

    def test_exceeds_lower_bound(self):
        g = rng(7)
        for _ in range(50):
            lam, gam = g.uniform(0.05, 5, 2), g.uniform(0.05, 5, 3)
            ex = avar_ratio_exact(np.diag(lam), np.diag(gam))
            assert ex >= avar_ratio_lower_bound(lam, gam) - 1e-9


class TestEigenAngles:
    def test_constant(self):
        assert cos_sq_angle(np.full(5, 2.0)) == pytest.approx(1.0)
        assert avar_ratio_lower_bound(np.ones(3), np.ones(4)) == pytest.approx(1.0)

    def test_linear(self):
        assert avar_ratio_lower_bound([1, 2, 3], [1, 1]) == pytest.approx(14 / 12)

    @pytest.mark.parametrize("p", [2, 3, 7])
    def test_boundary_sweep(self, p):
        vals = [avar_ratio_lower_bound(np.r_[1.0, np.full(p - 1, e)], np.ones(2)) for e in (1e-1, 1e-3, 1e-6)]
        assert np.all(np.diff(vals) > 0)
        assert vals[-1] == pytest.approx(p, rel=1e-4)

    def test_less_than_one_unless_constant(self):
        assert cos_sq_angle([1.0, 1.0001]) < 1.0

    @pytest.mark.parametrize("bad", [[], [1.0, 0.0], [1.0, -2.0], [np.inf, 1.0]])
    def test_rejects(self, bad):
        with pytest.raises(DimensionError):
            cos_sq_angle(bad)

    def test_lower_bound_needs_input(self):
        with pytest.raises(DimensionError):
            avar_ratio_lower_bound()

    @pytest.mark.parametrize("q,m,a,b", [(1, 5, 3.0, 1.0), (2, 10, 0.5, 2.0), (4, 4, 1.0, 1.0), (3, 20, 10.0, 0.1)])
    def test_spiked_closed_form(self, q, m, a, b):
        lam = np.r_[np.full(q, a + b), np.full(m - q, b)]
        assert spiked_cos_inv_sq(q, m, a, b) == pytest.approx(1 / cos_sq_angle(lam), rel=1e-12)

    def test_spiked_bad_q(self):
        with pytest.raises(DimensionError):
            spiked_cos_inv_sq(0, 4, 1.0, 1.0)

    @pytest.mark.parametrize("a", [1.5, 2.0, 3.0])
    def test_geometric_profile(self, a):
        for m in (5, 50, 200):
            lam = a ** np.arange(1.0, m + 1)
            cos = (a**m - 1) * np.sqrt(a * a - 1) / ((a - 1) * np.sqrt(a ** (2 * m) - 1) * np.sqrt(m))
            assert cos_sq_angle(lam) == pytest.approx(cos**2, rel=1e-10)
        # cos^-2 grows like m (a - 1)^2 / (a^2 - 1); it can never exceed m
        assert 1 / cos_sq_angle(a ** np.arange(1.0, 201)) / 200 == pytest.approx((a - 1) ** 2 / (a * a - 1), rel=2e-2)

    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_polynomial_profile_bounded(self, d):
        vals = [1 / cos_sq_angle(np.arange(1.0, m + 1) ** d) for m in (10, 100, 1000, 2000)]
        limit = (d + 1) ** 2 / (2 * d + 1)
        assert np.all(np.diff(vals) > 0) and vals[-1] < limit
        assert vals[-1] == pytest.approx(limit, rel=1e-2)

    @given(seeds)
    @settings(max_examples=30, deadline=None)
    def test_kron_cos_product(self, seed):
        g = rng(seed)
        spectra = [g.uniform(0.1, 3, d) for d in g.integers(1, 5, 3)]
        long = spectra[0]
        for lam in spectra[1:]:
            long = np.kron(long, lam)
        assert kron_cos(spectra) == pytest.approx(np.sqrt(cos_sq_angle(long)), rel=1e-10)


class TestOrthogParam:
    def test_identity(self):
        op = orthog_param(KroneckerCov((np.eye(2), np.eye(3))))
        assert op.c == pytest.approx(0.0)
        assert all(np.allclose(t, np.eye(t.shape[0])) for t in op.tilde_factors)

    def test_scaled_identity(self):
        op = orthog_param(KroneckerCov((2 * np.eye(2), np.eye(3))))
        assert op.c == pytest.approx(np.log(2))
        assert np.allclose(op.tilde_factors[0], np.eye(2))

    @given(seeds)
    @settings(max_examples=25, deadline=None)
    def test_round_trip_and_scale_invariance(self, seed):
        g = rng(seed)
        s1, s2 = random_spd(2, g), random_spd(3, g)
        kc = KroneckerCov((s1, s2), g.uniform(0.2, 5))
        op = orthog_param(kc)
        assert all(abs(logdet(t)) < 1e-10 for t in op.tilde_factors)
        assert op.c == pytest.approx(logdet(kc.materialize()) / kc.p, abs=1e-10)
        assert np.allclose(orthog_unparam(op).materialize(), kc.materialize(), rtol=1e-10)
        c = g.uniform(0.1, 10)
        op2 = orthog_param(KroneckerCov((c * s1, s2 / c), kc.scale))
        assert op2.c == pytest.approx(op.c, abs=1e-10)
        for a, b in zip(op.tilde_factors, op2.tilde_factors):
            assert np.allclose(a, b, rtol=1e-10)


class TestFimOrthogonality:
    def test_identity_constants(self):
        res = fim_orthogonality_check(KroneckerCov((np.eye(2), np.eye(3))))
        assert res.max_cross < 1e-10
        assert res.scale_ratio == pytest.approx(6.0)
        # v = 1: ||Sigma||^2_Sigma = p / 2, i.e. p times the one-dimensional norm
        assert fim_inner(np.eye(6), np.eye(6), np.eye(6)) == pytest.approx(3.0)

    @pytest.mark.parametrize("seed", range(3))
    def test_random_factors(self, seed):
        g = rng(seed)
        kc = KroneckerCov((random_spd(2, g), random_spd(3, g)), 1.7)
        res = fim_orthogonality_check(kc, v=0.3)
        assert res.max_cross < 1e-8
        assert res.scale_ratio == pytest.approx(6.0, rel=1e-10)
        for got, want in zip(res.block_ratios, res.expected_block_ratios):
            assert np.allclose(got, want, rtol=1e-8)
        assert res.expected_block_ratios == [3.0, 2.0]
