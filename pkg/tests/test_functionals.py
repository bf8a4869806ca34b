import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from wienerdc.errors import ContractError, DegenerateError
from wienerdc.functionals import (
    BreuerMajorSpec,
    block_sums,
    breuer_major_sample,
    estimate_gamma_sq,
    malliavin_entry_variance,
    malliavin_matrices,
    malliavin_matrix_sample,
    qf_exact_moments,
    qf_oracle_moments,
    qf_sample,
    QuadraticFormVector,
    simulate_breuer_major,
)
from wienerdc.gausssim import AutocovarianceModel, CovarianceMatrix, sample_stationary
from wienerdc.hermite import HermiteExpansion

H1 = HermiteExpansion.from_terms({1: 1.0})
H2 = HermiteExpansion.from_terms({2: 1.0})
IID = AutocovarianceModel.iid()


def spec(phi=H2, model=IID, partition=(0, 1), n=100):
    return BreuerMajorSpec(phi, model, tuple(partition), n)


class TestBreuerMajorSample:
    def test_linear_iid_is_standard_normal(self):
        F = breuer_major_sample(spec(H1, n=100), 100_000, seed=1).data[:, 0]
        se = math.sqrt(2 / F.size)
        assert abs(F.var() - 1) < 3 * se

    def test_fixed_path_arithmetic(self):
        s = spec(H2, n=4)
        assert block_sums(s, np.array([[1.0, -1.0, 2.0, 0.0]]))[0, 0] == pytest.approx(1.0, abs=1e-14)

    def test_disjoint_blocks_uncorrelated(self):
        F = breuer_major_sample(spec(H2, partition=(0, 0.5, 1), n=50), 40_000, seed=2).data
        prod = F[:, 0] * F[:, 1]
        assert abs(prod.mean()) < 3 * prod.std(ddof=1) / math.sqrt(prod.size)

    def test_empty_block_names_index(self):
        with pytest.raises(DegenerateError, match="block 2"):
            spec(partition=(0, 0.5, 0.6, 1), n=4)

    def test_uncentered_phi_rejected(self):
        with pytest.raises(ContractError):
            spec(HermiteExpansion.from_terms({0: 1.0, 2: 1.0}))

    def test_nonincreasing_partition(self):
        with pytest.raises(ContractError):
            spec(partition=(0, 0.5, 0.5, 1))

    def test_variance_matches_exact_covariance(self):
        s = spec(H2, AutocovarianceModel.ar(0.5), (0, 0.5, 1), n=40)
        F = breuer_major_sample(s, 40_000, seed=3).data
        C = s.exact_covariance()
        emp = np.cov(F.T)
        se = np.sqrt((np.diag(C)[:, None] * np.diag(C)[None, :] + C**2) / F.shape[0])
        assert np.all(np.abs(emp - C) < 4 * se)


class TestMalliavinMatrix:
    def test_linear_diag(self):
        s = spec(H1, partition=(0, 0.5, 1), n=4)
        M = malliavin_matrix_sample(s, np.array([0.3, -1.0, 2.0, 0.5]))
        assert np.allclose(M, np.diag([0.5, 0.5]), atol=1e-15)

    def test_linear_is_deterministic(self):
        model = AutocovarianceModel.ar(0.4)
        s = spec(H1, model, (0, 0.3, 1), n=30)
        paths = sample_stationary(model, s.length, 50, seed=4)
        M = malliavin_matrices(s, paths)
        assert np.ptp(M, axis=0).max() == 0.0
        lab = s.labels()
        T = model.toeplitz(s.length)
        expect = np.array([[T[np.ix_(lab == i, lab == j)].sum() for j in range(2)] for i in range(2)]) / 30
        assert np.allclose(M[0], expect, atol=1e-13)

    def test_h2_diagonal_is_2g_squared(self):
        s = spec(H2, n=6)
        g = np.array([0.1, -0.4, 1.3, 2.0, -0.2, 0.7])
        assert malliavin_matrix_sample(s, g)[0, 0] == pytest.approx(2 * np.sum(g * g) / 6, rel=1e-13)

    def test_h2_diagonal_mean(self):
        s = spec(H2, n=20)
        M = malliavin_matrices(s, np.random.default_rng(5).standard_normal((20_000, 20)))[:, 0, 0]
        assert abs(M.mean() - 2) < 3 * M.std(ddof=1) / math.sqrt(M.size)

    @pytest.mark.parametrize("model", [AutocovarianceModel.ar(0.6), AutocovarianceModel.fgn(0.7),
                                       AutocovarianceModel.table([1, 0.3, -0.2])])
    def test_banded_and_fft_paths_agree_with_double_sum(self, model):
        phi = HermiteExpansion.from_terms({2: 1.0, 3: 0.5})
        s = spec(phi, model, (0, 0.4, 1), n=25)
        paths = sample_stationary(model, s.length, 3, seed=6)
        M = malliavin_matrices(s, paths)
        dphi = s.phi_prime(paths)
        p1 = s.phi_shift(paths)
        T = model.toeplitz(s.length)
        lab = s.labels()
        for r in range(3):
            full = dphi[r][:, None] * p1[r][None, :] * T
            ref = np.array([[full[np.ix_(lab == i, lab == j)].sum() for j in range(2)] for i in range(2)]) / 25
            assert np.allclose(M[r], ref, atol=1e-12)

    def test_wrong_path_length(self):
        with pytest.raises(ContractError):
            malliavin_matrix_sample(spec(n=10), np.zeros(9))


class TestGamma:
    def test_linear_target_itself_gives_zero(self):
        s = spec(H1, AutocovarianceModel.ar(0.3), (0, 0.5, 1), n=16)
        M = malliavin_matrix_sample(s, np.zeros(16))
        est = estimate_gamma_sq(s, CovarianceMatrix(M), 100, seed=7)
        assert est.value == pytest.approx(0.0, abs=1e-28)

    def test_h2_iid_variance(self):
        est = estimate_gamma_sq(spec(H2, n=10), CovarianceMatrix(np.array([[2.0]])), 50_000, seed=8)
        assert abs(est.value - 0.8) < 3 * est.se

    def test_quarter_scaling(self):
        target = CovarianceMatrix(np.array([[2.0]]))
        a = estimate_gamma_sq(spec(H2, n=16), target, 40_000, seed=9)
        b = estimate_gamma_sq(spec(H2, n=64), target, 40_000, seed=9)
        assert a.value / b.value == pytest.approx(4.0, rel=0.05)

    def test_needs_two_replicates(self):
        with pytest.raises(ContractError):
            estimate_gamma_sq(spec(), CovarianceMatrix.identity(1), 1, seed=0)

    def test_gamma_subset_matches(self):
        s = spec(H2, n=12)
        t = CovarianceMatrix(np.array([[2.0]]))
        full = simulate_breuer_major(s, 3000, 1, target=t).hs_sq
        part = simulate_breuer_major(s, 3000, 1, target=t, gamma_replicates=500).hs_sq
        assert np.array_equal(full[:500], part)


class TestEntryVariance:
    @pytest.mark.parametrize("model", [IID, AutocovarianceModel.ar(0.5), AutocovarianceModel.table([1, 0.4, 0.1])])
    def test_mc_variance_below_quadruple_sum(self, model):
        phi = HermiteExpansion.from_terms({2: 1.0, 3: 0.3})
        s = spec(phi, model, (0, 0.5, 1), n=12)
        ev = malliavin_entry_variance(s)
        paths = sample_stationary(model, s.length, 40_000, seed=10)
        M = malliavin_matrices(s, paths)
        v = M.var(axis=0, ddof=1)
        k4 = ((M - M.mean(axis=0)) ** 4).mean(axis=0)
        se = np.sqrt(np.maximum(k4 - v**2, 0) / M.shape[0])
        assert np.all(v <= ev.majorant + 5 * se)
        # the exact variance itself is an independent check of the diagram formula
        assert np.all(np.abs(v - ev.exact) < 5 * se + 1e-12)

    def test_size_limit(self):
        with pytest.raises(ContractError):
            malliavin_entry_variance(spec(n=40))


def chi_qf():
    return QuadraticFormVector(np.eye(2))


class TestQuadraticForms:
    def test_chi_square_moments(self):
        mo = qf_exact_moments(chi_qf())
        assert mo.cov[0, 0] == pytest.approx(4.0)
        assert mo.fourth_F == pytest.approx(144.0)
        assert mo.fourth_N == pytest.approx(48.0)

    def test_zero_form(self):
        mo = qf_exact_moments(QuadraticFormVector(np.zeros((1, 3, 3))))
        assert mo.fourth_F == 0 and mo.fourth_N == 0 and np.all(mo.cov == 0)

    @pytest.mark.parametrize("m", [1, 2, 3])
    def test_gaussian_fourth_moment_identity(self, m):
        A = np.stack([np.diag(np.eye(m)[i]) / math.sqrt(2) for i in range(m)])
        mo = qf_exact_moments(QuadraticFormVector(A))
        assert np.allclose(mo.cov, np.eye(m))
        assert mo.fourth_N == pytest.approx(m * m + 2 * m)

    def test_asymmetric_rejected(self):
        with pytest.raises(ContractError):
            QuadraticFormVector(np.array([[0.0, 1.0], [0.0, 0.0]]))

    def test_size_limit(self):
        with pytest.raises(ContractError):
            qf_exact_moments(QuadraticFormVector(np.zeros((1, 513, 513))))

    def test_sample_second_moment(self):
        F = qf_sample(chi_qf(), 100_000, seed=11).data[:, 0]
        se = F.var(ddof=1) * math.sqrt(2 / F.size) * 3  # rough SE of the second moment
        assert abs((F**2).mean() - 4) < 3 * se

    def test_sample_traceless_centered(self):
        A = np.array([[0.0, 1.0], [1.0, 0.0]])
        F = qf_sample(QuadraticFormVector(A), 50_000, seed=12).data[:, 0]
        assert abs(F.mean()) < 3 * F.std(ddof=1) / math.sqrt(F.size)

    def test_weighted_chi_square_ks(self):
        lam = np.array([1.5, -0.7, 0.3])
        Q = np.linalg.qr(np.random.default_rng(13).standard_normal((3, 3)))[0]
        A = Q @ np.diag(lam) @ Q.T
        A = (A + A.T) / 2
        rejections = 0
        ref = np.random.default_rng(14)
        for seed in range(20):
            F = qf_sample(QuadraticFormVector(A), 4000, seed=seed).data[:, 0]
            chi = ref.chisquare(1, size=(20_000, 3))
            G = chi @ lam - lam.sum()
            rejections += stats.ks_2samp(F, G).pvalue < 1e-3
        assert rejections <= 1

    def test_linear_part_moments(self):
        b = np.array([[1.0, 0.5]])
        v = QuadraticFormVector(np.eye(2)[None] * 0.5, b)
        F = qf_sample(v, 200_000, seed=15).data[:, 0]
        mo = qf_exact_moments(v)
        assert abs(F.var() - mo.cov[0, 0]) < 4 * math.sqrt(((F - F.mean()) ** 4).mean() / F.size)

    def test_breuer_major_reexpression(self):
        n = 16
        v = QuadraticFormVector.breuer_major_h2(n, (0, 0.5, 1))
        mo = qf_exact_moments(v)
        F = breuer_major_sample(spec(H2, partition=(0, 0.5, 1), n=n), 100_000, seed=16).data
        sq = (F**2).sum(axis=1) ** 2
        assert abs(sq.mean() - mo.fourth_F) < 4 * sq.std(ddof=1) / math.sqrt(sq.size)
        assert np.allclose(mo.cov, spec(H2, partition=(0, 0.5, 1), n=n).exact_covariance())

    def test_record_round_trip(self):
        v = QuadraticFormVector(np.eye(3)[None], np.ones((1, 3)))
        w = QuadraticFormVector.from_record(v.to_record())
        assert np.array_equal(v.A, w.A) and np.array_equal(v.b, w.b)


@st.composite
def qf_vectors(draw):
    m = draw(st.integers(1, 3))
    N = draw(st.integers(1, 5))
    seed = draw(st.integers(0, 2**31))
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, N, N))
    A = (A + A.transpose(0, 2, 1)) / 2
    b = rng.standard_normal((m, N)) if draw(st.booleans()) else None
    return QuadraticFormVector(A, b)


@given(qf_vectors())
def test_fourth_moment_chain_identity(v):
    mo = qf_exact_moments(v)
    scale = max(1.0, abs(mo.fourth_F))
    assert abs(mo.chain_sum() - mo.fourth_gap) <= 1e-10 * scale


@given(qf_vectors())
def test_trace_formulas_match_wick_oracle(v):
    a, b = qf_exact_moments(v), qf_oracle_moments(v)
    scale = max(1.0, abs(b.fourth_F))
    assert np.allclose(a.cov, b.cov, atol=1e-10 * scale)
    assert np.allclose(a.cov_sq, b.cov_sq, atol=1e-10 * scale)
    assert abs(a.fourth_F - b.fourth_F) <= 1e-10 * scale


@given(qf_vectors())
def test_fourth_gap_nonnegative(v):
    # nonnegativity holds for components in one fixed chaos, so drop the linear part
    mo = qf_exact_moments(QuadraticFormVector(v.A))
    assert mo.fourth_gap >= -1e-9 * max(1.0, mo.fourth_F)
