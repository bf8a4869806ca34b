import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wienerdc.errors import ContractError, ModelError, NotPositiveDefiniteError, ResourceError
from wienerdc.gausssim import (
    AutocovarianceModel,
    CovarianceMatrix,
    SampleBatch,
    conv,
    convolution_sums,
    embedding_method,
    sample_normal,
    sample_stationary,
)


class TestModels:
    def test_fgn_lag_one(self):
        assert math.isclose(AutocovarianceModel.fgn(0.75)(1), 0.5 * (2**1.5 - 2), rel_tol=1e-12)

    def test_fgn_half_is_white(self):
        assert np.allclose(AutocovarianceModel.fgn(0.5).lags(5), [1, 0, 0, 0, 0])

    def test_symmetry(self):
        m = AutocovarianceModel.ar(0.6)
        assert np.allclose(m(np.arange(-5, 6)), m(np.arange(5, -6, -1)))

    @pytest.mark.parametrize(
        "bad",
        [lambda: AutocovarianceModel.ar(1.0), lambda: AutocovarianceModel.fgn(1.2),
         lambda: AutocovarianceModel.table([0.5, 0.1]), lambda: AutocovarianceModel("spline")],
    )
    def test_invalid(self, bad):
        with pytest.raises(ModelError):
            bad()

    def test_table_from_pairs(self):
        m = AutocovarianceModel.from_record({"kind": "table", "values": [[0, 1.0], [2, 0.25]]})
        assert np.allclose(m.lags(4), [1, 0, 0.25, 0])

    @pytest.mark.parametrize("model", [AutocovarianceModel.ar(-0.7), AutocovarianceModel.fgn(0.9), AutocovarianceModel.fgn(0.2)])
    def test_toeplitz_psd(self, model):
        assert np.linalg.eigvalsh(model.toeplitz(512)).min() > -1e-9

    def test_record_round_trip(self):
        for m in [AutocovarianceModel.iid(), AutocovarianceModel.ar(0.3), AutocovarianceModel.fgn(0.7),
                  AutocovarianceModel.table([1, -0.2, 0.1])]:
            assert AutocovarianceModel.from_record(m.to_record()) == m

    def test_series_sum_ar(self):
        m = AutocovarianceModel.ar(0.5)
        assert math.isclose(m.series_sum(2), (1 + 0.25) / (1 - 0.25))

    def test_series_sum_diverges(self):
        assert math.isinf(AutocovarianceModel.fgn(0.8).series_sum(2))


class TestCovarianceMatrix:
    def test_norms(self):
        S = CovarianceMatrix(np.array([[2.0, 1.0], [1.0, 2.0]]))
        assert math.isclose(S.op_norm, 3.0) and math.isclose(S.inv_op_norm, 1.0)
        assert math.isclose(S.hs_norm, math.sqrt(10))
        assert np.allclose(S.inverse @ S.matrix, np.eye(2))
        assert np.allclose(S.inv_sqrt @ S.matrix @ S.inv_sqrt, np.eye(2))

    def test_not_pd(self):
        with pytest.raises(NotPositiveDefiniteError):
            CovarianceMatrix(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_not_symmetric(self):
        with pytest.raises(ContractError):
            CovarianceMatrix(np.array([[1.0, 0.5], [0.0, 1.0]]))


class TestSampling:
    def test_iid_covariance(self):
        X = sample_stationary(AutocovarianceModel.iid(), 4, 10**6, seed=1)
        assert np.abs(np.cov(X.T) - np.eye(4)).max() < 4e-3

    def test_table_correlation(self):
        R = 100_000
        X = sample_stationary(AutocovarianceModel.table([1.0, 0.5]), 2, R, seed=2)
        r = np.corrcoef(X.T)[0, 1]
        se = (1 - 0.25) / math.sqrt(R)
        assert abs(r - 0.5) < 3 * se

    @pytest.mark.parametrize("model", [AutocovarianceModel.fgn(0.7), AutocovarianceModel.ar(0.5), AutocovarianceModel.table([1, 0.4, 0.1])])
    def test_exactness(self, model):
        n, R = 32, 100_000
        X = sample_stationary(model, n, R, seed=3)
        T = model.toeplitz(n)
        C = X.T @ X / R
        se = np.sqrt((1 + T**2) / R)
        assert np.all(np.abs(C - T) < 5 * se)

    def test_dense_fallback(self):
        # damped cosine: PSD Toeplitz, but its circulant embedding is not
        k = np.arange(40)
        model = AutocovarianceModel.table(np.cos(0.7 * k) * 0.999**k)
        assert embedding_method(model, 16) == "dense"
        R = 50_000
        X = sample_stationary(model, 16, R, seed=4)
        T = model.toeplitz(16)
        assert np.all(np.abs(X.T @ X / R - T) < 5 * np.sqrt((1 + T**2) / R))

    def test_non_psd_table(self):
        bad = AutocovarianceModel.table([1.0, 0.9, -0.9])
        with pytest.raises(ModelError):
            sample_stationary(bad, 64, 2, seed=0)

    def test_resource_limit(self, monkeypatch):
        import wienerdc.gausssim as g

        monkeypatch.setattr(g, "DENSE_LIMIT", 8)
        g._embedding.cache_clear()
        try:
            with pytest.raises(ResourceError):
                sample_stationary(AutocovarianceModel.table([1.0, 0.9, -0.9]), 64, 1, seed=0)
        finally:
            g._embedding.cache_clear()

    def test_reproducible_and_chunk_independent(self):
        m = AutocovarianceModel.fgn(0.65)
        a = sample_stationary(m, 50, 30, seed=9, key=(1,))
        b = np.vstack([sample_stationary(m, 50, 10, seed=9, key=(1,), start=s) for s in (0, 10, 20)])
        assert np.array_equal(a, b)

    def test_normal_identity(self):
        R = 200_000
        X = sample_normal(CovarianceMatrix.identity(2), R, seed=5).data
        assert np.abs(np.cov(X.T) - np.eye(2)).max() < 4 * math.sqrt(2 / R)

    def test_normal_correlated(self):
        R = 100_000
        X = sample_normal(CovarianceMatrix(np.array([[1, 0.9], [0.9, 1]])), R, seed=6).data
        assert abs(np.corrcoef(X.T)[0, 1] - 0.9) < 3 * (1 - 0.81) / math.sqrt(R)

    def test_normal_fourth_moment(self):
        R = 400_000
        X = sample_normal(CovarianceMatrix(np.diag([2.0, 3.0])), R, seed=7).data
        q = np.sum(X**2, axis=1) ** 2
        assert abs(q.mean() - 51.0) < 4 * q.std() / math.sqrt(R)

    def test_csv_round_trip(self, tmp_path):
        b = sample_normal(CovarianceMatrix.identity(3), 5, seed=8)
        p = tmp_path / "b.csv"
        b.to_csv(p)
        back = SampleBatch.from_csv(p)
        assert np.array_equal(back.data, b.data) and back.seed == 8


class TestConvolutions:
    def test_dirac(self):
        t = convolution_sums(AutocovarianceModel.iid(), 10)
        assert t.norms[1.0] == 1.0 and math.isclose(float(np.sum(t.rho_rho_rho)), 1.0)

    def test_table(self):
        t = convolution_sums(AutocovarianceModel.table([1.0, 0.5]), 2)
        assert t.norms[1.0] == 2.0
        assert math.isclose(t.rho_rho[(t.rho_rho.size - 1) // 2], 1.5)

    def test_against_bruteforce(self):
        a = np.random.default_rng(0).uniform(0, 1, 101)
        b = np.random.default_rng(1).uniform(0, 1, 101)
        brute = np.array([sum(a[i] * b[k - i] for i in range(101) if 0 <= k - i < 101) for k in range(201)])
        assert np.allclose(conv(a, b), brute)


@given(st.lists(st.floats(-1, 1), min_size=1, max_size=20), st.integers(1, 40))
def test_young_triple(vals, n):
    model = AutocovarianceModel.table([1.0] + vals)
    t = convolution_sums(model, n)
    assert np.sum(t.rho_rho_rho) <= t.norms[1.0] ** 3 * (1 + 1e-12)
