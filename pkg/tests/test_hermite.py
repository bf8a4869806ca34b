import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wienerdc.errors import ContractError, DegenerateError, EvaluationError
from wienerdc.hermite import (
    HermiteExpansion,
    derivative,
    evaluate,
    expand,
    gauss_nodes,
    hermite_table,
    is_two_sparse,
    shift,
)


def H(k, K=None):
    return HermiteExpansion.from_terms({k: 1.0}, K=K)


class TestExpand:
    def test_h2(self):
        e = expand(lambda x: x**2 - 1, K=4)
        assert np.allclose(e.coeffs, [0, 0, 1, 0, 0], atol=1e-12)
        assert e.rank == 2 and e.centered

    def test_h1(self):
        e = expand(lambda x: x, K=4)
        assert np.allclose(e.coeffs, [0, 1, 0, 0, 0], atol=1e-12)
        assert e.rank == 1

    def test_h2_plus_h3(self):
        e = expand(lambda x: x**3 - 3 * x + x**2 - 1, K=6)
        assert np.allclose(e.coeffs, [0, 0, 1, 1, 0, 0, 0], atol=1e-12)
        assert e.rank == 2
        assert not is_two_sparse(e)

    def test_tail_mass_of_truncated_function(self):
        e = expand(np.abs, K=4)
        # E|G|^2 = 1 is not captured by four terms of |x|
        assert 0 < e.tail_mass < 1

    def test_nonfinite_value_names_node(self):
        with pytest.raises(EvaluationError, match="node"):
            expand(lambda x: 1.0 / (x - x[0]) if np.ndim(x) else x, K=3)

    def test_zero_function_is_degenerate(self):
        with pytest.raises(DegenerateError):
            expand(lambda x: 0 * x, K=4)

    def test_too_few_nodes(self):
        with pytest.raises(ContractError):
            expand(lambda x: x, K=10, Q=20)


class TestSparsity:
    def test_single_term(self):
        assert is_two_sparse(H(2))

    def test_even_function(self):
        assert is_two_sparse(HermiteExpansion.from_terms({2: 1.0, 4: 1.0}))

    def test_consecutive(self):
        assert not is_two_sparse(HermiteExpansion.from_terms({2: 1.0, 3: 1.0}))


class TestShiftDerivative:
    def test_shift_h2(self):
        assert np.allclose(shift(H(2)).coeffs, [0, 1])

    def test_shift_h1(self):
        assert np.allclose(shift(H(1)).coeffs, [1])

    def test_shift_relabels(self):
        s = shift(HermiteExpansion.from_terms({2: 2.0, 4: 5.0}))
        assert np.allclose(s.coeffs, [0, 2, 0, 5])

    def test_shift_needs_rank(self):
        with pytest.raises(ContractError):
            shift(HermiteExpansion(np.array([1.0, 0.0])))

    @pytest.mark.parametrize("k,expect", [(2, [0, 2]), (1, [1]), (3, [0, 0, 3])])
    def test_derivative(self, k, expect):
        assert np.allclose(derivative(H(k)).coeffs, expect)

    @pytest.mark.parametrize("k", range(1, 13))
    def test_derivative_is_k_times_shift(self, k):
        assert np.array_equal(derivative(H(k)).coeffs, k * shift(H(k)).coeffs)


class TestEvaluate:
    def test_values(self):
        assert evaluate(H(2), 2.0) == 3.0
        assert evaluate(H(3), 1.0) == -2.0
        assert evaluate(H(4), 0.0) == 3.0

    def test_matches_monomial_form(self):
        x = np.linspace(-3, 3, 13)
        assert np.allclose(evaluate(H(4), x), x**4 - 6 * x**2 + 3)

    def test_overflow(self):
        with pytest.raises(EvaluationError):
            evaluate(H(40), 1e300)

    def test_nonfinite_point(self):
        with pytest.raises(ContractError):
            evaluate(H(2), np.inf)


def test_orthogonality_table():
    x, w = gauss_nodes(200)
    K = 20
    T = hermite_table(x, K)
    G = (T * w) @ T.T
    fact = np.array([math.factorial(k) for k in range(K + 1)], dtype=float)
    # relative to the k! normalisation
    assert np.allclose(G / np.sqrt(np.outer(fact, fact)), np.eye(K + 1), atol=1e-10)


@given(st.lists(st.floats(-3, 3), min_size=2, max_size=13).filter(lambda c: max(map(abs, c)) > 1e-6))
def test_round_trip(coeffs):
    e = HermiteExpansion(np.array(coeffs))
    back = expand(lambda x: evaluate(e, x), K=e.K)
    assert np.allclose(back.coeffs, e.coeffs, atol=1e-8 * max(1, np.abs(coeffs).max()))


@given(st.dictionaries(st.integers(0, 15), st.floats(-5, 5, allow_subnormal=False), min_size=1))
def test_record_round_trip(terms):
    e = HermiteExpansion.from_terms(terms, K=15)
    again = HermiteExpansion.loads(e.dumps())
    mask = e.nonzero()
    assert np.array_equal(again.coeffs[mask], e.coeffs[mask])


@given(st.dictionaries(st.integers(1, 10), st.floats(0.1, 3), min_size=1))
def test_rank_invariant(terms):
    e = HermiteExpansion.from_terms(terms)
    d = e.rank
    assert e.coeffs[d] != 0 and not np.any(e.nonzero()[1:d])


def test_norm_matches_quadrature():
    e = HermiteExpansion.from_terms({1: 0.5, 3: -1.0, 4: 0.25})
    x, w = gauss_nodes(200)
    assert math.isclose(e.norm_sq, float(np.sum(w * evaluate(e, x) ** 2)), rel_tol=1e-12)


def test_malformed_record():
    with pytest.raises(ContractError):
        HermiteExpansion.from_record({"terms": [[1, 2]]})
