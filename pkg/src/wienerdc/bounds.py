"""Right-hand sides of the convex-distance bounds and their intermediate terms.

Every evaluator returns a :class:`BoundReport`.  Reports carry a ``constant``
flag: ``"explicit"`` when every constant is a stated numerical value, and
``"shape-only"`` when a non-explicit constant was set to one.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize, stats
from scipy.linalg import matmul_toeplitz

from .errors import ContractError, InconsistencyError
from .gausssim import AutocovarianceModel, CovarianceMatrix, convolution_sums, lp_norm
from .hermite import HermiteExpansion

THEOREM1_CONST = 402.0
EXACT_QUAD_MAX = 64
CSV_FIELDS = ("bound_id", "n", "m", "inputs", "raw", "clipped", "constant_flag")


@dataclass
class BoundReport:
    bound_id: str
    value: float
    inputs: dict = field(default_factory=dict)
    terms: dict = field(default_factory=dict)
    constant: str = "explicit"
    flags: list = field(default_factory=list)
    kind: str = "bound"

    def __post_init__(self):
        if not self.value >= 0:
            raise InconsistencyError(f"{self.bound_id}: negative bound {self.value}")

    @property
    def clipped(self) -> float:
        return min(self.value, 1.0)

    def to_record(self) -> dict:
        rec = asdict(self)
        rec["clipped"] = self.clipped
        return _jsonable(rec)

    def csv_row(self) -> dict:
        return {
            "bound_id": self.bound_id,
            "n": self.inputs.get("n", ""),
            "m": self.inputs.get("m", ""),
            "inputs": json.dumps(_jsonable(self.inputs), sort_keys=True),
            "raw": repr(float(self.value)),
            "clipped": repr(float(self.clipped)),
            "constant_flag": self.constant,
        }


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


def _check_dim(sigma: CovarianceMatrix, m: int | None) -> int:
    if m is not None and m != sigma.m:
        raise ContractError(f"m={m} does not match covariance dimension {sigma.m}")
    return sigma.m


def _prefactor(sigma: CovarianceMatrix, m: int) -> float:
    return THEOREM1_CONST * (sigma.inv_op_norm**1.5 + 1.0) * m ** (41.0 / 24.0)


# ---------------------------------------------------------------- main bounds


def theorem1_bound(sigma: CovarianceMatrix, gamma_sq: float, m: int | None = None) -> BoundReport:
    """``402 (||Sigma^-1||^{3/2} + 1) m^{41/24} sqrt(E||M_F - Sigma||_HS^2)``."""
    m = _check_dim(sigma, m)
    if gamma_sq < 0:
        raise ContractError("gamma_sq must be nonnegative")
    pref = _prefactor(sigma, m)
    gamma = math.sqrt(gamma_sq)
    return BoundReport(
        "theorem1",
        pref * gamma,
        inputs={"m": m, "gamma_sq": gamma_sq, "inv_op_norm": sigma.inv_op_norm},
        terms={"prefactor": pref, "gamma": gamma, "m_power": m ** (41.0 / 24.0)},
    )


def corollary1_bound(
    sigma: CovarianceMatrix, fourth_gap: float, m: int | None = None, eps_tol: float = 1e-8
) -> BoundReport:
    """Fourth-moment version: ``sqrt(E||F||^4 - E||N_Sigma||^4)`` replaces gamma."""
    m = _check_dim(sigma, m)
    flags = []
    if fourth_gap < 0:
        if fourth_gap < -eps_tol:
            raise InconsistencyError(f"fourth-moment gap {fourth_gap} is negative beyond tolerance")
        flags.append("clamped-negative-gap")
        fourth_gap = 0.0
    pref = _prefactor(sigma, m)
    root = math.sqrt(fourth_gap)
    return BoundReport(
        "corollary1",
        pref * root,
        inputs={"m": m, "fourth_gap": fourth_gap, "inv_op_norm": sigma.inv_op_norm},
        terms={"prefactor": pref, "sqrt_gap": root},
        flags=flags,
    )


def logfactor_bound(mean_hs: float, sigma: CovarianceMatrix | None = None) -> BoundReport:
    """``x |log x|`` with ``x = E||M_F - Sigma||_HS`` (constant unknown, set to 1)."""
    if mean_hs <= 0:
        raise ContractError("mean_hs must be positive")
    flags = ["out-of-regime"] if mean_hs >= 1 else []
    lin = mean_hs
    val = mean_hs * abs(math.log(mean_hs))
    return BoundReport(
        "logfactor",
        val,
        inputs={"mean_hs": mean_hs, "m": sigma.m if sigma is not None else ""},
        terms={"linear_term": lin, "log_factor": abs(math.log(mean_hs)), "log_exceeds_linear": val > lin},
        constant="shape-only",
        flags=flags,
    )


def d2_bound(mean_hs: float) -> BoundReport:
    if mean_hs < 0:
        raise ContractError("mean_hs must be nonnegative")
    return BoundReport("d2", 0.5 * mean_hs, inputs={"mean_hs": mean_hs})


def dW_bound(sigma: CovarianceMatrix, mean_hs: float, m: int | None = None) -> BoundReport:
    m = _check_dim(sigma, m)
    if mean_hs < 0:
        raise ContractError("mean_hs must be nonnegative")
    c1 = math.sqrt(m) * sigma.inv_op_norm * math.sqrt(sigma.op_norm)
    return BoundReport(
        "dW", c1 * mean_hs, inputs={"m": m, "mean_hs": mean_hs}, terms={"c1_majorant": c1}
    )


# ---------------------------------------------------------------- Breuer-Major sums


def limit_variance(phi: HermiteExpansion, model: AutocovarianceModel) -> float:
    """``sigma^2 = sum_k a_k^2 k! sum_j rho(j)^k``."""
    total = 0.0
    for k in range(1, phi.K + 1):
        a = phi.coeffs[k]
        if a == 0:
            continue
        total += a * a * math.factorial(k) * model.series_sum(k)
    return total


def _abs_toeplitz_col(model: AutocovarianceModel, n: int, power: float = 1.0) -> np.ndarray:
    return np.abs(model.lags(n)) ** power


def _abs_toeplitz(model: AutocovarianceModel, n: int) -> np.ndarray:
    if n > EXACT_QUAD_MAX:
        raise ContractError(f"brute-force quadruple sums are limited to n <= {EXACT_QUAD_MAX}")
    return _toep(_abs_toeplitz_col(model, n))


def q1_bruteforce(model: AutocovarianceModel, n: int) -> float:
    """``n^-2 sum_{i,j,k,l<n} |rho(j-k) rho(i-j) rho(k-l)|`` term by term."""
    A = _abs_toeplitz(model, n)
    total = 0.0
    for i in range(n):
        total += float(np.sum(A[i][:, None, None] * A[:, :, None] * A[None, :, :]))
    return total / n**2


def q2_bruteforce(model: AutocovarianceModel, n: int) -> float:
    """``n^-2 sum_{i,j,k,l<n} |rho(j-k)^2 rho(i-j) rho(k-l)|`` term by term."""
    A = _abs_toeplitz(model, n)
    total = 0.0
    for i in range(n):
        total += float(np.sum(A[i][:, None, None] * (A**2)[:, :, None] * A[None, :, :]))
    return total / n**2


def _tmul(c: np.ndarray, v: np.ndarray, fft: bool) -> np.ndarray:
    if fft:
        return np.asarray(matmul_toeplitz(c, v))
    return _toep(c) @ v


def q1_exact(model: AutocovarianceModel, n: int, fft: bool | None = None) -> float:
    """Same sum as :func:`q1_bruteforce` as ``1' A A A 1`` with Toeplitz ``A``."""
    fft = n > EXACT_QUAD_MAX if fft is None else fft
    c = _abs_toeplitz_col(model, n)
    v = np.ones(n)
    for _ in range(3):
        v = _tmul(c, v, fft)
    return float(v.sum()) / n**2


def q2_exact(model: AutocovarianceModel, n: int, fft: bool | None = None) -> float:
    """``1' A B A 1`` with ``B`` the Toeplitz matrix of ``rho^2``."""
    fft = n > EXACT_QUAD_MAX if fft is None else fft
    c = _abs_toeplitz_col(model, n)
    w = _tmul(c, np.ones(n), fft)
    return float(w @ _tmul(c**2, w, fft)) / n**2


def _toep(c: np.ndarray) -> np.ndarray:
    n = c.size
    idx = np.arange(n)
    return c[np.abs(idx[:, None] - idx[None, :])]


def young_majorant_q1(model: AutocovarianceModel, n: int) -> float:
    """``n^-1 ||rho_n||_1^3``."""
    return model.abs_power_sum(n, 1.0) ** 3 / n


def young_majorant_q1_conv(model: AutocovarianceModel, n: int) -> float:
    """Intermediate step ``n^-2 sum_{i,l} (rho_n*rho_n*rho_n)(i-l)``."""
    t = convolution_sums(model, n)
    rrr = t.rho_rho_rho
    c = (rrr.size - 1) // 2
    d = np.arange(-(n - 1), n)
    return float(np.sum((n - np.abs(d)) * rrr[c + d])) / n**2


def holder_majorant_q2(model: AutocovarianceModel, n: int, b: float) -> float:
    """``n^-1 (2n)^{(2b-2)/b} ||rho_n^2||_1 ||rho_n||_b^2``."""
    _check_b(b)
    return (2 * n) ** ((2 * b - 2) / b) * model.abs_power_sum(n, 2.0) * model.abs_power_sum(n, b) ** (2.0 / b) / n


def _check_b(b: float):
    if not 1.0 <= b <= 2.0:
        raise ContractError(f"b={b} outside [1, 2]")


@dataclass
class HolderChain:
    inner: float
    holder: float
    young: float
    item_iii: float
    q2_conv: float


def holder_chain(model: AutocovarianceModel, n: int, b: float) -> HolderChain:
    """Each link of the bound on ``<rho_n*1_n, rho_n*rho_n^2>``."""
    _check_b(b)
    t = convolution_sums(model, n)
    inner = t.inner_rho_one_rho_rhosq()
    p_conj = math.inf if b == 1.0 else b / (b - 1.0)
    holder = lp_norm(t.rho_one, p_conj) * lp_norm(t.rho_rhosq, b)
    young = (2 * n) ** ((2 * b - 2) / b) * lp_norm(t.rho_n**2, 1.0) * lp_norm(t.rho_n, b) ** 2
    item_iii = lp_norm(t.rho_one, 2.0) * lp_norm(t.rho_n, 2.0) ** 3
    # sum_{j,l<n} (rho_n*1_n)(l-j) (rho_n*rho_n^2)(l-j), the step before the n<.,.> bound
    c1 = (t.rho_one.size - 1) // 2
    c2 = (t.rho_rhosq.size - 1) // 2
    d = np.arange(-(n - 1), n)
    q2_conv = float(np.sum((n - np.abs(d)) * t.rho_one[c1 + d] * t.rho_rhosq[c2 + d]))
    return HolderChain(inner, holder, young, item_iii, q2_conv)


def corollary2_rates(
    model: AutocovarianceModel, n: int, b: float = 2.0, two_sparse: bool = False
) -> BoundReport:
    """Rate shapes of items i) and ii) with the exact quadruple sums behind them."""
    _check_b(b)
    if n < 1:
        raise ContractError("n must be >= 1")
    l1 = model.abs_power_sum(n, 1.0)
    rate_i = n**-0.5 * l1**1.5
    q1 = q1_bruteforce(model, n) if n <= EXACT_QUAD_MAX else q1_exact(model, n)
    terms = {"rate_i": rate_i, "Q1": q1, "Q1_young": young_majorant_q1(model, n), "rho_l1": l1}
    value = rate_i
    if two_sparse:
        l2 = model.abs_power_sum(n, 2.0)
        lb = model.abs_power_sum(n, b)
        rate_ii = n ** -(1.0 / b - 0.5) * math.sqrt(l2) * lb ** (1.0 / b)
        q2 = q2_bruteforce(model, n) if n <= EXACT_QUAD_MAX else q2_exact(model, n)
        terms.update(rate_ii=rate_ii, Q2=q2, Q2_holder=holder_majorant_q2(model, n, b))
        value = min(rate_i, rate_ii)
    return BoundReport(
        "corollary2",
        value,
        inputs={"n": n, "b": b, "two_sparse": two_sparse, "model": model.to_record()},
        terms=terms,
        constant="shape-only",
    )


def item_iii_split(model: AutocovarianceModel, n: int, N: int | None = None) -> BoundReport:
    """Tail ``(sum_{N<=|k|<n} rho^2)^{1/2}`` and head ``(2N+1) n^{-1/2}``.

    With ``N=None`` the split minimising the sum over all ``1 <= N <= n`` is used.
    """
    if n < 1:
        raise ContractError("n must be >= 1")
    r2 = model.lags(n) ** 2
    # tail(N) = sqrt(2 * sum_{k=N}^{n-1} rho(k)^2)
    suffix = np.concatenate([np.cumsum(r2[::-1])[::-1], [0.0]])
    Ns = np.arange(1, n + 1)
    tails = np.sqrt(2.0 * suffix[Ns])
    heads = (2 * Ns + 1) / math.sqrt(n)
    best = int(Ns[np.argmin(tails + heads)])
    if N is None:
        N = best
    if not 1 <= N <= n:
        raise ContractError("split index must satisfy 1 <= N <= n")
    tail, head = float(tails[N - 1]), float(heads[N - 1])
    return BoundReport(
        "corollary2_iii",
        tail + head,
        inputs={"n": n, "N": N, "model": model.to_record()},
        terms={"tail": tail, "head": head, "best_N": best},
        constant="shape-only",
    )


# ---------------------------------------------------------------- transport bridge


def isoperimetric_lower(sigma: CovarianceMatrix) -> float:
    """Lower estimate of the Gaussian isoperimetric constant from thin slabs.

    A slab ``{|u.x| <= w}`` with ``w -> 0`` gains ``2 eps / (sqrt(2 pi) s_u)`` of
    mass under an ``eps``-enlargement, where ``s_u^2 = u' Sigma u``; the best
    direction is the eigenvector of the smallest eigenvalue.
    """
    return 2.0 / math.sqrt(2 * math.pi * sigma.eigvals[0])


def isoperimetric_sweep(sigma: CovarianceMatrix, n_dir: int = 64, eps_grid: Sequence[float] = (1e-3, 1e-2, 0.1)) -> float:
    """Finite-``eps`` sweep over slabs and half-spaces; a lower estimate of ``Gamma``."""
    m = sigma.m
    rng = np.random.default_rng(0)
    U = rng.standard_normal((n_dir, m))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    w, v = np.linalg.eigh(sigma.matrix)
    U = np.vstack([U, v.T])
    s = np.sqrt(np.einsum("ij,jk,ik->i", U, sigma.matrix, U))
    best = 0.0
    for eps in eps_grid:
        # half-space boundary at the mode, and slab of width zero
        half = (stats.norm.cdf(eps / s) - 0.5) / eps
        slab = 2 * (stats.norm.cdf(eps / s) - 0.5) / eps
        best = max(best, float(half.max()), float(slab.max()))
    return best


def conwass_bridge(
    sigma: CovarianceMatrix, dW_value: float, m: int | None = None, gamma_hat: float | None = None
) -> BoundReport:
    """``2 sqrt(2) Gamma^{1/2} d_W^{1/2}``.

    ``Gamma`` is ``4 m^{1/4}`` for the identity.  For other covariances the
    caller may pass an estimate; otherwise the shape ``sqrt(||Sigma||_HS)`` is
    used and the report is flagged shape-only.
    """
    m = _check_dim(sigma, m)
    if dW_value < 0:
        raise ContractError("dW_value must be nonnegative")
    constant = "explicit"
    if gamma_hat is not None:
        gamma, source = float(gamma_hat), "supplied"
    elif sigma.is_identity():
        gamma, source = 4.0 * m**0.25, "identity"
    else:
        gamma, source = math.sqrt(sigma.hs_norm), "hs-shape"
        constant = "shape-only"
    return BoundReport(
        "conwass",
        2.0 * math.sqrt(2.0) * math.sqrt(gamma) * math.sqrt(dW_value),
        inputs={"m": m, "dW": dW_value},
        terms={
            "gamma": gamma,
            "gamma_source": source,
            "hs_shape": math.sqrt(sigma.hs_norm),
            "gamma_lower": isoperimetric_lower(sigma),
        },
        constant=constant,
    )


# ---------------------------------------------------------------- constant chain


def sup_sqrt_log(power: float = 1.5) -> tuple[float, float]:
    """``sup_{x in (0, 1/e]} x^{1/2} |log x|^power`` by grid plus golden section.

    Returns ``(argmax, max)``.
    """
    f = lambda x: math.sqrt(x) * abs(math.log(x)) ** power
    grid = np.exp(-np.linspace(1.0, 60.0, 6000))
    vals = np.sqrt(grid) * np.abs(np.log(grid)) ** power
    i = int(np.argmax(vals))
    lo = grid[min(i + 1, grid.size - 1)]
    hi = grid[max(i - 1, 0)]
    res = optimize.minimize_scalar(lambda x: -f(x), bracket=None, bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-14})
    x = float(res.x)
    return x, max(f(x), float(vals[i]))


@dataclass
class ConstantChain:
    log_sqrt_kappa: float
    log_sqrt_kappa_bound: float
    coefficient: float
    rounded_coefficient: float
    sup_32: float
    sup_1: float


def constant_chain(inv_op_norm: float, m: int, sharp: bool = False) -> ConstantChain:
    """Recompute the constants that turn the recursive inequality into a linear bound.

    ``coefficient`` is ``c`` in ``kappa <= c (S^{3/2}+1) m^{41/24} gamma`` when the
    bound on ``|log gamma| sqrt(kappa)`` is fed back unrounded;
    ``rounded_coefficient`` feeds back ``58 (S^{1/2}+1) m^{17/24}`` instead.  Both
    must stay below 402.  With ``sharp=False`` both suprema of
    ``x^{1/2}|log x|^p`` on ``(0, 1/e]`` are replaced by the common majorant 4.
    """
    S = inv_op_norm
    if sharp:
        _, sup32 = sup_sqrt_log(1.5)
        _, sup1 = sup_sqrt_log(1.0)
    else:
        sup32 = sup1 = 4.0
    a = math.sqrt(S * 8 * m / 3) * sup32 + (
        math.sqrt(32 * S * m ** (17 / 12)) + math.sqrt(20 * math.sqrt(2) * m)
    ) * sup1
    rounded = 58.0 * (math.sqrt(S) + 1.0) * m ** (17 / 24)
    norm = (S**1.5 + 1.0) * m ** (41 / 24)

    def coef(x):
        return ((4.0 / 3.0) * S * (2 * m * x + 24 * m ** (17 / 12)) + 20 * math.sqrt(2) * m) / norm

    return ConstantChain(a, rounded, coef(a), coef(rounded), sup32, sup1)


def recursion_check(sigma: CovarianceMatrix, gamma: float, t: float | None = None, kappa: float = 1.0) -> BoundReport:
    """Evaluate the recursive inequality for ``kappa`` at ``t`` (default ``gamma^2``)."""
    m = sigma.m
    if gamma <= 0:
        raise ContractError("gamma must be positive")
    t = gamma**2 if t is None else t
    if not 0 < t < 1:
        raise ContractError("t must lie in (0, 1)")
    flags = ["out-of-regime"] if gamma > 1 / math.e else []
    S = sigma.inv_op_norm
    smooth = (4.0 / 3.0) * S * (m * abs(math.log(t)) * math.sqrt(kappa) + 24 * m ** (17 / 12)) * gamma
    mollify = 20 * m / math.sqrt(2) * math.sqrt(t) / (1 - t)
    chain = constant_chain(S, m)
    final = THEOREM1_CONST * (S**1.5 + 1) * m ** (41 / 24) * gamma
    return BoundReport(
        "recursion",
        smooth + mollify,
        inputs={"m": m, "gamma": gamma, "t": t, "kappa": kappa, "inv_op_norm": S},
        terms={
            "smoothing_term": smooth,
            "mollification_term": mollify,
            "log_sqrt_kappa_bound": chain.log_sqrt_kappa_bound,
            "log_sqrt_kappa": chain.log_sqrt_kappa,
            "chain_coefficient": chain.coefficient,
            "final_bound": final,
        },
        kind="diagnostic",
        flags=flags,
    )
