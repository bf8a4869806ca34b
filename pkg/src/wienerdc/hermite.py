"""Hermite expansions of test functions under the standard Gaussian measure.

Polynomials follow the probabilists' convention with leading coefficient one,
``H_0 = 1, H_1 = x, H_2 = x**2 - 1``, so that ``E[H_j(G) H_k(G)] = k! delta_jk``
for a standard normal ``G``.  A function is stored through its coefficients
``phi = sum_k a_k H_k``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ContractError, DegenerateError, EvaluationError

DEFAULT_K = 20
DEFAULT_NODES = 200
ZERO_TOL = 1e-10


def gauss_nodes(q: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights integrating against the standard normal density."""
    x, w = np.polynomial.hermite.hermgauss(q)
    # physicists' weight exp(-x^2) -> standard normal density
    return x * math.sqrt(2.0), w / math.sqrt(math.pi)


def hermite_table(x: np.ndarray, K: int) -> np.ndarray:
    """Return ``H_0(x), ..., H_K(x)`` stacked along a new leading axis."""
    x = np.asarray(x, dtype=float)
    out = np.empty((K + 1,) + x.shape)
    out[0] = 1.0
    if K >= 1:
        out[1] = x
    for k in range(1, K):
        out[k + 1] = x * out[k] - k * out[k - 1]
    return out


@dataclass(frozen=True)
class HermiteExpansion:
    coeffs: np.ndarray
    tol: float = ZERO_TOL
    tail_mass: float = 0.0
    centered: bool = field(init=False)

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.coeffs, dtype=float)).copy()
        if c.ndim != 1 or c.size == 0:
            raise ContractError("coefficients must be a non-empty 1-d sequence")
        if not np.all(np.isfinite(c)):
            raise ContractError("coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "centered", bool(abs(c[0]) <= self.zero_threshold))

    @classmethod
    def from_terms(cls, terms: dict[int, float], K: int | None = None, tol: float = ZERO_TOL):
        """Build from ``{index: coefficient}``; ``K`` defaults to the top index."""
        top = max(terms) if terms else 0
        K = top if K is None else K
        if top > K:
            raise ContractError(f"index {top} exceeds truncation K={K}")
        c = np.zeros(K + 1)
        for k, a in terms.items():
            c[int(k)] = a
        return cls(c, tol=tol)

    @property
    def K(self) -> int:
        return self.coeffs.size - 1

    @property
    def norm_sq(self) -> float:
        """Squared L2(gamma) norm ``sum_k a_k^2 k!`` of the truncated expansion."""
        k = np.arange(self.coeffs.size)
        return float(np.sum(self.coeffs**2 * _factorials(k)))

    @property
    def zero_threshold(self) -> float:
        k = np.arange(self.coeffs.size)
        norm = math.sqrt(float(np.sum(self.coeffs**2 * _factorials(k))))
        return self.tol * max(1.0, norm)

    def nonzero(self) -> np.ndarray:
        return np.abs(self.coeffs) > self.zero_threshold

    @property
    def rank(self) -> int | None:
        """Smallest ``k >= 1`` with a nonzero coefficient, ``None`` if there is none."""
        nz = np.flatnonzero(self.nonzero()[1:])
        return int(nz[0]) + 1 if nz.size else None

    def __call__(self, x):
        return evaluate(self, x)

    def to_record(self) -> dict:
        nz = np.flatnonzero(self.nonzero())
        return {
            "K": self.K,
            "tol": self.tol,
            "terms": [[int(k), float(self.coeffs[k])] for k in nz],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "HermiteExpansion":
        try:
            terms = {int(k): float(a) for k, a in rec["terms"]}
            return cls.from_terms(terms, K=int(rec["K"]), tol=float(rec.get("tol", ZERO_TOL)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ContractError(f"malformed expansion record: {exc}") from exc

    def dumps(self) -> str:
        return json.dumps(self.to_record())

    @classmethod
    def loads(cls, text: str) -> "HermiteExpansion":
        return cls.from_record(json.loads(text))


def _factorials(k: np.ndarray) -> np.ndarray:
    return np.array([math.factorial(int(i)) for i in np.atleast_1d(k)], dtype=float)


def expand(
    phi: Callable[[np.ndarray], np.ndarray],
    K: int = DEFAULT_K,
    Q: int = DEFAULT_NODES,
    tol: float = ZERO_TOL,
) -> HermiteExpansion:
    """Hermite coefficients of ``phi`` by Gauss-Hermite quadrature.

    ``a_k = E[phi(G) H_k(G)] / k!``.  The squared norm not captured by the first
    ``K + 1`` terms is stored as ``tail_mass``.
    """
    if K < 1:
        raise ContractError("K must be >= 1")
    if Q < 2 * K + 1:
        raise ContractError(f"Q={Q} nodes cannot resolve K={K}; need Q >= 2K+1")
    x, w = gauss_nodes(Q)
    with np.errstate(all="ignore"):
        fx = np.asarray(phi(x), dtype=float)
    if fx.shape != x.shape:
        fx = np.broadcast_to(fx, x.shape).astype(float)
    bad = np.flatnonzero(~np.isfinite(fx))
    if bad.size:
        raise EvaluationError(f"phi is not finite at quadrature node x={x[bad[0]]!r}")
    H = hermite_table(x, K)
    k = np.arange(K + 1)
    coeffs = (H * (w * fx)).sum(axis=1) / _factorials(k)
    full = float(np.sum(w * fx**2))
    partial = float(np.sum(coeffs**2 * _factorials(k)))
    e = HermiteExpansion(coeffs, tol=tol, tail_mass=max(full - partial, 0.0))
    if not np.any(e.nonzero()):
        raise DegenerateError("all Hermite coefficients vanish")
    return e


def is_two_sparse(e: HermiteExpansion) -> bool:
    nz = e.nonzero()
    return not bool(np.any(nz[:-1] & nz[1:]))


def shift(e: HermiteExpansion) -> HermiteExpansion:
    """``sum_{l>=1} a_l H_{l-1}``."""
    if e.rank is None:
        raise ContractError("shift needs Hermite rank >= 1")
    c = e.coeffs[1:] if e.K >= 1 else np.zeros(1)
    return HermiteExpansion(c, tol=e.tol)


def derivative(e: HermiteExpansion) -> HermiteExpansion:
    """Uses ``H_k' = k H_{k-1}``."""
    if e.K == 0:
        return HermiteExpansion(np.zeros(1), tol=e.tol)
    k = np.arange(1, e.K + 1)
    return HermiteExpansion(k * e.coeffs[1:], tol=e.tol)


def evaluate(e: HermiteExpansion, x):
    """Evaluate by Clenshaw summation of the three-term recurrence."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ContractError("evaluation points must be finite")
    a = e.coeffs
    # Clenshaw for H_{k+1} = x H_k - k H_{k-1}
    b1 = np.zeros_like(x)
    b2 = np.zeros_like(x)
    with np.errstate(over="raise", invalid="raise"):
        try:
            for k in range(e.K, -1, -1):
                b1, b2 = a[k] + x * b1 - (k + 1) * b2, b1
        except FloatingPointError as exc:
            raise EvaluationError("Hermite evaluation overflowed") from exc
    if not np.all(np.isfinite(b1)):
        raise EvaluationError("Hermite evaluation overflowed")
    return b1 if b1.ndim else float(b1)
