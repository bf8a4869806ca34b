"""Concrete Gaussian functionals: Breuer-Major block sums and quadratic forms.

Two families carry closed-form Malliavin objects:

* block sums ``F_{n,i} = n^{-1/2} sum_{k in block i} phi(G_k)`` of a stationary
  sequence, whose Malliavin matrix entries are
  ``n^{-1} sum_{k in B_i} sum_{l in B_j} phi'(G_k) phi_1(G_l) rho(k - l)``;
* second-chaos vectors ``F_i = b_i.Z + Z'A_iZ - tr A_i`` with exact moments
  from trace identities.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np
from scipy import signal

from . import hermite
from .errors import ContractError, DegenerateError
from .gausssim import (
    AutocovarianceModel,
    CovarianceMatrix,
    SampleBatch,
    chunks,
    replicate_normals,
    sample_stationary,
)
from .hermite import HermiteExpansion

BANDED_MAX_WIDTH = 64


class MCEstimate(NamedTuple):
    value: float
    se: float


# ---------------------------------------------------------------- Breuer-Major


@dataclass(frozen=True, eq=False)
class BreuerMajorSpec:
    phi: HermiteExpansion
    model: AutocovarianceModel
    partition: tuple
    n: int

    def __post_init__(self):
        t = np.asarray(self.partition, dtype=float)
        if t.ndim != 1 or t.size < 2 or t[0] != 0.0:
            raise ContractError("partition must start at 0 and have at least two points")
        if np.any(np.diff(t) <= 0):
            raise ContractError("partition must be strictly increasing")
        if not self.phi.centered:
            raise ContractError("phi must be centered (a_0 = 0)")
        if self.phi.rank is None:
            raise DegenerateError("phi has no Hermite rank")
        if self.n < 1:
            raise ContractError("n must be >= 1")
        object.__setattr__(self, "partition", tuple(float(x) for x in t))
        cuts = self.cuts
        for i in range(1, len(cuts)):
            if cuts[i] <= cuts[i - 1]:
                raise DegenerateError(f"block {i} is empty at n={self.n}")

    @property
    def m(self) -> int:
        return len(self.partition) - 1

    @cached_property
    def cuts(self) -> tuple:
        """``floor(n t_i)`` for every partition point."""
        return tuple(int(math.floor(self.n * t + 1e-9)) for t in self.partition)

    @property
    def length(self) -> int:
        return self.cuts[-1]

    def blocks(self) -> list[tuple[int, int]]:
        """0-based half-open index ranges of the blocks."""
        c = self.cuts
        return [(c[i], c[i + 1]) for i in range(self.m)]

    def labels(self) -> np.ndarray:
        lab = np.empty(self.length, dtype=int)
        for i, (lo, hi) in enumerate(self.blocks()):
            lab[lo:hi] = i
        return lab

    @cached_property
    def phi_prime(self) -> HermiteExpansion:
        return hermite.derivative(self.phi)

    @cached_property
    def phi_shift(self) -> HermiteExpansion:
        return hermite.shift(self.phi)

    def limit_covariance(self) -> CovarianceMatrix:
        """``sigma^2 diag(t_i - t_{i-1})``."""
        from .bounds import limit_variance

        s2 = limit_variance(self.phi, self.model)
        return CovarianceMatrix(s2 * np.diag(np.diff(self.partition)))

    def exact_covariance(self) -> np.ndarray:
        """Finite-n covariance ``E[F_i F_j]`` from the Hermite expansion."""
        a = self.phi.coeffs
        k = np.arange(a.size)
        w = a**2 * np.array([math.factorial(int(x)) for x in k])
        L = self.length
        r = self.model.lags(L)
        # E[phi(G_0) phi(G_d)] = sum_k a_k^2 k! rho(d)^k
        cov_d = (w[:, None] * r[None, :] ** k[:, None]).sum(axis=0)
        lab = self.labels()
        out = np.zeros((self.m, self.m))
        d = np.abs(np.arange(L)[:, None] - np.arange(L)[None, :])
        C = cov_d[d]
        for i in range(self.m):
            for j in range(self.m):
                out[i, j] = C[np.ix_(lab == i, lab == j)].sum()
        return out / self.n


def block_sums(spec: BreuerMajorSpec, paths: np.ndarray) -> np.ndarray:
    vals = hermite.evaluate(spec.phi, paths)
    return np.stack([vals[:, lo:hi].sum(axis=1) for lo, hi in spec.blocks()], axis=1) / math.sqrt(spec.n)


def malliavin_matrices(spec: BreuerMajorSpec, paths: np.ndarray) -> np.ndarray:
    """``<DF_i, u_j>`` for every path; returns ``R x m x m``."""
    paths = np.atleast_2d(paths)
    if paths.shape[1] != spec.length:
        raise ContractError(f"path length {paths.shape[1]} != floor(nT) = {spec.length}")
    a = hermite.evaluate(spec.phi_prime, paths)
    b = hermite.evaluate(spec.phi_shift, paths)
    R, L = paths.shape
    m = spec.m
    lab = spec.labels()
    W = spec.model.support_width
    out = np.zeros((R, m, m))
    if W is not None and W <= BANDED_MAX_WIDTH:
        for d in range(-min(W, L - 1), min(W, L - 1) + 1):
            r = float(spec.model(d))
            if r == 0.0:
                continue
            k = np.arange(max(d, 0), min(L, L + d))
            prod = a[:, k] * b[:, k - d]
            pair = lab[k] * m + lab[k - d]
            P = np.zeros((k.size, m * m))
            P[np.arange(k.size), pair] = 1.0
            out += r * (prod @ P).reshape(R, m, m)
    else:
        kern = spec.model.truncated(L)
        for j, (lo, hi) in enumerate(spec.blocks()):
            bj = np.zeros_like(b)
            bj[:, lo:hi] = b[:, lo:hi]
            c = signal.fftconvolve(bj, kern[None, :], axes=1)[:, L - 1 : 2 * L - 1]
            ac = a * c
            for i, (li, hi_) in enumerate(spec.blocks()):
                out[:, i, j] = ac[:, li:hi_].sum(axis=1)
    return out / spec.n


def malliavin_matrix_sample(spec: BreuerMajorSpec, path: np.ndarray) -> np.ndarray:
    return malliavin_matrices(spec, np.asarray(path)[None, :])[0]


class BreuerMajorDraw(NamedTuple):
    batch: SampleBatch
    hs_sq: np.ndarray | None


def simulate_breuer_major(
    spec: BreuerMajorSpec,
    R: int,
    seed: int,
    *,
    key: Sequence[int] = (),
    target: CovarianceMatrix | None = None,
    gamma_replicates: int | None = None,
) -> BreuerMajorDraw:
    """Draw ``F_n`` and, when ``target`` is given, ``||M_F - Sigma||_HS^2`` per path.

    The matrix is evaluated on the first ``gamma_replicates`` paths only
    (default: all of them).
    """
    F = np.empty((R, spec.m))
    G = min(R, R if gamma_replicates is None else gamma_replicates)
    hs = np.empty(G) if target is not None else None
    for lo, hi in chunks(R):
        paths = sample_stationary(spec.model, spec.length, hi - lo, seed, key=key, start=lo)
        F[lo:hi] = block_sums(spec, paths)
        if hs is not None and lo < G:
            top = min(hi, G)
            M = malliavin_matrices(spec, paths[: top - lo])
            hs[lo:top] = ((M - target.matrix) ** 2).sum(axis=(1, 2))
    return BreuerMajorDraw(SampleBatch(F, seed=seed, key=tuple(key)), hs)


def breuer_major_sample(spec: BreuerMajorSpec, R: int, seed: int, *, key: Sequence[int] = ()) -> SampleBatch:
    return simulate_breuer_major(spec, R, seed, key=key).batch


def estimate_gamma_sq(
    spec: BreuerMajorSpec, target: CovarianceMatrix, R: int, seed: int, *, key: Sequence[int] = ()
) -> MCEstimate:
    """Monte Carlo mean of ``||M_F - Sigma||_HS^2`` with its standard error."""
    if R < 2:
        raise ContractError("need R >= 2 for a standard error")
    if target.m != spec.m:
        raise ContractError("target dimension does not match the partition")
    hs = simulate_breuer_major(spec, R, seed, key=key, target=target).hs_sq
    return summarize(hs)


def summarize(x: np.ndarray) -> MCEstimate:
    x = np.asarray(x, dtype=float)
    return MCEstimate(float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size)))


# ---------------------------------------------------------------- diagram formula


def _diagrams(p: tuple) -> list[tuple[float, tuple]]:
    """Multigraphs on four vertices with degrees ``p``: (weight, edge multiplicities).

    Edges are ordered (01, 02, 03, 12, 13, 23).
    """
    p0, p1, p2, p3 = p
    out = []
    fact = math.factorial
    pref = fact(p0) * fact(p1) * fact(p2) * fact(p3)
    for n01 in range(min(p0, p1) + 1):
        for n02 in range(min(p0 - n01, p2) + 1):
            n03 = p0 - n01 - n02
            if n03 > p3:
                continue
            for n12 in range(min(p1 - n01, p2 - n02) + 1):
                n13 = p1 - n01 - n12
                n23 = p2 - n02 - n12
                if n13 < 0 or n23 < 0 or n03 + n13 + n23 != p3:
                    continue
                e = (n01, n02, n03, n12, n13, n23)
                w = pref / math.prod(fact(x) for x in e)
                out.append((w, e))
    return out


def hermite_moment4(c: Sequence[np.ndarray], corr: Sequence[np.ndarray]) -> np.ndarray:
    """``E[f_0(X_0) f_1(X_1) f_2(X_2) f_3(X_3)]`` for standard normals.

    ``c[a]`` holds the Hermite coefficients of ``f_a``; ``corr`` the six pairwise
    correlations in edge order (01, 02, 03, 12, 13, 23), broadcastable arrays.
    """
    poly: dict[tuple, float] = {}
    nzs = [np.flatnonzero(np.asarray(ca) != 0) for ca in c]
    for p in itertools.product(*nzs):
        coef = math.prod(float(c[a][p[a]]) for a in range(4))
        for w, e in _diagrams(tuple(int(x) for x in p)):
            poly[e] = poly.get(e, 0.0) + coef * w
    shape = np.broadcast(*corr).shape
    total = np.zeros(shape)
    powers = [dict() for _ in range(6)]
    for e, coef in poly.items():
        if coef == 0.0:
            continue
        term = np.full(shape, coef)
        for idx, k in enumerate(e):
            if k:
                if k not in powers[idx]:
                    powers[idx][k] = np.asarray(corr[idx], dtype=float) ** k
                term = term * powers[idx][k]
        total += term
    return total


def _moment2(c0: np.ndarray, c1: np.ndarray, r: np.ndarray) -> np.ndarray:
    K = min(c0.size, c1.size)
    out = np.zeros(np.shape(r))
    for p in range(K):
        if c0[p] and c1[p]:
            out = out + c0[p] * c1[p] * math.factorial(p) * np.asarray(r, dtype=float) ** p
    return out


class EntryVariance(NamedTuple):
    exact: np.ndarray
    majorant: float


def malliavin_entry_variance(spec: BreuerMajorSpec, max_n: int = 32) -> EntryVariance:
    """Exact ``Var(<DF_i, u_j>)`` for all ``i, j`` and the absolute quadruple-sum majorant.

    Joint moments come from the Hermite diagram formula, so ``phi`` must be a
    finite expansion; cost is ``O(n^4)``.
    """
    L = spec.length
    if L > max_n:
        raise ContractError(f"exact variance is limited to n <= {max_n}")
    cp = spec.phi_prime.coeffs
    cs = spec.phi_shift.coeffs
    idx = np.arange(L)
    k, l, kp, lp = np.ix_(idx, idx, idx, idx)
    rho = spec.model
    r_kl = rho(k - l)
    r_kplp = rho(kp - lp)
    corr = [r_kl, rho(k - kp), rho(k - lp), rho(l - kp), rho(l - lp), r_kplp]
    e4 = hermite_moment4([cp, cs, cp, cs], corr)
    e2 = _moment2(cp, cs, r_kl) * _moment2(cp, cs, r_kplp)
    weighted = (e4 - e2) * r_kl * r_kplp
    n2 = float(spec.n) ** 2
    m = spec.m
    exact = np.zeros((m, m))
    bl = spec.blocks()
    for i, (a0, a1) in enumerate(bl):
        for j, (b0, b1) in enumerate(bl):
            exact[i, j] = weighted[a0:a1, b0:b1, a0:a1, b0:b1].sum() / n2
    return EntryVariance(exact, float(np.abs(weighted).sum() / n2))


# ---------------------------------------------------------------- quadratic forms


@dataclass(frozen=True, eq=False)
class QuadraticFormVector:
    """``F_i = b_i.Z + Z'A_iZ - tr A_i`` for ``Z ~ N(0, I_N)``."""

    A: np.ndarray
    b: np.ndarray | None = None

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        if A.ndim == 2:
            A = A[None]
        if A.ndim != 3 or A.shape[1] != A.shape[2]:
            raise ContractError("A must be m x N x N")
        for i, Ai in enumerate(A):
            if not np.allclose(Ai, Ai.T, rtol=0, atol=1e-12 * max(1.0, np.abs(Ai).max())):
                raise ContractError(f"A_{i + 1} is not symmetric")
        object.__setattr__(self, "A", A)
        b = np.zeros(A.shape[:2]) if self.b is None else np.atleast_2d(np.asarray(self.b, dtype=float))
        if b.shape != A.shape[:2]:
            raise ContractError("b must be m x N")
        object.__setattr__(self, "b", b)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def N(self) -> int:
        return self.A.shape[1]

    @classmethod
    def from_record(cls, rec: dict) -> "QuadraticFormVector":
        try:
            A = np.asarray(rec["A"], dtype=float)
            b = rec.get("b")
        except (KeyError, TypeError, ValueError) as exc:
            raise ContractError(f"malformed quadratic-form record: {exc}") from exc
        return cls(A, None if b is None else np.asarray(b, dtype=float))

    def to_record(self) -> dict:
        return {"A": self.A.tolist(), "b": self.b.tolist()}

    @classmethod
    def breuer_major_h2(cls, n: int, partition: Sequence[float]) -> "QuadraticFormVector":
        """Block sums of ``H_2(G_k)/sqrt(n)`` over i.i.d. ``G``."""
        cuts = [int(math.floor(n * t + 1e-9)) for t in partition]
        L = cuts[-1]
        A = np.zeros((len(cuts) - 1, L, L))
        for i in range(len(cuts) - 1):
            idx = np.arange(cuts[i], cuts[i + 1])
            A[i, idx, idx] = 1.0 / math.sqrt(n)
        return cls(A)


def joint_cumulant(v: QuadraticFormVector, labels: Sequence[int]) -> float:
    """Joint cumulant of ``(F_{l_1}, ..., F_{l_r})`` for ``r >= 2``."""
    r = len(labels)
    if r < 2:
        return 0.0
    A, b = v.A, v.b
    first, rest = labels[0], labels[1:]
    quad = 0.0
    for perm in itertools.permutations(rest):
        P = A[first]
        for l in perm:
            P = P @ A[l]
        quad += np.trace(P)
    lin = 0.0
    if np.any(b[list(labels)]):
        for perm in itertools.permutations(labels):
            vec = b[perm[-1]]
            for l in reversed(perm[1:-1]):
                vec = A[l] @ vec
            lin += b[perm[0]] @ vec
    return float(2 ** (r - 1) * quad + 2.0 ** (r - 3) * lin)


@dataclass
class QFMoments:
    cov: np.ndarray
    cov_sq: np.ndarray
    cumulant4: np.ndarray
    fourth_F: float
    fourth_N: float

    @property
    def fourth_gap(self) -> float:
        return self.fourth_F - self.fourth_N

    def chain_sum(self) -> float:
        """``sum_ij Cov(F_i^2, F_j^2) - 2 E[F_i F_j]^2``."""
        return float(np.sum(self.cov_sq - 2 * self.cov**2))


def qf_exact_moments(v: QuadraticFormVector) -> QFMoments:
    if v.N > 512:
        raise ContractError("exact moments limited to N <= 512")
    m = v.m
    cov = np.array([[joint_cumulant(v, (i, j)) for j in range(m)] for i in range(m)])
    k4 = np.array([[joint_cumulant(v, (i, i, j, j)) for j in range(m)] for i in range(m)])
    cov_sq = k4 + 2 * cov**2
    d = np.diag(cov)
    fourth_F = float(np.sum(k4 + np.outer(d, d) + 2 * cov**2))
    fourth_N = float(np.trace(cov) ** 2 + 2 * np.trace(cov @ cov))
    return QFMoments(cov, cov_sq, k4, fourth_F, fourth_N)


def _matchings(slots: list[int]):
    if not slots:
        yield []
        return
    a = slots[0]
    for idx in range(1, len(slots)):
        rest = slots[1:idx] + slots[idx + 1 :]
        for mm in _matchings(rest):
            yield [(a, slots[idx])] + mm


def wick_moment(v: QuadraticFormVector, labels: Sequence[int]) -> float:
    """``E[prod_a F_{l_a}]`` by summing Wick pairings slot by slot.

    Each factor is ``:Z'AZ: + b.Z``; pairings joining the two slots of one
    Wick-ordered quadratic factor are excluded.  Independent of the cumulant
    route used by :func:`qf_exact_moments`.
    """
    letters = "abcdefghijklmnop"
    total = 0.0
    r = len(labels)
    for choice in itertools.product((2, 1), repeat=r):
        owner = []
        for a, c in enumerate(choice):
            owner += [a] * c
        tensors = [v.A[labels[a]] if c == 2 else v.b[labels[a]] for a, c in enumerate(choice)]
        if any(not np.any(t) for t in tensors):
            continue
        if len(owner) % 2:
            continue
        for mt in _matchings(list(range(len(owner)))):
            if any(owner[x] == owner[y] for x, y in mt):
                continue
            name = {}
            for e, (x, y) in enumerate(mt):
                name[x] = name[y] = letters[e]
            subs, pos = [], 0
            for c in choice:
                subs.append("".join(name[pos + s] for s in range(c)))
                pos += c
            total += float(np.einsum(",".join(subs) + "->", *tensors, optimize=True))
    return total


def qf_oracle_moments(v: QuadraticFormVector) -> QFMoments:
    """Same quantities as :func:`qf_exact_moments`, via :func:`wick_moment`."""
    m = v.m
    cov = np.array([[wick_moment(v, (i, j)) for j in range(m)] for i in range(m)])
    e4 = np.array([[wick_moment(v, (i, i, j, j)) for j in range(m)] for i in range(m)])
    d = np.diag(cov)
    cov_sq = e4 - np.outer(d, d)
    k4 = cov_sq - 2 * cov**2
    fourth_N = float(np.trace(cov) ** 2 + 2 * np.trace(cov @ cov))
    return QFMoments(cov, cov_sq, k4, float(e4.sum()), fourth_N)


def qf_sample(v: QuadraticFormVector, R: int, seed: int, *, key: Sequence[int] = ()) -> SampleBatch:
    out = np.empty((R, v.m))
    tr = np.trace(v.A, axis1=1, axis2=2)
    for lo, hi in chunks(R):
        Z = replicate_normals(seed, key, lo, hi, v.N)
        out[lo:hi] = np.einsum("rj,ijk,rk->ri", Z, v.A, Z) - tr + Z @ v.b.T
    return SampleBatch(out, seed=seed, key=tuple(key))
