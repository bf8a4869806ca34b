"""Sample-based estimates of the convex, Wasserstein and smooth distances.

``dc_lower`` maximises ``|P_hat(F in Q) - P(N_Sigma in Q)|`` over a finite
class of convex sets, so it can only under-estimate the convex distance.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special, stats
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from scipy.stats import qmc

from .errors import ContractError
from .gausssim import CovarianceMatrix, SampleBatch
from .hermite import gauss_nodes

REF_SIZE = 10**6
BOOT = 200
BOOT_TOP = 256
EXACT_OT_MAX = 4096
SINKHORN_MAX = 8192


@dataclass
class DistanceEstimate:
    distance: str
    value: float
    se: float = 0.0
    ci: tuple = (math.nan, math.nan)
    family: str = ""
    sizes: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    best_set: object = field(default=None, repr=False, compare=False)

    @property
    def upper(self) -> float:
        return self.ci[1]

    def to_record(self) -> dict:
        from .bounds import _jsonable

        return _jsonable(
            {
                "distance": self.distance,
                "value": self.value,
                "se": self.se,
                "ci": list(self.ci),
                "family": self.family,
                "sizes": self.sizes,
                "extra": self.extra,
            }
        )


# ---------------------------------------------------------------- convex sets


def sphere_directions(m: int, count: int, seed: int = 0) -> np.ndarray:
    """Low-discrepancy unit vectors; one representative per +-u pair."""
    if m == 1:
        return np.ones((1, 1))
    if m == 2:
        th = np.pi * np.arange(count) / count
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    with warnings.catch_warnings():
        # balance needs a power of two; any count is fine for a direction set
        warnings.simplefilter("ignore", UserWarning)
        pts = qmc.Sobol(m, scramble=True, seed=seed).random(count)
    pts = np.clip(pts, 1e-12, 1 - 1e-12)
    u = stats.norm.ppf(pts)
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    u[:m] = np.eye(m)
    return u


class ConvexSet:
    """A single convex subset of ``R^m`` with a vectorised membership test."""

    def contains(self, Y: np.ndarray) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class HalfSpace(ConvexSet):
    """``{x : direction . x <= offset}``."""

    direction: tuple
    offset: float

    @property
    def m(self) -> int:
        return len(self.direction)

    def contains(self, Y):
        return np.atleast_2d(Y) @ np.asarray(self.direction, dtype=float) <= self.offset

    def gaussian_prob(self, sigma: CovarianceMatrix, mean: np.ndarray | float = 0.0, scale: float = 1.0):
        """``P(mean + scale * N_Sigma in Q)``; ``mean`` may hold several points."""
        u = np.asarray(self.direction, dtype=float)
        s = math.sqrt(float(u @ sigma.matrix @ u)) * scale
        shift = np.atleast_2d(mean) @ u if np.ndim(mean) else 0.0
        return stats.norm.cdf((self.offset - shift) / s)


@dataclass(frozen=True)
class Box(ConvexSet):
    lo: tuple
    hi: tuple

    @property
    def m(self) -> int:
        return len(self.lo)

    def contains(self, Y):
        Y = np.atleast_2d(Y)
        return np.all((Y >= np.asarray(self.lo)) & (Y <= np.asarray(self.hi)), axis=1)


@dataclass(frozen=True)
class Ball(ConvexSet):
    center: tuple
    radius: float

    @property
    def m(self) -> int:
        return len(self.center)

    def contains(self, Y):
        Y = np.atleast_2d(Y)
        return np.sum((Y - np.asarray(self.center)) ** 2, axis=1) <= self.radius**2


@dataclass(frozen=True)
class Polytope(ConvexSet):
    """Intersection of the half-spaces ``normals[j] . x <= offsets[j]``."""

    normals: tuple
    offsets: tuple

    @property
    def m(self) -> int:
        return len(self.normals[0])

    def contains(self, Y):
        return np.all(np.atleast_2d(Y) @ np.asarray(self.normals, dtype=float).T <= np.asarray(self.offsets), axis=1)


@dataclass(frozen=True)
class WholeSpace(ConvexSet):
    dim: int

    @property
    def m(self) -> int:
        return self.dim

    def contains(self, Y):
        return np.ones(np.atleast_2d(Y).shape[0], dtype=bool)


@dataclass(frozen=True)
class ConvexTestClass:
    """A finite family of convex sets.

    kinds: ``halfspace`` (directions x thresholds at empirical quantiles of the
    projected batch), ``box`` (axis boxes with faces at empirical coordinate
    quantiles, some faces at infinity), ``ball``, ``polytope`` (``faces``
    random half-spaces intersected) and ``whole`` (the single set ``R^m``).
    """

    kind: str = "halfspace"
    count: int = 2000
    seed: int = 0
    n_thresholds: int | None = None
    directions: tuple | None = None
    faces: int | None = None

    def __post_init__(self):
        if self.kind not in ("halfspace", "box", "ball", "polytope", "whole"):
            raise ContractError(f"unknown convex family {self.kind!r}")
        if self.count < 1:
            raise ContractError("empty convex class")

    def transformed(self, A: np.ndarray, m: int) -> "ConvexTestClass":
        """Image class under ``x -> A x`` (half-spaces only)."""
        if self.kind != "halfspace":
            raise ContractError("only half-space classes have a closed-form image")
        U = np.asarray(self.directions) if self.directions is not None else self._directions(m)
        V = np.linalg.solve(np.asarray(A, dtype=float).T, U.T).T
        return ConvexTestClass("halfspace", self.count, self.seed, self.n_thresholds, tuple(map(tuple, V)))

    def _directions(self, m: int) -> np.ndarray:
        if self.directions is not None:
            return np.asarray(self.directions, dtype=float)
        K = self._thresholds(m)
        return sphere_directions(m, max(1, self.count // K), self.seed)

    def _thresholds(self, m: int) -> int:
        if self.n_thresholds is not None:
            return self.n_thresholds
        return self.count if m == 1 else 50


def default_classes(m: int) -> list[ConvexTestClass]:
    if m == 1:
        return [ConvexTestClass("halfspace", 2000)]
    return [
        ConvexTestClass("halfspace", 2000),
        ConvexTestClass("box", 500, seed=1),
        ConvexTestClass("ball", 500, seed=2),
        ConvexTestClass("polytope", 200, seed=3, faces=2 * m),
    ]


class _Reference:
    """Lazily drawn Gaussian sample for probabilities without closed form."""

    def __init__(self, sigma: CovarianceMatrix, size: int, seed: int):
        self.sigma, self.size, self.seed = sigma, size, seed
        self._x = None

    @property
    def x(self) -> np.ndarray:
        if self._x is None:
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=(0x5EF,))))
            x = rng.standard_normal((self.size, self.sigma.m)) @ self.sigma.factor.T
            # column-major float32 keeps the per-set membership scans cheap
            self._x = np.asfortranarray(x, dtype=np.float32)
        return self._x


@dataclass
class _Family:
    """Materialised sets: ``member(X, j)`` tests membership, ``p`` holds Gaussian probabilities."""

    name: str
    p: np.ndarray
    p_se: np.ndarray
    emp: np.ndarray
    describe: list
    member: object
    make: object = None


def _count_le(sorted_proj: np.ndarray, thr: np.ndarray) -> np.ndarray:
    return np.searchsorted(sorted_proj, thr, side="right")


def _halfspaces(cls: ConvexTestClass, X: np.ndarray, sigma: CovarianceMatrix) -> _Family:
    """Closed half-spaces ``{u.x <= t}`` and their closed complements ``{u.x >= t}``."""
    R, m = X.shape
    U = cls._directions(m)
    K = cls._thresholds(m)
    D = U.shape[0]
    levels = np.minimum(((np.arange(K) + 0.5) / K * R).astype(int), R - 1)
    thr = np.empty((D, K))
    emp = np.empty((2, D, K))
    for d, u in enumerate(U):
        proj = np.sort(X @ u)
        thr[d] = proj[levels]
        emp[0, d] = _count_le(proj, thr[d]) / R
        emp[1, d] = 1.0 - np.searchsorted(proj, thr[d], side="left") / R
    s = np.sqrt(np.einsum("ij,jk,ik->i", U, sigma.matrix, U))
    below = stats.norm.cdf(thr / s[:, None])
    p = np.stack([below, stats.norm.sf(thr / s[:, None])])

    def member(Y, j):
        side, rest = divmod(int(j), D * K)
        d, k = divmod(rest, K)
        proj = Y @ U[d]
        return proj <= thr[d, k] if side == 0 else proj >= thr[d, k]

    desc = [("halfspace", d, k, side) for side in (0, 1) for d in range(D) for k in range(K)]

    def make(j):
        side, rest = divmod(int(j), D * K)
        d, k = divmod(rest, K)
        sgn = 1.0 if side == 0 else -1.0
        return HalfSpace(tuple((sgn * U[d]).tolist()), float(sgn * thr[d, k]))

    return _Family("halfspace", p.ravel(), np.zeros(p.size), emp.ravel(), desc, member, make)


def _mc_prob(ref: _Reference, member, J: int) -> tuple[np.ndarray, np.ndarray]:
    p = np.array([np.count_nonzero(member(ref.x, j)) for j in range(J)]) / ref.size
    return p, np.sqrt(p * (1 - p) / ref.size)


def _boxes(cls, X, sigma, ref) -> _Family:
    R, m = X.shape
    rng = np.random.default_rng(cls.seed)
    srt = np.sort(X, axis=0)
    q = rng.uniform(0, 1, (cls.count, m, 2))
    lo_idx = (np.minimum(q[..., 0], q[..., 1]) * (R - 1)).astype(int)
    hi_idx = (np.maximum(q[..., 0], q[..., 1]) * (R - 1)).astype(int)
    cols = np.arange(m)[None, :]
    lo, hi = srt[lo_idx, cols], srt[hi_idx, cols]
    # a quarter of the boxes are lower orthants, another quarter drop random faces
    kind = rng.integers(0, 4, cls.count)
    lo[kind == 0] = -np.inf
    drop = (kind == 1)[:, None] & (rng.uniform(size=(cls.count, m)) < 0.5)
    hi[drop] = np.inf

    def member(Y, j):
        mask = np.ones(len(Y), dtype=bool)
        for i in range(m):
            if lo[j, i] > -np.inf:
                mask &= Y[:, i] >= lo[j, i]
            if hi[j, i] < np.inf:
                mask &= Y[:, i] <= hi[j, i]
        return mask

    emp = np.array([member(X, j).mean() for j in range(cls.count)])
    diag = np.allclose(sigma.matrix, np.diag(np.diag(sigma.matrix)))
    if diag:
        s = np.sqrt(np.diag(sigma.matrix))
        p = np.prod(stats.norm.cdf(hi / s) - stats.norm.cdf(lo / s), axis=1)
        p_se = np.zeros(cls.count)
    else:
        p, p_se = _mc_prob(ref, member, cls.count)
    desc = [("box", lo[j].tolist(), hi[j].tolist()) for j in range(cls.count)]
    return _Family("box", p, p_se, emp, desc, member, lambda j: Box(tuple(lo[j].tolist()), tuple(hi[j].tolist())))


def _balls(cls, X, sigma, ref) -> _Family:
    R, m = X.shape
    rng = np.random.default_rng(cls.seed)
    centers = X[rng.integers(0, R, cls.count)] * rng.uniform(0, 1, (cls.count, 1))
    radii = np.empty(cls.count)
    sub = X[rng.choice(R, min(R, 4096), replace=False)]
    for j in range(cls.count):
        dist = np.linalg.norm(sub - centers[j], axis=1)
        radii[j] = np.quantile(dist, rng.uniform(0.05, 0.95))

    def member(Y, j):
        acc = np.zeros(len(Y), dtype=Y.dtype)
        for i in range(m):
            acc += (Y[:, i] - centers[j, i]) ** 2
        return acc <= radii[j] ** 2

    emp = np.array([member(X, j).mean() for j in range(cls.count)])
    s2 = sigma.matrix[0, 0]
    if np.allclose(sigma.matrix, s2 * np.eye(m)):
        nc = np.sum(centers**2, axis=1) / s2
        p = stats.ncx2.cdf(radii**2 / s2, m, nc)
        p_se = np.zeros(cls.count)
    else:
        p, p_se = _mc_prob(ref, member, cls.count)
    desc = [("ball", centers[j].tolist(), float(radii[j])) for j in range(cls.count)]
    return _Family("ball", p, p_se, emp, desc, member, lambda j: Ball(tuple(centers[j].tolist()), float(radii[j])))


_POLY_CACHE: dict = {}


def _polytopes(cls, X, sigma, ref) -> _Family:
    R, m = X.shape
    J = cls.faces or 2 * m
    rng = np.random.default_rng(cls.seed)
    normals = rng.standard_normal((cls.count, J, m))
    normals /= np.linalg.norm(normals, axis=2, keepdims=True)
    scale = np.sqrt(np.einsum("pjk,kl,pjl->pj", normals, sigma.matrix, normals))
    offsets = scale * rng.uniform(-0.5, 2.5, (cls.count, J))

    def member(Y, j):
        mask = np.ones(len(Y), dtype=bool)
        for a, c in zip(normals[j], offsets[j]):
            mask &= Y @ a.astype(Y.dtype) <= c
        return mask

    emp = np.array([member(X, j).mean() for j in range(cls.count)])
    # the polytopes do not depend on the batch, so their probabilities are reusable
    key = (cls, sigma.matrix.tobytes(), ref.size, ref.seed)
    if key not in _POLY_CACHE:
        _POLY_CACHE[key] = _mc_prob(ref, member, cls.count)
    p, p_se = _POLY_CACHE[key]
    desc = [("polytope", normals[j].tolist(), offsets[j].tolist()) for j in range(cls.count)]
    return _Family(
        "polytope", p, p_se, emp, desc, member, lambda j: Polytope(tuple(map(tuple, normals[j].tolist())), tuple(offsets[j].tolist()))
    )


def _whole(cls, X, sigma, ref) -> _Family:
    return _Family(
        "whole", np.ones(1), np.zeros(1), np.ones(1), [("whole",)], lambda Y, j: np.ones(len(Y), bool), lambda j: WholeSpace(X.shape[1])
    )


_BUILDERS = {"box": _boxes, "ball": _balls, "polytope": _polytopes, "whole": _whole}


def dc_lower(
    batch: SampleBatch | np.ndarray,
    sigma: CovarianceMatrix,
    classes: ConvexTestClass | Sequence[ConvexTestClass] | None = None,
    *,
    n_boot: int = BOOT,
    seed: int = 0,
    ref_size: int = REF_SIZE,
    top: int = BOOT_TOP,
    bonferroni: bool = False,
) -> DistanceEstimate:
    """Lower estimate of ``d_c(F, N_Sigma)`` over finite convex classes.

    The statistical error comes from a Poisson bootstrap of the maximum over
    the ``top`` sets with the largest observed discrepancy.
    """
    X = batch.data if isinstance(batch, SampleBatch) else np.atleast_2d(np.asarray(batch, dtype=float))
    R, m = X.shape
    if m != sigma.m:
        raise ContractError(f"batch dimension {m} != covariance dimension {sigma.m}")
    if classes is None:
        classes = default_classes(m)
    elif isinstance(classes, ConvexTestClass):
        classes = [classes]
    if not classes:
        raise ContractError("empty convex class")
    ref = _Reference(sigma, ref_size, seed)
    fams = []
    for cls in classes:
        fams.append(_halfspaces(cls, X, sigma) if cls.kind == "halfspace" else _BUILDERS[cls.kind](cls, X, sigma, ref))
    diffs = np.concatenate([f.emp - f.p for f in fams])
    p_se = np.concatenate([f.p_se for f in fams])
    owner = np.concatenate([np.full(f.p.size, i) for i, f in enumerate(fams)])
    local = np.concatenate([np.arange(f.p.size) for f in fams])
    absd = np.abs(diffs)
    best = int(np.argmax(absd))
    value = float(absd[best])
    per_family = {f.name: float(np.max(np.abs(f.emp - f.p))) for f in fams}

    se, ci = 0.0, (value, value)
    if n_boot > 0 and R > 1:
        k = min(top, absd.size)
        sel = np.argsort(-absd, kind="stable")[:k]
        ind = np.empty((R, k), dtype=np.float32)
        for c, g in enumerate(sel):
            ind[:, c] = fams[owner[g]].member(X, local[g])
        p_sel = np.concatenate([f.p for f in fams])[sel]
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(0xB007,))))
        stats_b = np.empty(n_boot)
        for lo in range(0, n_boot, 25):
            hi = min(n_boot, lo + 25)
            w = rng.poisson(1.0, (hi - lo, R)).astype(np.float32)
            emp_b = (w @ ind) / w.sum(axis=1, keepdims=True)
            stats_b[lo:hi] = np.max(np.abs(emp_b - p_sel), axis=1)
        se = float(np.hypot(stats_b.std(ddof=1), p_se[best]))
        ci = (float(np.quantile(stats_b, 0.025)), float(np.quantile(stats_b, 0.975)))
    extra = {"argmax": fams[owner[best]].describe[local[best]], "per_family": per_family, "n_sets": int(absd.size)}
    if bonferroni:
        extra["bonferroni_halfwidth"] = math.sqrt(math.log(2 * absd.size / 0.05) / (2 * R))
    return DistanceEstimate(
        "dc_lower",
        value,
        se,
        ci,
        family="+".join(f"{c.kind}[{c.count}]" for c in classes),
        sizes={"R": R, "n_boot": n_boot, "ref_size": ref_size},
        extra=extra,
        best_set=fams[owner[best]].make(local[best]),
    )


def kolmogorov_1d(x: np.ndarray, scale: float = 1.0) -> float:
    """Exact ``sup_t |F_hat(t) - Phi(t / scale)|`` over all thresholds."""
    x = np.sort(np.ravel(x))
    R = x.size
    cdf = stats.norm.cdf(x / scale)
    i = np.arange(1, R + 1)
    return float(max(np.max(i / R - cdf), np.max(cdf - (i - 1) / R)))


def interval_distance_1d(x: np.ndarray, scale: float = 1.0, grid: int = 400) -> float:
    """Empirical sup over intervals ``[a, b]`` with endpoints on a quantile grid."""
    x = np.sort(np.ravel(x))
    R = x.size
    idx = np.unique(np.linspace(0, R - 1, grid).astype(int))
    pts = np.concatenate([[-np.inf], x[idx], [np.inf]])
    emp = np.searchsorted(x, pts, side="right") / R
    emp_lt = np.searchsorted(x, pts, side="left") / R
    cdf = stats.norm.cdf(pts / scale)
    # P[a <= X <= b] = emp(b) - emp_lt(a)
    e = emp[None, :] - emp_lt[:, None]
    g = cdf[None, :] - cdf[:, None]
    mask = np.triu(np.ones_like(e, dtype=bool))
    return float(np.max(np.abs(e - g)[mask]))


# ---------------------------------------------------------------- Wasserstein


def sinkhorn_w1(
    x: np.ndarray, y: np.ndarray, reg: float | None = None, tol: float = 1e-6, max_iter: int = 500, stage_iter: int = 20
):
    """Log-domain entropic transport between uniform empirical measures.

    ``duality_gap`` is the cost minus a certified lower bound on the exact
    transport cost.  The regularisation is annealed from the median cost down to ``reg`` by
    halving, which gives the final stage a warm start.  Returns
    ``(cost, info)`` with ``cost = <P, C>`` for the regularised plan.
    """
    C = cdist(x, y)
    R, S = C.shape
    med = float(np.median(C))
    if reg is None:
        reg = 0.01 * med
    la = np.full(R, -math.log(R))
    lb = np.full(S, -math.log(S))
    f = np.zeros(R)
    g = np.zeros(S)
    schedule = [med * 0.5**k for k in range(64) if med * 0.5**k > reg] + [reg]
    err = math.inf
    total = 0
    for eps in schedule:
        final = eps == reg
        for it in range(1, (max_iter if final else stage_iter) + 1):
            f = -eps * special.logsumexp((g[None, :] - C) / eps + lb[None, :], axis=1)
            g = -eps * special.logsumexp((f[:, None] - C) / eps + la[:, None], axis=0)
            total += 1
            if final and it % 10 == 0:
                logP = (f[:, None] + g[None, :] - C) / eps + la[:, None] + lb[None, :]
                err = float(np.abs(np.exp(special.logsumexp(logP, axis=1)) - 1.0 / R).sum())
                if err < tol:
                    break
    P = np.exp((f[:, None] + g[None, :] - C) / reg + la[:, None] + lb[None, :])
    cost = float(np.sum(P * C))
    # c-transform makes the potentials feasible for the unregularised dual
    g_feas = np.min(C - f[:, None], axis=0)
    dual = float(f.mean() + g_feas.mean())
    return cost, {"reg": reg, "marginal_err": err, "iterations": total, "duality_gap": cost - dual}


def _exact_w1(x: np.ndarray, y: np.ndarray) -> float:
    C = cdist(x, y)
    r, c = linear_sum_assignment(C)
    return float(C[r, c].mean())


def dW_estimate(
    batchF: SampleBatch | np.ndarray,
    batchG: SampleBatch | np.ndarray,
    *,
    exact_max: int = EXACT_OT_MAX,
    n_boot: int = 0,
    seed: int = 0,
    reg: float | None = None,
    tol: float = 1e-6,
) -> DistanceEstimate:
    """Empirical 1-Wasserstein distance between two equal-size samples.

    Exact assignment for ``R <= exact_max``; entropic approximation above.
    With ``n_boot > 0`` a paired bootstrap gives the standard error.
    """
    x = batchF.data if isinstance(batchF, SampleBatch) else np.atleast_2d(np.asarray(batchF, dtype=float))
    y = batchG.data if isinstance(batchG, SampleBatch) else np.atleast_2d(np.asarray(batchG, dtype=float))
    if x.shape != y.shape:
        raise ContractError(f"sample shapes differ: {x.shape} vs {y.shape}")
    R = x.shape[0]
    extra: dict = {}
    if R <= exact_max:
        method = "exact-assignment"
        solve = _exact_w1
    elif R <= SINKHORN_MAX:
        method = "sinkhorn"

        def solve(a, b):
            cost, info = sinkhorn_w1(a, b, reg=reg, tol=tol)
            extra.update(info)
            return cost
    else:
        raise ContractError(f"R={R} exceeds the transport limit {SINKHORN_MAX}; subsample first")
    value = solve(x, y)
    se, ci = 0.0, (value, value)
    if n_boot > 0:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(0x3A55,))))
        vals = np.empty(n_boot)
        for b in range(n_boot):
            i = rng.integers(0, R, R)
            j = rng.integers(0, R, R)
            vals[b] = solve(x[i], y[j])
        se = float(vals.std(ddof=1))
        ci = (max(0.0, value - 1.96 * se), value + 1.96 * se)
    return DistanceEstimate("dW", value, se, ci, family=method, sizes={"R": R, "n_boot": n_boot}, extra=extra)


# ---------------------------------------------------------------- smooth distance

_W0, _W1 = 0.5, 1.5


def _capquad(y):
    """``y^2/2`` on ``|y| <= 1/2`` with a cosine taper of the curvature; Lip 1, q'' <= 1."""
    a = np.abs(y)
    w = _W1 - _W0
    v = np.clip(a - _W0, 0.0, w)
    q = np.where(a <= _W0, 0.5 * a**2, 0.0)
    mid = 0.5 * _W0**2 + _W0 * v + 0.25 * v**2 - (w**2 / (2 * np.pi**2)) * (np.cos(np.pi * v / w) - 1)
    q = np.where(a > _W0, mid, q)
    top = 0.5 * _W0**2 + _W0 * w + 0.25 * w**2 + w**2 / np.pi**2
    return np.where(a > _W1, top + (a - _W1) * 0.5 * (_W0 + _W1), q)


SHAPES = {
    # name: (function, sup|q'|, sup|q''|)
    "sin": (np.sin, 1.0, 1.0),
    "cos": (np.cos, 1.0, 1.0),
    "tanh": (np.tanh, 1.0, 4 / (3 * math.sqrt(3))),
    "logcosh": (lambda y: np.logaddexp(y, -y) - math.log(2.0), 1.0, 1.0),
    "capquad": (_capquad, 1.0, 1.0),
    "zero": (np.zeros_like, 0.0, 0.0),
}


@dataclass(frozen=True)
class SmoothMember:
    shape: str
    direction: tuple
    offset: float = 0.0
    scale: float = 1.0

    def certificates(self) -> tuple[float, float]:
        _, d1, d2 = SHAPES[self.shape]
        a = float(np.linalg.norm(self.direction))
        return self.scale * d1 * a, self.scale * d2 * a * a

    def __call__(self, X: np.ndarray) -> np.ndarray:
        f = SHAPES[self.shape][0]
        return self.scale * f(X @ np.asarray(self.direction) + self.offset)

    def gaussian_mean(self, sigma: CovarianceMatrix) -> float:
        a = np.asarray(self.direction, dtype=float)
        s = math.sqrt(float(a @ sigma.matrix @ a))
        damp = math.exp(-0.5 * s * s)
        if self.shape == "sin":
            return self.scale * math.sin(self.offset) * damp
        if self.shape == "cos":
            return self.scale * math.cos(self.offset) * damp
        if self.shape == "zero":
            return 0.0
        x, w = gauss_nodes(200)
        return self.scale * float(np.sum(w * SHAPES[self.shape][0](s * x + self.offset)))


def smooth_family(m: int, n_dir: int = 16, offsets: Sequence[float] = (-1.0, -0.5, 0.0, 0.5, 1.0), seed: int = 0):
    U = sphere_directions(m, n_dir, seed)
    U = np.vstack([U, np.eye(m)]) if m > 1 else U
    members = []
    for u in U:
        for shape in ("sin", "cos", "tanh", "logcosh", "capquad"):
            for c in offsets:
                members.append(SmoothMember(shape, tuple(u), c))
    return members


def d2_estimate(batchF: SampleBatch | np.ndarray, sigma: CovarianceMatrix, family: Sequence[SmoothMember] | None = None) -> DistanceEstimate:
    """``max_h |mean h(F) - E h(N_Sigma)|`` over certified smooth members."""
    X = batchF.data if isinstance(batchF, SampleBatch) else np.atleast_2d(np.asarray(batchF, dtype=float))
    R, m = X.shape
    if m != sigma.m:
        raise ContractError("dimension mismatch")
    family = smooth_family(m) if family is None else list(family)
    if not family:
        raise ContractError("empty test-function family")
    best, best_se, arg = -1.0, 0.0, None
    for h in family:
        lip, hs = h.certificates()
        if lip > 1 + 1e-12 or hs > 1 + 1e-12:
            raise ContractError(f"member {h} is not certified (Lip {lip:.3g}, Hess HS {hs:.3g})")
        vals = h(X)
        d = abs(float(vals.mean()) - h.gaussian_mean(sigma))
        if d > best:
            best, arg = d, h
            best_se = float(vals.std(ddof=1) / math.sqrt(R)) if R > 1 else 0.0
    return DistanceEstimate(
        "d2", best, best_se, (max(0.0, best - 1.96 * best_se), best + 1.96 * best_se),
        family=f"smooth[{len(family)}]", sizes={"R": R}, extra={"argmax": [arg.shape, list(arg.direction), arg.offset]},
    )


def sandwich_check(dc: DistanceEstimate, report, k: float = 3.0) -> tuple[bool, float]:
    """``dc_lower <= clipped bound + k se``; returns (ok, margin)."""
    margin = report.clipped + k * dc.se - dc.value
    return bool(margin >= 0), float(margin)
