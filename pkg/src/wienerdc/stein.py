"""Gaussian mollification of set indicators and the associated Stein solution.

For ``h = 1_Q`` and ``t in (0, 1)``::

    h_t(x) = E h(sqrt(t) N + sqrt(1 - t) x)
    f_t(x) = -1/2 int_t^1 (E h(sqrt(s) N + sqrt(1 - s) x) - E h(N)) / (1 - s) ds

Writing ``s = 1 - exp(-u)`` turns ``ds / (1 - s)`` into ``du``, and with
``r = exp(-u / 2)`` the integral becomes ``2 int_0^sqrt(1-t) g(r) / r dr`` where
``g(r) = E h(sqrt(1 - r^2) N + r x) - E h(N)`` vanishes linearly at ``r = 0``.
That integrand is smooth and bounded, so Gauss-Legendre nodes in ``r`` resolve
it well.  Every routine here is a diagnostic: nothing feeds the bound
calculators.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import ContractError, PrecisionWarning
from .distances import ConvexSet, HalfSpace, WholeSpace
from .gausssim import CovarianceMatrix

MIN_BUDGET = 1000
DEFAULT_BUDGET = 20000
DEFAULT_GRID = 64
SY_CONST = 530.0


def _check_t(t: float):
    if not 0.0 < t < 1.0:
        raise ContractError(f"t={t} must lie in (0, 1)")


def _check_budget(budget: int):
    if budget < MIN_BUDGET:
        warnings.warn(f"Monte Carlo budget {budget} < {MIN_BUDGET}; estimates are imprecise", PrecisionWarning, stacklevel=3)


def _points(x, m: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    X = x.reshape(1, -1) if single else x
    if X.shape[1] != m:
        raise ContractError(f"point dimension {X.shape[1]} != {m}")
    return X, single


def _draws(sigma: CovarianceMatrix, budget: int, seed: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(0x57E1,))))
    return rng.standard_normal((budget, sigma.m)) @ sigma.factor.T


def gaussian_mean(Q: ConvexSet, sigma: CovarianceMatrix, budget: int = 10**6, seed: int = 0) -> tuple[float, float]:
    """``(P(N_Sigma in Q), standard error)``."""
    if isinstance(Q, WholeSpace):
        return 1.0, 0.0
    if isinstance(Q, HalfSpace):
        return float(Q.gaussian_prob(sigma)), 0.0
    p = float(Q.contains(_draws(sigma, budget, seed)).mean())
    return p, math.sqrt(p * (1 - p) / budget)


@dataclass
class MollifiedFunction:
    """``h_t`` for ``h = 1_Q``; closed form for half-spaces, common random numbers otherwise."""

    Q: ConvexSet
    sigma: CovarianceMatrix
    t: float
    budget: int = DEFAULT_BUDGET
    seed: int = 0
    _N: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        _check_t(self.t)
        if self.Q.m != self.sigma.m:
            raise ContractError("set and covariance dimensions differ")
        if not isinstance(self.Q, (HalfSpace, WholeSpace)):
            _check_budget(self.budget)

    @property
    def draws(self) -> np.ndarray:
        if self._N is None:
            self._N = _draws(self.sigma, self.budget, self.seed)
        return self._N

    def estimate(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Values and Monte Carlo standard errors at one or several points."""
        X, single = _points(x, self.sigma.m)
        st, s1 = math.sqrt(self.t), math.sqrt(1.0 - self.t)
        if isinstance(self.Q, WholeSpace):
            val, se = np.ones(len(X)), np.zeros(len(X))
        elif isinstance(self.Q, HalfSpace):
            val, se = self.Q.gaussian_prob(self.sigma, s1 * X, st), np.zeros(len(X))
        else:
            N = st * self.draws
            val = np.array([self.Q.contains(N + s1 * xi).mean() for xi in X])
            se = np.sqrt(val * (1 - val) / self.budget)
        return (float(val[0]), float(se[0])) if single else (val, se)

    def __call__(self, x):
        return self.estimate(x)[0]


def mollify(Q: ConvexSet, sigma: CovarianceMatrix, t: float, x, budget: int = DEFAULT_BUDGET, seed: int = 0):
    return MollifiedFunction(Q, sigma, t, budget, seed)(x)


def _legendre(t: float, grid: int) -> tuple[np.ndarray, np.ndarray]:
    y, w = np.polynomial.legendre.leggauss(grid)
    top = math.sqrt(1.0 - t)
    return 0.5 * top * (y + 1.0), 0.5 * top * w


@dataclass
class SteinSolution:
    """``f_t`` for ``h = 1_Q`` by quadrature in ``r = sqrt(1 - s)``."""

    Q: ConvexSet
    sigma: CovarianceMatrix
    t: float
    grid: int = DEFAULT_GRID
    budget: int = DEFAULT_BUDGET
    seed: int = 0
    _N: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        _check_t(self.t)
        if self.grid < 32:
            raise ContractError(f"grid={self.grid} < 32 nodes")
        if self.Q.m != self.sigma.m:
            raise ContractError("set and covariance dimensions differ")
        if not self.closed_form:
            _check_budget(self.budget)
        self.r, self.w = _legendre(self.t, self.grid)

    @property
    def closed_form(self) -> bool:
        return isinstance(self.Q, (HalfSpace, WholeSpace))

    @property
    def draws(self) -> np.ndarray:
        if self._N is None:
            self._N = _draws(self.sigma, self.budget, self.seed)
        return self._N

    def per_draw(self, x: np.ndarray) -> np.ndarray:
        """Per-draw integrand sums at one point; their mean is ``f_t(x)``.

        The same draws serve every node and every point, and ``E h(N)`` is
        replaced by ``1_Q(N_b)`` on the same draw so that the integrand
        vanishes draw by draw at ``r = 0``.
        """
        N = self.draws
        base = self.Q.contains(N).astype(float)
        acc = np.zeros(len(N))
        for r, w in zip(self.r, self.w):
            acc += (w / r) * (self.Q.contains(math.sqrt(1 - r * r) * N + r * x) - base)
        return -acc

    def estimate(self, x) -> tuple[np.ndarray, np.ndarray]:
        X, single = _points(x, self.sigma.m)
        if isinstance(self.Q, WholeSpace):
            val, se = np.zeros(len(X)), np.zeros(len(X))
        elif isinstance(self.Q, HalfSpace):
            u = np.asarray(self.Q.direction, dtype=float)
            s = math.sqrt(float(u @ self.sigma.matrix @ u))
            proj = X @ u
            r = self.r[:, None]
            g = stats.norm.cdf((self.Q.offset - r * proj[None, :]) / (np.sqrt(1 - r * r) * s)) - stats.norm.cdf(self.Q.offset / s)
            val, se = -np.sum((self.w / self.r)[:, None] * g, axis=0), np.zeros(len(X))
        else:
            vals = np.array([self.per_draw(xi) for xi in X])
            val, se = vals.mean(axis=1), vals.std(axis=1, ddof=1) / math.sqrt(self.budget)
        return (float(val[0]), float(se[0])) if single else (val, se)

    def __call__(self, x):
        return self.estimate(x)[0]

    def hessian(self, x) -> np.ndarray:
        """Exact Hessian for half-spaces (quadrature error only)."""
        if isinstance(self.Q, WholeSpace):
            return np.zeros((self.sigma.m, self.sigma.m))
        if not isinstance(self.Q, HalfSpace):
            raise ContractError("closed-form Hessian needs a half-space")
        u = np.asarray(self.Q.direction, dtype=float)
        s = math.sqrt(float(u @ self.sigma.matrix @ u))
        beta = np.sqrt(1 - self.r**2) * s
        z = (self.Q.offset - self.r * float(np.asarray(x, dtype=float) @ u)) / beta
        # d^2/dx^2 Phi((c - r u.x) / beta) = -z phi(z) r^2 / beta^2 u u^T
        second = -z * stats.norm.pdf(z) * self.r**2 / beta**2
        return -float(np.sum(self.w / self.r * second)) * np.outer(u, u)


def stein_solution(
    Q: ConvexSet, sigma: CovarianceMatrix, t: float, x, grid: int = DEFAULT_GRID, budget: int = DEFAULT_BUDGET, seed: int = 0
):
    return SteinSolution(Q, sigma, t, grid, budget, seed)(x)


def lemma_rhs(sigma: CovarianceMatrix, t: float, dc: float) -> float:
    """Derivative bound ``||Sigma^-1||^2 (m^2 log(t)^2 d_c + 530 m^(17/6))``."""
    m = sigma.m
    return sigma.inv_op_norm**2 * (m * m * math.log(t) ** 2 * dc + SY_CONST * m ** (17 / 6))


@dataclass
class ProbeResult:
    max: float
    mean: float
    usable: int
    points: int
    rhs: float
    step: list
    values: list
    kind: str = "diagnostic"
    flags: list = field(default_factory=list)

    @property
    def consistent(self) -> bool:
        return not self.usable or self.mean <= self.rhs

    def to_record(self) -> dict:
        from .bounds import _jsonable

        rec = dict(self.__dict__)
        rec["consistent"] = self.consistent
        return _jsonable(rec)


def _second_differences(sol: SteinSolution, x: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Central second differences of ``f_t`` at ``x``: (means, standard errors)."""
    m = x.size
    E = np.eye(m) * h
    if sol.closed_form:
        f = lambda y: np.atleast_1d(sol(y))  # noqa: E731
        n = 1
    else:
        f = sol.per_draw
        n = sol.budget
    f0 = f(x)
    D = np.empty((m, m, np.size(f0)))
    for i in range(m):
        D[i, i] = (f(x + E[i]) - 2 * f0 + f(x - E[i])) / (h * h)
        for j in range(i + 1, m):
            D[i, j] = D[j, i] = (
                f(x + E[i] + E[j]) - f(x + E[i] - E[j]) - f(x - E[i] + E[j]) + f(x - E[i] - E[j])
            ) / (4 * h * h)
    mean = D.mean(axis=2)
    se = D.std(axis=2, ddof=1) / math.sqrt(n) if n > 1 else np.zeros((m, m))
    return mean, se


def hessian_probe(
    Q: ConvexSet,
    sigma: CovarianceMatrix,
    t: float,
    points,
    step: float | None = None,
    *,
    dc: float = 1.0,
    grid: int = DEFAULT_GRID,
    budget: int = DEFAULT_BUDGET,
    seed: int = 0,
) -> ProbeResult:
    """Statistics of ``sum_ij (d_ij f_t)^2`` over probe points.

    Without an explicit ``step`` the difference step is ``se^(1/4)`` where
    ``se`` is the Monte Carlo error of ``f_t`` at the point (``1e-3`` for
    closed-form sets).  Points whose 95% interval is wider than the value are
    marked unusable and left out of the statistics.
    """
    sol = SteinSolution(Q, sigma, t, grid, budget, seed)
    X, _ = _points(points, sigma.m)
    vals, steps, flags = [], [], []
    for x in X:
        if step is not None:
            h = step
        elif sol.closed_form:
            h = 1e-3
        else:
            h = float(np.clip(sol.estimate(x)[1] ** 0.25, 1e-3, 0.5))
        mean, se = _second_differences(sol, x, h)
        S = float(np.sum(mean**2))
        se_S = float(np.sqrt(np.sum((2 * mean * se) ** 2)))
        steps.append(h)
        if S > 0 and 1.96 * se_S >= S:
            flags.append(f"noise-dominated at {x.tolist()}")
            continue
        vals.append(S)
    usable = len(vals)
    return ProbeResult(
        max=max(vals) if vals else math.nan,
        mean=float(np.mean(vals)) if vals else math.nan,
        usable=usable,
        points=len(X),
        rhs=lemma_rhs(sigma, t, dc),
        step=steps,
        values=vals,
        flags=flags,
    )


def log_t_growth(
    Q: ConvexSet, sigma: CovarianceMatrix, points, ts: Sequence[float] = (0.1, 0.01, 0.001), **kw
) -> tuple[float, list]:
    """Exponent ``a`` in ``sqrt(probe max) ~ |log t|^a`` fitted over ``ts``."""
    peaks = [hessian_probe(Q, sigma, t, points, **kw).max for t in ts]
    if not all(np.isfinite(peaks)) or min(peaks) <= 0:
        return math.nan, peaks
    slope = np.polyfit(np.log(np.abs(np.log(ts))), 0.5 * np.log(peaks), 1)[0]
    return float(slope), peaks


@dataclass
class SmoothingCheck:
    lhs: float
    smoothed: float
    remainder: float
    se: float
    k: float = 3.0

    @property
    def rhs(self) -> float:
        return 4.0 / 3.0 * self.smoothed + self.remainder

    @property
    def margin(self) -> float:
        return self.rhs + self.k * self.se - self.lhs

    @property
    def ok(self) -> bool:
        return self.margin >= 0


def smoothing_check(
    batch, Q: ConvexSet, sigma: CovarianceMatrix, t: float, *, seed: int = 0, k: float = 3.0
) -> SmoothingCheck:
    """``|E h(F) - E h(N)| <= 4/3 |E h_t(F) - E h_t(N)| + 20 m / sqrt(2) sqrt(t) / (1 - t)``.

    ``E h_t(N_Sigma) = E h(N_Sigma)`` because ``sqrt(t) N + sqrt(1-t) N'`` is
    again ``N_Sigma``.  The returned standard error combines the batch error
    of both empirical means with any Monte Carlo error of the set probability.
    """
    X = getattr(batch, "data", batch)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    R, m = X.shape
    p, p_se = gaussian_mean(Q, sigma, seed=seed)
    ind = Q.contains(X).astype(float)
    if isinstance(Q, (HalfSpace, WholeSpace)):
        ht = MollifiedFunction(Q, sigma, t).estimate(X)[0]
    else:
        # one fresh Gaussian draw per sample point is unbiased for E h_t(F)
        N = _draws(sigma, R, seed + 1)
        ht = Q.contains(math.sqrt(t) * N + math.sqrt(1 - t) * X).astype(float)
    lhs = abs(ind.mean() - p)
    smoothed = abs(ht.mean() - p)
    se = math.sqrt(ind.var() / R + ht.var() / R + 2 * p_se**2)
    rem = 20 * m / math.sqrt(2) * math.sqrt(t) / (1 - t)
    return SmoothingCheck(float(lhs), float(smoothed), rem, se, k)
