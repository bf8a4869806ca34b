"""Stationary Gaussian sequences, multivariate normals and autocovariance sums.

Randomness is organised in per-replicate streams: replicate ``r`` of a draw
keyed by ``(seed, key)`` always comes from the generator seeded with
``SeedSequence(seed, spawn_key=(*key, r))``.  Chunked, serial and parallel
evaluation therefore agree bit for bit.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Iterator, Sequence

import numpy as np
from scipy import linalg, signal

from .errors import ContractError, ModelError, NotPositiveDefiniteError, ResourceError

GENERATOR_ID = "PCG64/SeedSequence"
CLIP_TOL = 1e-10
DENSE_LIMIT = 2**15
CHUNK = 1024


def replicate_rng(seed: int, index: int, key: Sequence[int] = ()) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key) + (int(index),))
    return np.random.Generator(np.random.PCG64(ss))


def replicate_normals(seed: int, key: Sequence[int], start: int, stop: int, size: int) -> np.ndarray:
    """Standard normals of shape ``(stop - start, size)``, one stream per row."""
    out = np.empty((stop - start, size))
    for i, r in enumerate(range(start, stop)):
        out[i] = replicate_rng(seed, r, key).standard_normal(size)
    return out


def chunks(R: int, size: int = CHUNK) -> Iterator[tuple[int, int]]:
    for lo in range(0, R, size):
        yield lo, min(R, lo + size)


# ---------------------------------------------------------------- models


@dataclass(frozen=True)
class AutocovarianceModel:
    """Stationary correlation ``rho`` on the integers with ``rho(0) = 1``.

    kinds: ``iid``, ``ar`` (``rho(k) = phi**|k|``), ``fgn`` (fractional Gaussian
    noise with Hurst index ``hurst``) and ``table`` (explicit ``rho(0..L-1)``,
    zero beyond).
    """

    kind: str
    params: tuple = ()

    def __post_init__(self):
        kind = self.kind
        if kind == "iid":
            return
        if kind == "ar":
            (phi,) = self.params
            if not -1 < phi < 1:
                raise ModelError(f"AR coefficient must lie in (-1, 1), got {phi}")
        elif kind == "fgn":
            (h,) = self.params
            if not 0 < h < 1:
                raise ModelError(f"Hurst index must lie in (0, 1), got {h}")
        elif kind == "table":
            vals = np.asarray(self.params, dtype=float)
            if vals.ndim != 1 or vals.size == 0 or vals[0] != 1.0:
                raise ModelError("table must start with rho(0) = 1")
            if np.any(np.abs(vals) > 1.0):
                raise ModelError("table entries must satisfy |rho(k)| <= 1")
        else:
            raise ModelError(f"unknown autocovariance kind {kind!r}")

    @classmethod
    def iid(cls):
        return cls("iid")

    @classmethod
    def ar(cls, phi: float):
        return cls("ar", (float(phi),))

    @classmethod
    def fgn(cls, hurst: float):
        return cls("fgn", (float(hurst),))

    @classmethod
    def table(cls, values: Sequence[float]):
        return cls("table", tuple(float(v) for v in values))

    @classmethod
    def from_record(cls, rec: dict) -> "AutocovarianceModel":
        kind = rec.get("kind")
        if kind == "iid":
            return cls.iid()
        if kind == "ar":
            return cls.ar(rec["phi"])
        if kind == "fgn":
            return cls.fgn(rec["hurst"])
        if kind == "table":
            vals = rec["values"]
            if vals and isinstance(vals[0], (list, tuple)):
                top = max(int(k) for k, _ in vals)
                arr = [0.0] * (top + 1)
                for k, v in vals:
                    arr[int(k)] = float(v)
                vals = arr
            return cls.table(vals)
        raise ModelError(f"unknown autocovariance kind {kind!r}")

    def to_record(self) -> dict:
        if self.kind == "iid":
            return {"kind": "iid"}
        if self.kind == "ar":
            return {"kind": "ar", "phi": self.params[0]}
        if self.kind == "fgn":
            return {"kind": "fgn", "hurst": self.params[0]}
        return {"kind": "table", "values": list(self.params)}

    @property
    def support_width(self) -> int | None:
        """Largest lag with ``rho != 0``; ``None`` for infinite support."""
        if self.kind == "iid":
            return 0
        if self.kind == "table":
            nz = np.flatnonzero(np.asarray(self.params))
            return int(nz[-1])
        if self.kind == "fgn" and self.params[0] == 0.5:
            return 0
        return None

    def __call__(self, k):
        k = np.abs(np.asarray(k))
        if self.kind == "iid":
            return (k == 0).astype(float)
        if self.kind == "ar":
            return self.params[0] ** k.astype(float)
        if self.kind == "fgn":
            h2 = 2.0 * self.params[0]
            kf = k.astype(float)
            return 0.5 * (np.abs(kf + 1) ** h2 - 2 * kf**h2 + np.abs(kf - 1) ** h2)
        vals = np.asarray(self.params)
        out = np.zeros(k.shape)
        inside = k < vals.size
        out[inside] = vals[k[inside]]
        return out

    def lags(self, n: int) -> np.ndarray:
        """``rho(0), ..., rho(n - 1)``."""
        return self(np.arange(n))

    def truncated(self, n: int) -> np.ndarray:
        """``rho_n`` on ``-(n-1)..(n-1)`` (centre at index ``n - 1``)."""
        r = self.lags(n)
        return np.concatenate([r[:0:-1], r])

    def toeplitz(self, n: int) -> np.ndarray:
        return linalg.toeplitz(self.lags(n))

    def abs_power_sum(self, n: int, p: float) -> float:
        """``sum_{|k|<n} |rho(k)|^p``."""
        return _abs_power_sum(self, int(n), float(p))

    def series_sum(self, power: int, tol: float = 1e-13) -> float:
        """``sum_{k in Z} rho(k)^power`` over all lags; ``inf`` if divergent."""
        if self.kind == "iid" or self.support_width is not None:
            w = self.support_width
            return float(np.sum(self.truncated(w + 1) ** power))
        if self.kind == "ar":
            q = self.params[0] ** power
            return (1 + q) / (1 - q)
        h = self.params[0]
        expo = power * (2 * h - 2)
        if expo >= -1:
            return math.inf
        # partial sum plus integral of the asymptotic tail H(2H-1) k^(2H-2)
        J = 1 << 20
        k = np.arange(1, J + 1)
        head = 1.0 + 2.0 * float(np.sum(self(k) ** power))
        c = (h * (2 * h - 1)) ** power
        tail = c * (J + 0.5) ** (expo + 1) / -(expo + 1)
        return head + 2.0 * tail


@lru_cache(maxsize=256)
def _abs_power_sum(model: AutocovarianceModel, n: int, p: float) -> float:
    return float(np.sum(np.abs(model.truncated(n)) ** p))


# ---------------------------------------------------------------- matrices


@dataclass(frozen=True, eq=False)
class CovarianceMatrix:
    matrix: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.matrix, dtype=float)).copy()
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ContractError("covariance must be a square matrix")
        if not np.allclose(a, a.T, rtol=0, atol=1e-12 * max(1.0, np.abs(a).max())):
            raise ContractError("covariance must be symmetric")
        a = 0.5 * (a + a.T)
        a.setflags(write=False)
        object.__setattr__(self, "matrix", a)
        _ = self.factor

    @classmethod
    def identity(cls, m: int):
        return cls(np.eye(m))

    @property
    def m(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def factor(self) -> np.ndarray:
        try:
            return np.linalg.cholesky(self.matrix)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError("covariance is not positive definite") from exc

    @cached_property
    def eigvals(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)

    @cached_property
    def inverse(self) -> np.ndarray:
        return linalg.cho_solve((self.factor, True), np.eye(self.m))

    @property
    def op_norm(self) -> float:
        return float(self.eigvals[-1])

    @property
    def inv_op_norm(self) -> float:
        return float(1.0 / self.eigvals[0])

    @property
    def hs_norm(self) -> float:
        return float(np.sqrt(np.sum(self.matrix**2)))

    @cached_property
    def inv_sqrt(self) -> np.ndarray:
        w, v = np.linalg.eigh(self.matrix)
        return (v / np.sqrt(w)) @ v.T

    def is_identity(self, tol: float = 1e-12) -> bool:
        return bool(np.allclose(self.matrix, np.eye(self.m), rtol=0, atol=tol))


# ---------------------------------------------------------------- batches


@dataclass(eq=False)
class SampleBatch:
    data: np.ndarray
    seed: int | None = None
    key: tuple = ()
    start: int = 0
    generator: str = GENERATOR_ID

    def __post_init__(self):
        self.data = np.atleast_2d(np.asarray(self.data, dtype=float))
        if self.data.ndim != 2:
            raise ContractError("batch data must be R x m")

    @property
    def R(self) -> int:
        return self.data.shape[0]

    @property
    def m(self) -> int:
        return self.data.shape[1]

    def to_csv(self, path_or_buf=None) -> str:
        buf = io.StringIO()
        buf.write(
            f"# seed={self.seed} key={list(self.key)} start={self.start} generator={self.generator}\n"
        )
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x{i + 1}" for i in range(self.m)])
        for row in self.data:
            w.writerow([repr(float(v)) for v in row])
        text = buf.getvalue()
        if path_or_buf is not None:
            with open(path_or_buf, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path: str) -> "SampleBatch":
        seed = None
        with open(path) as fh:
            lines = fh.read().splitlines()
        body = []
        for line in lines:
            if line.startswith("#"):
                for tok in line[1:].split():
                    if tok.startswith("seed=") and tok[5:] != "None":
                        seed = int(tok[5:])
                continue
            body.append(line)
        rows = list(csv.reader(body))[1:]
        return cls(np.array(rows, dtype=float), seed=seed)


# ---------------------------------------------------------------- sampling


@lru_cache(maxsize=64)
def _embedding(model: AutocovarianceModel, n: int):
    """Return ('circulant', sqrt eigenvalues / sqrt(M)) or ('dense', factor)."""
    if n == 1 or model.support_width == 0:
        return "iid", None
    r = model.lags(n + 1)
    c = np.concatenate([r[:n], [r[n]], r[n - 1:0:-1]])
    lam = np.fft.fft(c).real
    if lam.min() >= -CLIP_TOL:
        lam = np.clip(lam, 0.0, None)
        return "circulant", np.sqrt(lam / c.size)
    if n > DENSE_LIMIT:
        raise ResourceError(f"circulant embedding failed and n={n} exceeds the dense limit {DENSE_LIMIT}")
    T = model.toeplitz(n)
    w, v = np.linalg.eigh(T)
    if w.min() < -1e-8 * max(1.0, w.max()):
        raise ModelError(f"Toeplitz matrix of size {n} is not positive semidefinite (min eig {w.min():.3g})")
    return "dense", v * np.sqrt(np.clip(w, 0.0, None))


def embedding_method(model: AutocovarianceModel, n: int) -> str:
    return _embedding(model, n)[0]


def sample_stationary(
    model: AutocovarianceModel,
    n: int,
    R: int,
    seed: int,
    *,
    key: Sequence[int] = (),
    start: int = 0,
) -> np.ndarray:
    """Exact draws of ``(G_1, ..., G_n)``; returns an ``R x n`` array.

    Rows are replicates ``start .. start + R - 1`` of the stream family keyed by
    ``(seed, key)``.
    """
    if n < 1:
        raise ContractError("n must be >= 1")
    method, aux = _embedding(model, n)
    stop = start + R
    if method == "iid":
        return replicate_normals(seed, key, start, stop, n)
    if method == "dense":
        z = replicate_normals(seed, key, start, stop, n)
        return z @ aux.T
    M = aux.size
    z = replicate_normals(seed, key, start, stop, 2 * M)
    xi = (z[:, :M] + 1j * z[:, M:]) * aux
    return np.fft.fft(xi, axis=1).real[:, :n]


def sample_normal(sigma: CovarianceMatrix, R: int, seed: int, *, key: Sequence[int] = (), start: int = 0) -> SampleBatch:
    z = replicate_normals(seed, key, start, start + R, sigma.m)
    return SampleBatch(z @ sigma.factor.T, seed=seed, key=tuple(key), start=start)


# ---------------------------------------------------------------- convolutions


def lp_norm(x: np.ndarray, p: float) -> float:
    x = np.abs(np.asarray(x, dtype=float))
    if math.isinf(p):
        return float(x.max()) if x.size else 0.0
    top = float(x.max()) if x.size else 0.0
    if top == 0.0:
        return 0.0
    # scale by the max so large p does not overflow
    return top * float(np.sum((x / top) ** p) ** (1.0 / p))


def conv(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Full linear convolution of two sequences centred at their midpoints."""
    if min(a.size, b.size) <= 64:
        return np.convolve(a, b)
    out = signal.fftconvolve(a, b)
    # nonnegative inputs stay nonnegative; FFT round-off must not flip signs
    if np.all(a >= 0) and np.all(b >= 0):
        out = np.clip(out, 0.0, None)
    return out


@dataclass
class ConvolutionTable:
    """Sequences on ``Z`` stored with their centre at index ``(len - 1) // 2``."""

    n: int
    rho_n: np.ndarray
    one_n: np.ndarray
    norms: dict = field(default_factory=dict)
    rho_rho: np.ndarray | None = None
    rho_rho_rho: np.ndarray | None = None
    rho_one: np.ndarray | None = None
    rho_rhosq: np.ndarray | None = None

    def inner_rho_one_rho_rhosq(self) -> float:
        """``<rho_n * 1_n, rho_n * rho_n^2>`` in l2(Z)."""
        return float(np.dot(self.rho_one, self.rho_rhosq))


def convolution_sums(model: AutocovarianceModel, n: int, ps: Sequence[float] = (1.0, 2.0)) -> ConvolutionTable:
    """Exact convolutions of ``rho_n(k) = |rho(k)| 1{|k|<n}`` used by the rate proofs."""
    if n < 1:
        raise ContractError("n must be >= 1")
    if n > 2**16:
        raise ResourceError("convolution tables are limited to n <= 2**16")
    rho_n = np.abs(model.truncated(n))
    one_n = np.ones(2 * n - 1)
    t = ConvolutionTable(n=n, rho_n=rho_n, one_n=one_n)
    for p in ps:
        t.norms[float(p)] = lp_norm(rho_n, p)
    t.rho_rho = conv(rho_n, rho_n)
    t.rho_rho_rho = conv(t.rho_rho, rho_n)
    t.rho_one = conv(rho_n, one_n)
    t.rho_rhosq = conv(rho_n, rho_n**2)
    return t
