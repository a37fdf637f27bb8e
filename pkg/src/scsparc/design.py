"""Code parameters, the coupled base matrix, seeds and the design matrix.

Block and section indices are 0-based throughout: column block ``c`` holds
sections ``c * L/Γ ... (c + 1) * L/Γ - 1``.
"""

import math
import os
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .exceptions import ParameterError, ResourceError
from .numerics import RngStream

__all__ = [
    "SparcParams",
    "BaseMatrix",
    "SeedSet",
    "DesignMatrix",
    "build_base_matrix",
    "seed_sections",
    "effective_rate",
    "sample_design_matrix",
    "matvec",
    "matvec_t",
    "DEFAULT_MEMORY_CAP",
]

DEFAULT_MEMORY_CAP = int(os.environ.get("SC_SPARC_MEMORY_CAP", 3 * 2**30))
# cached blocks above this size are stored in single precision
FLOAT64_LIMIT = 512 * 2**20


def _as_int(name, value, minimum):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < minimum:
        raise ParameterError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


@dataclass(frozen=True)
class SparcParams:
    """Sizes and rate of a spatially coupled SPARC.

    ``n`` is rounded up to a multiple of ``gamma`` and ``rate`` (nats per
    channel use) is the realized rate ``L ln M / n``; ``requested_rate`` keeps
    the value asked for.
    """

    L: int
    M: int
    gamma: int
    omega: int
    rho: float
    requested_rate: float
    n: int = field(init=False)
    rate: float = field(init=False)

    def __post_init__(self):
        L = _as_int("L", self.L, 1)
        M = _as_int("M", self.M, 2)
        gamma = _as_int("gamma", self.gamma, 1)
        omega = _as_int("omega", self.omega, 0)
        if M & (M - 1):
            raise ParameterError(f"M must be a power of 2, got {M}")
        if L % gamma:
            raise ParameterError(f"gamma={gamma} must divide L={L}")
        if gamma <= 8 * omega:
            raise ParameterError(f"gamma={gamma} must exceed 8*omega={8 * omega} so the seeds fit")
        if not 0 <= self.rho < 1:
            raise ParameterError(f"rho must lie in [0, 1), got {self.rho}")
        if not self.requested_rate > 0:
            raise ParameterError(f"rate must be positive, got {self.requested_rate}")
        n = round(L * math.log(M) / self.requested_rate)
        n = max(gamma, -(-n // gamma) * gamma)
        object.__setattr__(self, "n", int(n))
        object.__setattr__(self, "rate", L * math.log(M) / n)

    @property
    def N(self):
        return self.L * self.M

    @property
    def alpha(self):
        return self.n / self.N

    @property
    def rows_per_block(self):
        return self.n // self.gamma

    @property
    def sections_per_block(self):
        return self.L // self.gamma

    @property
    def cols_per_block(self):
        return self.N // self.gamma

    @property
    def effective_rate(self):
        return effective_rate(self.rate, self.omega, self.gamma)

    def to_dict(self):
        return {
            "L": self.L, "M": self.M, "gamma": self.gamma, "omega": self.omega,
            "rho": self.rho, "rate": self.requested_rate,
            "n": self.n, "N": self.N, "realized_rate": self.rate, "effective_rate": self.effective_rate,
        }

    @classmethod
    def from_dict(cls, cfg):
        try:
            return cls(int(cfg["L"]), int(cfg["M"]), int(cfg["gamma"]), int(cfg["omega"]),
                       float(cfg.get("rho", 0.0)), float(cfg["rate"]))
        except KeyError as exc:
            raise ParameterError(f"missing code parameter {exc.args[0]!r}") from None


@dataclass(frozen=True)
class BaseMatrix:
    """Γ×Γ variance profile with a band of half-width ``omega``.

    Every row averages to one. Band entries of row ``r`` equal
    ``(1 - rho) Γ / γ_r`` and off-band entries ``rho Γ / (Γ - γ_r)``, where
    ``γ_r`` counts the columns within the band.
    """

    W: np.ndarray
    omega: int
    rho: float
    band_counts: np.ndarray

    @property
    def gamma(self):
        return self.W.shape[0]

    def row_sums(self):
        return self.W.sum(axis=1)

    def exact_row_means(self):
        """Row means in rational arithmetic (all equal to 1)."""
        g = self.gamma
        rho = Fraction(self.rho).limit_denominator(10**12)
        out = []
        for r in range(g):
            gr = int(self.band_counts[r])
            band = (1 - rho) * g / gr if gr < g else Fraction(1)
            off = rho * g / (g - gr) if gr < g else Fraction(0)
            out.append((band * gr + off * (g - gr)) / g if gr < g else band)
        return out


def build_base_matrix(gamma, omega, rho):
    """Spatially coupled base matrix.

    Parameters
    ----------
    gamma : int
        Number of row and column blocks, at least ``2 * omega + 1``.
    omega : int
        Coupling half-width.
    rho : float
        Share of the row variance spread outside the band, ``0 <= rho < 1``.

    Returns
    -------
    BaseMatrix
    """
    gamma = _as_int("gamma", gamma, 1)
    omega = _as_int("omega", omega, 0)
    if gamma <= 2 * omega:
        raise ParameterError(f"gamma={gamma} must exceed 2*omega={2 * omega}")
    if not 0 <= rho < 1:
        raise ParameterError(f"rho must lie in [0, 1), got {rho}")
    idx = np.arange(gamma)
    band = np.abs(idx[:, None] - idx[None, :]) <= omega
    counts = band.sum(axis=1)
    W = np.empty((gamma, gamma))
    for r in range(gamma):
        if counts[r] == gamma:
            # the band covers the whole row: nothing carries the rho share
            W[r] = 1.0
            continue
        W[r] = np.where(band[r], (1 - rho) * gamma / counts[r], rho * gamma / (gamma - counts[r]))
    W.setflags(write=False)
    counts.setflags(write=False)
    return BaseMatrix(W=W, omega=omega, rho=float(rho), band_counts=counts)


@dataclass(frozen=True)
class SeedSet:
    """Column blocks whose sections are known to the decoder."""

    blocks: tuple
    gamma: int

    def mask(self):
        m = np.zeros(self.gamma, dtype=bool)
        m[list(self.blocks)] = True
        return m

    def __contains__(self, c):
        return c in self.blocks

    def __len__(self):
        return len(self.blocks)


def seed_sections(gamma, omega):
    """First ``4 omega`` and last ``4 omega`` column blocks (0-based)."""
    gamma = _as_int("gamma", gamma, 1)
    omega = _as_int("omega", omega, 0)
    if gamma <= 8 * omega:
        raise ParameterError(f"gamma={gamma} must exceed 8*omega={8 * omega}")
    blocks = tuple(range(4 * omega)) + tuple(range(gamma - 4 * omega, gamma))
    return SeedSet(blocks=blocks, gamma=gamma)


def effective_rate(rate, omega, gamma):
    """Rate after discounting the known seed sections: ``R (1 - 8 omega / Γ)``."""
    if gamma <= 8 * omega:
        raise ParameterError(f"gamma={gamma} must exceed 8*omega={8 * omega}")
    return rate * (1.0 - 8.0 * omega / gamma)


class DesignMatrix:
    """Block Gaussian design matrix, generated column by column.

    Column ``j`` holds ``n`` standard normals drawn from ``stream.child(j)``,
    scaled in row block ``r`` by ``sqrt(W[r, c] / scale)`` where ``c`` is the
    column block of ``j``. Any column can therefore be regenerated on its
    own. Column blocks listed in ``cached_blocks`` are materialized once;
    the others are rebuilt whenever a product needs them, touching only the
    non-zero coordinates for sparse inputs.

    Parameters
    ----------
    params : SparcParams or any object with ``n``, ``N`` and ``gamma``
    base : BaseMatrix
    stream : RngStream
    scale : float, optional
        Variance denominator; ``L`` for SPARCs (the default), ``N / Γ`` for
        the linear-model extension.
    cached_blocks : iterable of int, optional
        Default is every block.
    dtype : {"auto", "float64", "float32"}
        ``auto`` picks single precision once the cache exceeds 512 MiB.
    memory_cap : int, optional
        Bytes allowed for the cache; :class:`ResourceError` beyond it.
    """

    def __init__(self, params, base, stream, scale=None, cached_blocks=None, dtype="auto", memory_cap=None):
        if base.gamma != params.gamma:
            raise ParameterError(f"base matrix has {base.gamma} blocks, params expect {params.gamma}")
        self.n = int(params.n)
        self.N = int(params.N)
        self.gamma = int(params.gamma)
        if self.n % self.gamma or self.N % self.gamma:
            raise ParameterError("gamma must divide both n and N")
        self.base = base
        self.stream = stream
        self.scale = float(params.L if scale is None else scale)
        self.rows_per_block = self.n // self.gamma
        self.cols_per_block = self.N // self.gamma
        blocks = range(self.gamma) if cached_blocks is None else cached_blocks
        self.cached_blocks = tuple(sorted({int(c) for c in blocks}))
        n_cached = len(self.cached_blocks) * self.n * self.cols_per_block
        if dtype == "auto":
            dtype = np.float64 if 8 * n_cached <= FLOAT64_LIMIT else np.float32
        self.dtype = np.dtype(dtype)
        required = n_cached * self.dtype.itemsize
        cap = DEFAULT_MEMORY_CAP if memory_cap is None else memory_cap
        if required > cap:
            raise ResourceError(
                f"design matrix cache needs {required} bytes, cap is {cap}", required_bytes=required
            )
        # row-block standard deviations, one column per column block
        self._row_scale = np.repeat(np.sqrt(base.W / self.scale), self.rows_per_block, axis=0)
        self._cache = {c: self._generate_block(c) for c in self.cached_blocks}

    # -- generation ---------------------------------------------------------
    def _generate_columns(self, cols):
        """Rows of the returned ``(len(cols), n)`` array are matrix columns."""
        cols = np.asarray(cols, dtype=np.int64)
        out = np.empty((cols.size, self.n), dtype=self.dtype)
        for k, j in enumerate(cols):
            rng = self.stream.child(int(j)).generator()
            out[k] = rng.standard_normal(self.n, dtype=self.dtype)
        blocks = cols // self.cols_per_block
        out *= self._row_scale[:, blocks].T.astype(self.dtype)
        return out

    def _generate_block(self, c):
        start = c * self.cols_per_block
        block = self._generate_columns(np.arange(start, start + self.cols_per_block))
        block.setflags(write=False)
        return block

    def column_block(self, c):
        """``A[:, cols of block c]`` transposed, shape ``(N/Γ, n)``."""
        if not 0 <= c < self.gamma:
            raise ParameterError(f"column block {c} out of range")
        cached = self._cache.get(c)
        return cached if cached is not None else self._generate_block(c)

    def block(self, r, c):
        """Dense block ``A_rc`` of shape ``(n/Γ, N/Γ)``."""
        rows = slice(r * self.rows_per_block, (r + 1) * self.rows_per_block)
        return np.asarray(self.column_block(c)[:, rows].T)

    def to_dense(self):
        return np.concatenate([self.column_block(c) for c in range(self.gamma)], axis=0).T

    @property
    def nbytes(self):
        return sum(b.nbytes for b in self._cache.values())

    # -- products -----------------------------------------------------------
    def block_matvec(self, c, v_c):
        """``A_{:,c} v_c`` for one column block, exploiting sparsity if uncached."""
        v_c = np.asarray(v_c)
        cached = self._cache.get(c)
        if cached is not None:
            return cached.T @ v_c.astype(self.dtype, copy=False)
        nz = np.flatnonzero(v_c)
        if nz.size == 0:
            return np.zeros(self.n, dtype=self.dtype)
        if nz.size * 8 < self.cols_per_block:
            cols = self._generate_columns(c * self.cols_per_block + nz)
            return cols.T @ v_c[nz].astype(self.dtype, copy=False)
        return self._generate_block(c).T @ v_c.astype(self.dtype, copy=False)

    def block_rmatvec(self, c, u):
        """``A_{:,c}^T u`` for one column block."""
        return self.column_block(c) @ np.asarray(u).astype(self.dtype, copy=False)

    def matvec(self, v):
        v = np.asarray(v)
        if v.shape != (self.N,):
            raise ParameterError(f"matvec expects a vector of length {self.N}, got shape {v.shape}")
        out = np.zeros(self.n, dtype=np.result_type(self.dtype, v.dtype))
        w = self.cols_per_block
        for c in range(self.gamma):
            out += self.block_matvec(c, v[c * w:(c + 1) * w])
        return out

    def rmatvec(self, u):
        u = np.asarray(u)
        if u.shape != (self.n,):
            raise ParameterError(f"matvec_t expects a vector of length {self.n}, got shape {u.shape}")
        return np.concatenate([self.block_rmatvec(c, u) for c in range(self.gamma)])


def sample_design_matrix(params, base, stream, **kwargs):
    """Draw the block Gaussian design matrix; see :class:`DesignMatrix`."""
    if not isinstance(stream, RngStream):
        raise ParameterError("stream must be an RngStream")
    return DesignMatrix(params, base, stream, **kwargs)


def matvec(A, v):
    return A.matvec(v)


def matvec_t(A, u):
    return A.rmatvec(u)
