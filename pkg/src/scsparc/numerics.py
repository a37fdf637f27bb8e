"""Deterministic numerical substrate.

Gauss-Hermite rules for expectations under the standard Gaussian measure,
reproducible counter-based random streams, Monte Carlo expectations,
bracketed root finding and adaptive 1-D quadrature.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize, special

from .exceptions import NumericalError, ParameterError

__all__ = [
    "QuadratureRule",
    "RngStream",
    "McEstimate",
    "gauss_hermite",
    "gauss_expect",
    "mc_expect",
    "find_root_increasing",
    "integrate_1d",
    "DEFAULT_ORDER",
    "MAX_ORDER",
]

DEFAULT_ORDER = 40
MAX_ORDER = 512

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights with ``sum(w * g(x)) ~ E[g(Z)]``, ``Z ~ N(0, 1)``."""

    nodes: np.ndarray
    weights: np.ndarray
    order: int

    def expect(self, values):
        """Contract ``values`` (leading axis = nodes) against the weights."""
        return np.tensordot(self.weights, values, axes=(0, 0))


@lru_cache(maxsize=None)
def _hermegauss(order):
    # scipy switches to an asymptotic expansion for large orders, where
    # numpy's hermegauss overflows
    x, w = special.roots_hermitenorm(order)
    w = w / np.sqrt(2.0 * np.pi)
    # symmetrize away the O(eps) asymmetry of the eigenvalue solver
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    w = w / w.sum()
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_hermite(order):
    """Gauss-Hermite rule for the standard normal measure.

    Parameters
    ----------
    order : int
        Number of nodes, ``1 <= order <= 512``. The rule integrates
        polynomials up to degree ``2 * order - 1`` exactly.

    Returns
    -------
    QuadratureRule
    """
    if isinstance(order, bool) or not isinstance(order, (int, np.integer)):
        raise ParameterError(f"quadrature order must be an integer, got {order!r}")
    if not 1 <= order <= MAX_ORDER:
        raise ParameterError(f"quadrature order must lie in [1, {MAX_ORDER}], got {order}")
    x, w = _hermegauss(int(order))
    return QuadratureRule(nodes=x, weights=w, order=int(order))


def gauss_expect(func, order=DEFAULT_ORDER, tol=1e-8, adaptive=True):
    """``E[func(Z)]`` for ``Z ~ N(0, 1)`` by Gauss-Hermite quadrature.

    ``func`` maps the node vector (shape ``(k,)``) to values whose leading
    axis indexes the nodes. With ``adaptive`` the order is doubled (up to
    512) until two successive results agree within ``tol``; the last result
    is returned either way.
    """
    rule = gauss_hermite(order)
    value = rule.expect(func(rule.nodes))
    if not adaptive:
        return value
    while rule.order < MAX_ORDER:
        rule = gauss_hermite(min(2 * rule.order, MAX_ORDER))
        refined = rule.expect(func(rule.nodes))
        if np.all(np.abs(refined - value) <= tol):
            return refined
        value = refined
    return value


# ---------------------------------------------------------------------------
# random streams


def _splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _mix(a, b):
    return _splitmix64(_splitmix64(a & _MASK64) ^ (b & _MASK64))


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream identified by ``(master_seed, stream_id)``.

    The pair is hashed into a 128-bit Philox key, so streams with different
    ids are independent and any stream can be derived without coordination.
    Use :meth:`child` to derive sub-streams and :meth:`generator` to obtain
    a fresh :class:`numpy.random.Generator` positioned at the stream start.
    """

    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("master_seed", "stream_id"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise ParameterError(f"{name} must be an integer, got {value!r}")
            object.__setattr__(self, name, int(value) & _MASK64)

    def child(self, *ids):
        """Derive a sub-stream; ``child(a, b)`` equals ``child(a).child(b)``."""
        stream_id = self.stream_id
        for i in ids:
            stream_id = _mix(stream_id, int(i) + 1)
        return RngStream(self.master_seed, stream_id)

    @property
    def key(self):
        k0 = _mix(self.master_seed, self.stream_id)
        k1 = _mix(self.stream_id ^ 0xD1B54A32D192ED03, self.master_seed)
        return k0, k1

    def generator(self):
        return np.random.Generator(np.random.Philox(key=np.array(self.key, dtype=np.uint64)))


# ---------------------------------------------------------------------------
# Monte Carlo


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    n_samples: int

    def within(self, value, n_sigma=4.0, other_std_error=0.0):
        """True if ``value`` lies within ``n_sigma`` combined standard errors."""
        scale = np.hypot(self.std_error, other_std_error)
        return abs(self.mean - value) <= n_sigma * scale


def mc_expect(f, dim, n_samples, stream, vectorized=True, batch_size=65536):
    """Monte Carlo estimate of ``E[f(U)]`` with ``U ~ N(0, I_dim)``.

    Parameters
    ----------
    f : callable
        With ``vectorized`` it receives an ``(m, dim)`` array and returns
        ``m`` values; otherwise it is called once per sample vector.
    dim, n_samples : int
        ``n_samples >= 100``.
    stream : RngStream
        Samples are drawn in fixed-size batches from ``stream.generator()``,
        so the result is bit-reproducible.

    Returns
    -------
    McEstimate
        Sample mean and its standard error (sample std / sqrt(n), i.e. the
        jackknife error of the mean).
    """
    if dim < 1:
        raise ParameterError(f"dim must be positive, got {dim}")
    if n_samples < 100:
        raise ParameterError(f"n_samples must be at least 100, got {n_samples}")
    rng = stream.generator()
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n_samples:
        m = min(batch_size, n_samples - done)
        u = rng.standard_normal((m, dim))
        if vectorized:
            vals = np.asarray(f(u), dtype=float).reshape(m)
        else:
            vals = np.array([f(row) for row in u], dtype=float)
        bad = np.flatnonzero(~np.isfinite(vals))
        if bad.size:
            idx = done + int(bad[0])
            raise NumericalError(f"non-finite integrand at sample {idx}", index=idx)
        # shifted accumulation keeps the variance numerically stable
        if done == 0:
            shift = float(vals.mean())
        d = vals - shift
        total += float(d.sum())
        total_sq += float(d @ d)
        done += m
    mean_d = total / n_samples
    var = max(total_sq / n_samples - mean_d**2, 0.0) * n_samples / (n_samples - 1)
    return McEstimate(mean=shift + mean_d, std_error=float(np.sqrt(var / n_samples)), n_samples=n_samples)


# ---------------------------------------------------------------------------
# root finding and quadrature


def find_root_increasing(f, lo, hi, tol=1e-12):
    """Root of a non-decreasing ``f`` bracketed by ``f(lo) <= 0 <= f(hi)``.

    Brent's method (bisection safeguarded by secant / inverse quadratic
    steps), so differentiability is never assumed.
    """
    if not tol > 0:
        raise ParameterError("tol must be positive")
    if not lo <= hi:
        raise ParameterError(f"invalid bracket [{lo}, {hi}]")
    flo, fhi = f(lo), f(hi)
    if not (np.isfinite(flo) and np.isfinite(fhi)):
        raise ParameterError("f is not finite at the bracket ends")
    if flo > 0 or fhi < 0:
        raise ParameterError(f"bracket does not straddle a root: f({lo})={flo}, f({hi})={fhi}")
    if flo == 0:
        return float(lo)
    if fhi == 0:
        return float(hi)
    return float(optimize.brentq(f, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=500))


def integrate_1d(f, lo, hi, tol=1e-10, limit=200):
    """Adaptive quadrature of a scalar function over ``[lo, hi]``.

    Raises :class:`NumericalError` (carrying the partial result) when the
    requested absolute tolerance is not reached.
    """
    if hi == lo:
        return 0.0
    value, err, info = integrate.quad(f, lo, hi, epsabs=tol, epsrel=0.0, limit=limit, full_output=1)[:3]
    if not np.isfinite(value) or err > max(tol, 1e3 * np.finfo(float).eps * abs(value)):
        raise NumericalError(
            f"quadrature on [{lo}, {hi}] did not converge (estimated error {err:.3g})",
            partial=value,
        )
    return float(value)
