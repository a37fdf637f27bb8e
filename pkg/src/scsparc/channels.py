"""Memoryless channels and their scalar calculus.

Every channel exposes sampling, its output law, the output estimator
``g_out`` with its ``p``-derivative, the information function ``f_out``, the
potential ``psi_out`` and the capacity. All information quantities are in
nats.

Conventions: the channel input ``Z`` is standard normal (or has variance
``input_var``), and the estimator works with a Gaussian "prior"
``Z ~ N(p, sigma)``. With ``Z_y(p) = E[P_out(y | p + sqrt(sigma) X)]``,
``g_out = d/dp log Z_y(p)``.

The built-in sign channels (BEC, BSC) have closed forms in terms of

    k(u) = a phi(u) / (b + a Phi(u)),

evaluated in log space so that ``|p| / sqrt(sigma)`` may be huge.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import special

from .exceptions import NumericalError, ParameterError
from .numerics import DEFAULT_ORDER, gauss_expect, gauss_hermite, integrate_1d

__all__ = [
    "OutputAlphabet",
    "Channel",
    "AWGNChannel",
    "BECChannel",
    "BSCChannel",
    "CustomChannel",
    "make_channel",
    "channel_from_config",
    "sample_output",
    "g_out",
    "d_gout_dp",
    "f_out",
    "psi_out",
    "capacity",
    "capacity_entropy",
    "binary_entropy",
]

SIGMA_FLOOR = 1e-9
_LOG_2PI = np.log(2.0 * np.pi)
_SQRT_HALF_PI = np.sqrt(0.5 * np.pi)
_SQRT2 = np.sqrt(2.0)


def binary_entropy(eps):
    """``h2`` in nats (``0 log 0 = 0``)."""
    return special.entr(eps) + special.entr(1 - eps)


@dataclass(frozen=True)
class OutputAlphabet:
    discrete: Optional[tuple] = None
    continuous: bool = False

    def __post_init__(self):
        if (self.discrete is None) == (not self.continuous):
            raise ParameterError("exactly one of discrete / continuous must be set")


def _check_sigma(sigma, upper=1.0, clip=True):
    s = np.asarray(sigma, dtype=float)
    if np.any(~np.isfinite(s)) or np.any(s < 0) or np.any(s > upper * (1 + 1e-12)):
        raise ParameterError(f"sigma must lie in [0, {upper}], got {sigma}")
    # the generic and sign-channel formulas are singular at both ends
    return np.clip(s, SIGMA_FLOOR, upper * (1 - SIGMA_FLOOR)) if clip else np.clip(s, 0.0, upper)


def _check_positive(sigma):
    s = np.asarray(sigma, dtype=float)
    if np.any(~(s > 0)):
        raise ParameterError(f"sigma must be positive, got {sigma}")
    return s


def _log1p_over(x):
    """``log1p(x) / x`` with the removable singularity at 0 filled in."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-8
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0 - 0.5 * x, np.log1p(safe) / safe)


class Channel:
    """Base class. Subclasses provide the output law; the calculus is generic.

    The generic (quadrature) routines evaluate the posterior of ``Z`` under
    the Gaussian prior with an inner Gauss-Hermite rule of ``order`` nodes and
    the outer expectations with ``outer_order`` nodes per dimension.
    """

    kind = "custom"
    alphabet = OutputAlphabet(continuous=True)

    # -- output law ---------------------------------------------------------
    def log_likelihood(self, y, z):
        raise NotImplementedError

    def sample(self, u, rng):
        raise NotImplementedError

    def output_quadrature(self, z, order):
        """Nodes ``y`` (shape ``z.shape + (order,)``) and weights for ``Y | Z = z``.

        Needed only by the generic path of continuous-output channels.
        """
        raise NotImplementedError(f"{type(self).__name__} has no output quadrature")

    def config(self):
        raise NotImplementedError

    # -- estimator ----------------------------------------------------------
    def _posterior(self, p, y, sigma, order=DEFAULT_ORDER, strict=True):
        """log Z_y(p), posterior mean and variance of the standardized ``X``.

        Outputs with zero probability give ``log Z = -inf``; with ``strict``
        that is an error, otherwise their moments are set to the prior ones.
        """
        rule = gauss_hermite(order)
        p, y, sigma = np.broadcast_arrays(np.asarray(p, float), np.asarray(y, float), np.asarray(sigma, float))
        x = rule.nodes
        z = p[..., None] + np.sqrt(sigma)[..., None] * x
        logw = np.log(rule.weights) + self.log_likelihood(y[..., None], z)
        with np.errstate(divide="ignore", invalid="ignore"):
            log_norm = special.logsumexp(logw, axis=-1)
        dead = ~np.isfinite(log_norm)
        if strict and np.any(dead):
            raise NumericalError("posterior normalizer underflow in g_out")
        post = np.exp(logw - np.where(dead, 0.0, log_norm)[..., None])
        post[dead] = rule.weights
        mean = post @ x
        var = post @ (x * x) - mean**2
        return log_norm, mean, var

    def g_out(self, p, y, sigma, order=DEFAULT_ORDER):
        sigma = _check_positive(sigma)
        _, mean, _ = self._posterior(p, y, sigma, order)
        return mean / np.sqrt(sigma)

    def d_gout_dp(self, p, y, sigma, order=DEFAULT_ORDER):
        sigma = _check_positive(sigma)
        _, _, var = self._posterior(p, y, sigma, order)
        return (var - 1.0) / sigma

    # -- information functions ---------------------------------------------
    def _outer_terms(self, sigma, input_var, order, outer_order, with_log):
        """Per-σ expectation of ``-dg_out/dp`` (and of ``log Z_Y(P)``)."""
        out_f = np.empty(sigma.shape)
        out_psi = np.empty(sigma.shape)
        rule = gauss_hermite(outer_order)
        for idx, s in np.ndenumerate(sigma):
            p = np.sqrt(input_var - s) * rule.nodes
            if self.alphabet.discrete is not None:
                ys = np.asarray(self.alphabet.discrete, dtype=float)
                pp, yy = np.meshgrid(p, ys, indexing="ij")
                log_norm, _, var = self._posterior(pp, yy, s, order, strict=False)
                mass = np.exp(log_norm)
                ent = np.where(mass > 0, mass * np.where(mass > 0, log_norm, 0.0), 0.0)
                f_val = rule.weights @ (mass * (1.0 - var) / s).sum(axis=1)
                psi_val = rule.weights @ ent.sum(axis=1)
            else:
                z0 = p[:, None] + np.sqrt(s) * rule.nodes[None, :]
                ys, wy = self.output_quadrature(z0, outer_order)
                pp = np.broadcast_to(p[:, None, None], ys.shape)
                log_norm, _, var = self._posterior(pp, ys, s, order, strict=False)
                w3 = rule.weights[:, None, None] * rule.weights[None, :, None] * wy
                f_val = np.sum(w3 * (1.0 - var) / s)
                psi_val = np.sum(w3 * log_norm)
            out_f[idx] = f_val
            out_psi[idx] = psi_val
        return out_f, out_psi

    def f_out(self, sigma, input_var=1.0, method="auto", order=DEFAULT_ORDER, outer_order=20):
        """``-E[d g_out / dp]`` at prior variance ``sigma``.

        ``(P, Z0)`` are jointly Gaussian with ``E Z0^2 = input_var`` and
        ``E P^2 = E P Z0 = input_var - sigma``; ``Y ~ P_out(. | Z0)``.
        """
        s = _check_sigma(sigma, input_var)
        f, _ = self._outer_terms(np.atleast_1d(s), input_var, order, outer_order, False)
        return f.reshape(s.shape) if s.ndim else float(f[0])

    def psi_out(self, sigma, method="auto", order=DEFAULT_ORDER, outer_order=20):
        """Potential ``E log E_z P_out(Y | sqrt(sigma) z + sqrt(1 - sigma) xi)``."""
        s = _check_sigma(sigma)
        _, psi = self._outer_terms(np.atleast_1d(s), 1.0, order, outer_order, True)
        return psi.reshape(s.shape) if s.ndim else float(psi[0])

    def capacity(self, tol=1e-8, method="auto"):
        """``(1/2) int_0^1 f_out`` in nats (substituting ``sigma = x^2``).

        The substitution removes the ``sigma^{-1/2}`` endpoint singularity of
        sign-type channels.
        """
        def integrand(x):
            return x * self.f_out(max(x * x, SIGMA_FLOOR), method=method)

        return integrate_1d(integrand, 0.0, 1.0, tol=tol)

    def capacity_entropy(self, order=64):
        """``H(Y) - H(Y|Z)`` for discrete-output channels (nats)."""
        if self.alphabet.discrete is None:
            raise ParameterError("capacity_entropy requires a discrete output alphabet")
        rule = gauss_hermite(order)
        ys = np.asarray(self.alphabet.discrete, dtype=float)
        with np.errstate(divide="ignore"):
            logp = self.log_likelihood(ys[:, None], rule.nodes[None, :])
        prob = np.exp(logp)
        p_y = prob @ rule.weights
        h_y = -np.sum(np.where(p_y > 0, p_y * np.log(np.where(p_y > 0, p_y, 1.0)), 0.0))
        plogp = np.where(prob > 0, prob * np.where(prob > 0, logp, 0.0), 0.0)
        h_y_given_z = -(plogp.sum(axis=0) @ rule.weights)
        return float(h_y - h_y_given_z)


# ---------------------------------------------------------------------------
# built-in channels


@dataclass(frozen=True)
class AWGNChannel(Channel):
    """``y = u + w`` with ``w ~ N(0, noise_var)``."""

    noise_var: float = 1.0
    kind = "awgn"
    alphabet = OutputAlphabet(continuous=True)

    def __post_init__(self):
        if not self.noise_var > 0:
            raise ParameterError(f"AWGN noise variance must be positive, got {self.noise_var}")

    def config(self):
        return {"kind": "awgn", "param": self.noise_var}

    def log_likelihood(self, y, z):
        return -0.5 * (y - z) ** 2 / self.noise_var - 0.5 * (_LOG_2PI + np.log(self.noise_var))

    def sample(self, u, rng):
        u = np.asarray(u, dtype=float)
        return u + np.sqrt(self.noise_var) * rng.standard_normal(u.shape)

    def output_quadrature(self, z, order):
        rule = gauss_hermite(order)
        ys = z[..., None] + np.sqrt(self.noise_var) * rule.nodes
        return ys, np.broadcast_to(rule.weights, ys.shape)

    def g_out(self, p, y, sigma, order=DEFAULT_ORDER):
        sigma = _check_positive(sigma)
        return (np.asarray(y, float) - p) / (sigma + self.noise_var)

    def d_gout_dp(self, p, y, sigma, order=DEFAULT_ORDER):
        sigma = _check_positive(sigma)
        return np.broadcast_to(-1.0 / (sigma + self.noise_var), np.broadcast(p, y, sigma).shape) * 1.0

    def f_out(self, sigma, input_var=1.0, method="auto", order=DEFAULT_ORDER, outer_order=20):
        if method == "quadrature":
            return Channel.f_out(self, sigma, input_var, method, order, outer_order)
        s = _check_sigma(sigma, input_var, clip=False)
        out = 1.0 / (s + self.noise_var)
        return out if s.ndim else float(out)

    def psi_out(self, sigma, method="auto", order=DEFAULT_ORDER, outer_order=20):
        if method == "quadrature":
            return Channel.psi_out(self, sigma, method, order, outer_order)
        s = _check_sigma(sigma, clip=False)
        out = -0.5 * (_LOG_2PI + 1.0 + np.log(s + self.noise_var))
        return out if s.ndim else float(out)


class _SignChannel(Channel):
    """Shared closed forms for channels whose output depends on ``sign(z)``.

    Subclasses define ``_a``, ``_b`` (the ``k(u)`` constants) and
    ``_mass`` (``Z_s k(u_s) = _mass * phi(u_s)``).
    """

    alphabet = OutputAlphabet(discrete=(-1.0, 1.0))

    def _log_k(self, u):
        log_phi = -0.5 * u * u - 0.5 * _LOG_2PI
        if self._b == 0:
            log_den = special.log_ndtr(u)
        else:
            log_den = np.logaddexp(np.log(self._b), np.log(self._a) + special.log_ndtr(u))
        return np.log(self._a) + log_phi - log_den

    def _k(self, u):
        return np.exp(self._log_k(u))

    def _observed_sign(self, y):
        y = np.asarray(y, dtype=float)
        return np.sign(y)

    def g_out(self, p, y, sigma, order=DEFAULT_ORDER):
        sigma = _check_positive(sigma)
        s = self._observed_sign(y)
        p, s, sigma = np.broadcast_arrays(np.asarray(p, float), s, sigma)
        root = np.sqrt(sigma)
        u = s * p / root
        out = np.where(s == 0, 0.0, s * self._k(u) / root)
        return out if out.ndim else float(out)

    def d_gout_dp(self, p, y, sigma, order=DEFAULT_ORDER):
        sigma = _check_positive(sigma)
        s = self._observed_sign(y)
        p, s, sigma = np.broadcast_arrays(np.asarray(p, float), s, sigma)
        u = s * p / np.sqrt(sigma)
        k = self._k(u)
        out = np.where(s == 0, 0.0, -k * (u + k) / sigma)
        return out if out.ndim else float(out)

    def f_out(self, sigma, input_var=1.0, method="auto", order=DEFAULT_ORDER, outer_order=20):
        if method == "quadrature":
            return Channel.f_out(self, sigma, input_var, method, order, outer_order)
        s = np.atleast_1d(_check_sigma(sigma, input_var))
        scale = np.sqrt(1.0 - s / input_var)

        def inner(x):
            return self._k(x[:, None] * scale[None, :])

        mean_k = gauss_expect(inner, order=order)
        out = 2.0 * self._mass * mean_k / np.sqrt(2.0 * np.pi * s * input_var)
        return out.reshape(np.shape(sigma)) if np.ndim(sigma) else float(out[0])

    def psi_out(self, sigma, method="auto", order=DEFAULT_ORDER, outer_order=20):
        if method == "quadrature":
            return Channel.psi_out(self, sigma, method, order, outer_order)
        s = np.atleast_1d(_check_sigma(sigma))
        scale = np.sqrt(1.0 - s)

        def inner(x):
            return self._tail_ratio(x[:, None] * scale[None, :])

        mean_g = gauss_expect(inner, order=order)
        out = self._psi_const + self._psi_factor * np.sqrt(s / (2.0 * np.pi)) * mean_g
        return out.reshape(np.shape(sigma)) if np.ndim(sigma) else float(out[0])


@dataclass(frozen=True)
class BECChannel(_SignChannel):
    """``y = sign(u)`` except erased to ``0`` with probability ``erasure_prob``."""

    erasure_prob: float = 0.1
    kind = "bec"
    alphabet = OutputAlphabet(discrete=(-1.0, 0.0, 1.0))

    def __post_init__(self):
        if not 0 < self.erasure_prob < 1:
            raise ParameterError(f"erasure probability must lie in (0, 1), got {self.erasure_prob}")

    _a = 1.0
    _b = 0.0

    @property
    def _mass(self):
        return 1.0 - self.erasure_prob

    def config(self):
        return {"kind": "bec", "param": self.erasure_prob}

    def log_likelihood(self, y, z):
        y = np.asarray(y, dtype=float)
        sz = np.where(np.asarray(z) >= 0, 1.0, -1.0)
        eps = self.erasure_prob
        with np.errstate(divide="ignore"):
            return np.where(y == 0, np.log(eps), np.where(y == sz, np.log1p(-eps), -np.inf))

    def sample(self, u, rng):
        u = np.asarray(u, dtype=float)
        erased = rng.random(u.shape) < self.erasure_prob
        return np.where(erased, 0.0, np.where(u >= 0, 1.0, -1.0))

    # Psi = eps log eps + (1-eps) log(1-eps) + 2 (1-eps) E[Phi log Phi (c xi)]
    @property
    def _psi_const(self):
        return -binary_entropy(self.erasure_prob)

    @property
    def _psi_factor(self):
        return 2.0 * (1.0 - self.erasure_prob)

    @staticmethod
    def _tail_ratio(u):
        """``Phi(u) log Phi(u) / phi(u)``, stable for all ``u``."""
        neg = u <= 0
        un = np.where(neg, u, 0.0)
        up = np.where(neg, 0.0, u)
        left = _SQRT_HALF_PI * special.erfcx(-un / _SQRT2) * special.log_ndtr(un)
        q = special.ndtr(-up)
        right = special.ndtr(up) * (-_log1p_over(-q)) * _SQRT_HALF_PI * special.erfcx(up / _SQRT2)
        return np.where(neg, left, right)


@dataclass(frozen=True)
class BSCChannel(_SignChannel):
    """``y = sign(u)``, flipped with probability ``flip_prob``."""

    flip_prob: float = 0.1
    kind = "bsc"

    def __post_init__(self):
        if not 0 < self.flip_prob < 1:
            raise ParameterError(f"flip probability must lie in (0, 1), got {self.flip_prob}")

    @property
    def _a(self):
        return 1.0 - 2.0 * self.flip_prob

    @property
    def _b(self):
        return self.flip_prob

    @property
    def _mass(self):
        return self._a

    def config(self):
        return {"kind": "bsc", "param": self.flip_prob}

    def _log_k(self, u):
        if self._a == 0:
            return np.full(np.shape(u), -np.inf)
        if self._a < 0:
            # flip_prob > 1/2: the sign is reversed; k keeps the same form with |a|
            log_phi = -0.5 * u * u - 0.5 * _LOG_2PI
            log_den = np.log(1.0 - self.flip_prob + self._a * special.ndtr(u))
            return np.log(-self._a) + log_phi - log_den
        return super()._log_k(u)

    def g_out(self, p, y, sigma, order=DEFAULT_ORDER):
        out = super().g_out(p, y, sigma, order)
        return -out if self._a < 0 else out

    def log_likelihood(self, y, z):
        y = np.asarray(y, dtype=float)
        sz = np.where(np.asarray(z) >= 0, 1.0, -1.0)
        eps = self.flip_prob
        return np.where(y == sz, np.log1p(-eps), np.log(eps))

    def sample(self, u, rng):
        u = np.asarray(u, dtype=float)
        flipped = rng.random(u.shape) < self.flip_prob
        s = np.where(u >= 0, 1.0, -1.0)
        return np.where(flipped, -s, s)

    @property
    def _psi_const(self):
        return -binary_entropy(self.flip_prob)

    _psi_factor = 2.0

    def _tail_ratio(self, u):
        """``R(u) / phi(u)`` where ``R = D log D`` minus its two step limits."""
        eps = self.flip_prob
        big = 1.0 - eps
        a = 1.0 - 2.0 * eps
        if a == 0:
            return np.zeros(np.shape(u))
        neg = u < 0
        au = np.abs(u)
        t = special.ndtr(-au)
        t_over_phi = _SQRT_HALF_PI * special.erfcx(au / _SQRT2)
        right = eps * np.log(big / eps) - a * (big - a * t) / big * _log1p_over(-a * t / big)
        left = big * np.log(eps / big) + (eps + a * t) * (a / eps) * _log1p_over(a * t / eps)
        return t_over_phi * np.where(neg, left, right)


@dataclass(frozen=True)
class CustomChannel(Channel):
    """A user-defined channel.

    Parameters
    ----------
    log_likelihood : callable ``(y, z) -> log P_out(y | z)`` (vectorized)
    sampler : callable ``(u, rng) -> y``
    alphabet : sequence of output symbols, or None for continuous output
    output_quadrature : callable ``(z, order) -> (y_nodes, weights)``,
        required for continuous output
    g_out_closed : optional closed-form ``(p, y, sigma) -> g_out``
    """

    log_likelihood_fn: Callable = None
    sampler: Callable = None
    symbols: Optional[Sequence[float]] = None
    output_quadrature_fn: Optional[Callable] = None
    g_out_closed: Optional[Callable] = None
    name: str = "custom"
    alphabet: OutputAlphabet = field(init=False)

    def __post_init__(self):
        if self.log_likelihood_fn is None or self.sampler is None:
            raise ParameterError("custom channels need a log-likelihood and a sampler")
        if self.symbols is not None:
            alphabet = OutputAlphabet(discrete=tuple(float(s) for s in self.symbols))
        else:
            if self.output_quadrature_fn is None:
                raise ParameterError("continuous custom channels need an output quadrature")
            alphabet = OutputAlphabet(continuous=True)
        object.__setattr__(self, "alphabet", alphabet)

    kind = "custom"

    def config(self):
        return {"kind": "custom", "name": self.name}

    def log_likelihood(self, y, z):
        return self.log_likelihood_fn(y, z)

    def sample(self, u, rng):
        return self.sampler(np.asarray(u, dtype=float), rng)

    def output_quadrature(self, z, order):
        return self.output_quadrature_fn(z, order)

    def g_out(self, p, y, sigma, order=DEFAULT_ORDER):
        if self.g_out_closed is not None:
            return self.g_out_closed(p, y, _check_positive(sigma))
        return super().g_out(p, y, sigma, order)


# ---------------------------------------------------------------------------
# construction and functional interface

_KINDS = {"awgn": AWGNChannel, "bec": BECChannel, "bsc": BSCChannel}


def make_channel(kind, param):
    """Build a built-in channel from its kind (``awgn|bec|bsc``) and parameter."""
    try:
        cls = _KINDS[str(kind).lower()]
    except KeyError:
        raise ParameterError(f"unknown channel kind {kind!r}; expected one of {sorted(_KINDS)}") from None
    return cls(float(param))


def channel_from_config(cfg):
    """``{"kind": ..., "param": ...}`` -> channel."""
    if isinstance(cfg, Channel):
        return cfg
    if not isinstance(cfg, dict) or "kind" not in cfg or "param" not in cfg:
        raise ParameterError(f"channel config must be {{'kind', 'param'}}, got {cfg!r}")
    return make_channel(cfg["kind"], cfg["param"])


def sample_output(channel, u, stream):
    """One channel draw per entry of ``u`` from ``stream``."""
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ParameterError("channel input must be finite")
    return channel.sample(u, stream.generator())


def g_out(channel, p, y, sigma):
    return channel.g_out(p, y, sigma)


def d_gout_dp(channel, p, y, sigma):
    return channel.d_gout_dp(p, y, sigma)


def f_out(channel, sigma, **kwargs):
    return channel.f_out(sigma, **kwargs)


def psi_out(channel, sigma, **kwargs):
    return channel.psi_out(sigma, **kwargs)


def capacity(channel, **kwargs):
    return channel.capacity(**kwargs)


def capacity_entropy(channel, **kwargs):
    return channel.capacity_entropy(**kwargs)
