"""Spatially coupled GAMP for generalized linear models with separable priors.

The signal ``beta`` has ``N`` i.i.d. entries from a prior, the design matrix
has blocks with entry variance ``W_rc / (N/Γ)`` and ``y = channel(A beta)``.
The first and last ``4 omega`` column blocks are known to the decoder,
mirroring the SPARC seeds.

State evolution (per-entry MSE ``psi_c``):

    sigma_r = sum_c W_rc psi_c
    tau_c   = 1 / (alpha sum_r W_rc f_out(sigma_r; Q))
    psi_c   = mmse(tau_c)

with ``Q = Γ E[beta^2]`` the variance of each channel input.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .design import DesignMatrix, seed_sections
from .exceptions import DivergenceError, ParameterError
from .numerics import DEFAULT_ORDER, gauss_hermite

__all__ = [
    "Prior",
    "GaussianPrior",
    "BernoulliPrior",
    "BernoulliGaussianPrior",
    "DiscretePrior",
    "prior_from_config",
    "GlmParams",
    "GlmTrajectory",
    "GlmRun",
    "g_in_glm",
    "psi_update_glm",
    "run_se_glm",
    "gaussian_fixed_point",
    "sample_glm_design",
    "gamp_decode_glm",
    "run_glm_trial",
]

_LOG_2PI = math.log(2 * math.pi)


def _log_normal(x, var):
    return -0.5 * x * x / var - 0.5 * (_LOG_2PI + np.log(var))


class Prior:
    """A scalar prior written as a finite Gaussian mixture (point masses have variance 0)."""

    kind = "prior"

    def components(self):
        """``(weights, means, variances)`` arrays."""
        raise NotImplementedError

    @property
    def mean(self):
        w, m, _ = self.components()
        return float(w @ m)

    @property
    def second_moment(self):
        w, m, v = self.components()
        return float(w @ (m * m + v))

    @property
    def variance(self):
        return self.second_moment - self.mean**2

    def sample(self, size, rng):
        w, m, v = self.components()
        k = rng.choice(len(w), size=size, p=w)
        return m[k] + np.sqrt(v[k]) * rng.standard_normal(size)

    def posterior(self, r, tau):
        """Posterior mean and variance of ``beta`` given ``beta + sqrt(tau) Z = r``."""
        tau = _check_tau(tau)
        w, m, v = self.components()
        r = np.asarray(r, dtype=float)[..., None]
        total = v + tau
        logits = np.log(w) + _log_normal(r - m, total)
        resp = special.softmax(logits, axis=-1)
        comp_mean = (m * tau + r * v) / total
        comp_var = v * tau / total
        mean = np.sum(resp * comp_mean, axis=-1)
        second = np.sum(resp * (comp_mean**2 + comp_var), axis=-1)
        return mean, np.maximum(second - mean**2, 0.0)

    def config(self):
        raise NotImplementedError


def _check_tau(tau):
    tau = np.asarray(tau, dtype=float)
    if np.any(~(tau > 0)):
        raise ParameterError(f"tau must be positive, got {tau}")
    return tau


@dataclass(frozen=True)
class GaussianPrior(Prior):
    loc: float = 0.0
    var: float = 1.0
    kind = "gaussian"

    def __post_init__(self):
        if not self.var > 0:
            raise ParameterError(f"prior variance must be positive, got {self.var}")

    def components(self):
        return np.array([1.0]), np.array([self.loc]), np.array([self.var])

    def posterior(self, r, tau):
        tau = _check_tau(tau)
        r = np.asarray(r, dtype=float)
        total = self.var + tau
        return (r * self.var + self.loc * tau) / total, np.broadcast_to(self.var * tau / total, r.shape) * 1.0

    def config(self):
        return {"kind": "gaussian", "mean": self.loc, "var": self.var}


@dataclass(frozen=True)
class BernoulliPrior(Prior):
    """``beta in {0, 1}`` with ``P(beta = 1) = p``."""

    p: float = 0.5
    kind = "bernoulli"

    def __post_init__(self):
        if not 0 < self.p < 1:
            raise ParameterError(f"Bernoulli probability must lie in (0, 1), got {self.p}")

    def components(self):
        return np.array([1 - self.p, self.p]), np.array([0.0, 1.0]), np.zeros(2)

    def posterior(self, r, tau):
        tau = _check_tau(tau)
        r = np.asarray(r, dtype=float)
        post = special.expit(math.log(self.p / (1 - self.p)) + (2 * r - 1) / (2 * tau))
        return post, post * (1 - post)

    def config(self):
        return {"kind": "bernoulli", "p": self.p}


@dataclass(frozen=True)
class BernoulliGaussianPrior(Prior):
    """``0`` with probability ``1 - p``, otherwise ``N(0, var)``."""

    p: float = 0.1
    var: float = 1.0
    kind = "bg"

    def __post_init__(self):
        if not 0 < self.p <= 1 or not self.var > 0:
            raise ParameterError(f"need 0 < p <= 1 and var > 0, got p={self.p}, var={self.var}")

    def components(self):
        return np.array([1 - self.p, self.p]), np.zeros(2), np.array([0.0, self.var])

    def posterior(self, r, tau):
        tau = _check_tau(tau)
        r = np.asarray(r, dtype=float)
        if self.p == 1:
            total = self.var + tau
            return r * self.var / total, np.broadcast_to(self.var * tau / total, r.shape) * 1.0
        total = self.var + tau
        slab = special.expit(math.log(self.p / (1 - self.p)) + _log_normal(r, total) - _log_normal(r, tau))
        shrink = self.var / total
        mean = slab * shrink * r
        second = slab * ((shrink * r) ** 2 + self.var * tau / total)
        return mean, np.maximum(second - mean**2, 0.0)

    def config(self):
        return {"kind": "bg", "p": self.p, "var": self.var}


@dataclass(frozen=True)
class DiscretePrior(Prior):
    """Arbitrary prior tabulated on finitely many support points."""

    points: tuple = (0.0, 1.0)
    probs: tuple = (0.5, 0.5)
    kind = "discrete"

    def __post_init__(self):
        pr = np.asarray(self.probs, dtype=float)
        if len(self.points) != len(pr) or np.any(pr <= 0) or abs(pr.sum() - 1) > 1e-12:
            raise ParameterError("discrete prior needs positive probabilities summing to 1, one per point")

    def components(self):
        k = len(self.points)
        return np.asarray(self.probs, float), np.asarray(self.points, float), np.zeros(k)

    def config(self):
        return {"kind": "discrete", "points": list(self.points), "probs": list(self.probs)}


def prior_from_config(cfg):
    """``{"kind": "gaussian"|"bernoulli"|"bg", ...}`` -> prior."""
    if isinstance(cfg, Prior):
        return cfg
    kind = str(cfg.get("kind", "")).lower()
    if kind == "gaussian":
        return GaussianPrior(float(cfg.get("mean", 0.0)), float(cfg.get("var", 1.0)))
    if kind == "bernoulli":
        return BernoulliPrior(float(cfg.get("p", 0.5)))
    if kind in ("bg", "bernoulli_gaussian", "bernoulligaussian"):
        return BernoulliGaussianPrior(float(cfg.get("p", 0.1)), float(cfg.get("var", 1.0)))
    if kind == "discrete":
        return DiscretePrior(tuple(cfg["points"]), tuple(cfg["probs"]))
    raise ParameterError(f"unknown prior kind {kind!r}")


def g_in_glm(r, tau, prior):
    """Posterior mean ``E[beta | beta + sqrt(tau) Z = r]``."""
    return prior.posterior(r, tau)[0]


def psi_update_glm(tau, prior, order=DEFAULT_ORDER, method="auto"):
    """Scalar MMSE ``E[(beta - g_in(beta + sqrt(tau) G, tau))^2]``.

    Integrates over the mixture component of ``beta`` exactly and over the
    observation ``r ~ N(mean_k, var_k + tau)`` by Gauss-Hermite quadrature.
    ``method="quadrature"`` skips the Gaussian-prior closed form.
    """
    tau = float(_check_tau(tau))
    if isinstance(prior, GaussianPrior) and method != "quadrature":
        return prior.var * tau / (prior.var + tau)
    w, m, v = prior.components()
    rule = gauss_hermite(order)
    total = 0.0
    for wk, mk, vk in zip(w, m, v):
        r = mk + math.sqrt(vk + tau) * rule.nodes
        total += wk * (rule.weights @ prior.posterior(r, tau)[1])
    return float(min(max(total, 0.0), prior.variance))


# ---------------------------------------------------------------------------
# coupled model


@dataclass(frozen=True)
class GlmParams:
    """Sizes of the coupled linear model; ``n`` is rounded up to a multiple of Γ."""

    N: int
    sampling_ratio: float
    gamma: int
    omega: int
    rho: float = 0.0
    n: int = field(init=False)

    def __post_init__(self):
        if self.N % self.gamma:
            raise ParameterError(f"gamma={self.gamma} must divide N={self.N}")
        if self.gamma <= 8 * self.omega:
            raise ParameterError(f"gamma={self.gamma} must exceed 8*omega={8 * self.omega}")
        if not self.sampling_ratio > 0:
            raise ParameterError("sampling ratio must be positive")
        if not 0 <= self.rho < 1:
            raise ParameterError(f"rho must lie in [0, 1), got {self.rho}")
        n = math.ceil(round(self.sampling_ratio * self.N) / self.gamma) * self.gamma
        object.__setattr__(self, "n", int(max(n, self.gamma)))

    @property
    def alpha(self):
        return self.n / self.N

    @property
    def rows_per_block(self):
        return self.n // self.gamma

    @property
    def cols_per_block(self):
        return self.N // self.gamma

    def to_dict(self):
        return {"N": self.N, "alpha": self.sampling_ratio, "gamma": self.gamma, "omega": self.omega,
                "rho": self.rho, "n": self.n, "realized_alpha": self.alpha}


@dataclass
class GlmTrajectory:
    psi: np.ndarray
    sigma: np.ndarray
    tau: np.ndarray
    input_var: float

    @property
    def iterations(self):
        return len(self.sigma)

    def mean_psi(self):
        return self.psi.mean(axis=1)


def _glm_initial_psi(params, prior):
    psi = np.full(params.gamma, prior.variance)
    psi[list(seed_sections(params.gamma, params.omega).blocks)] = 0.0
    return psi


def run_se_glm(params, base, channel, prior, T_max, psi_update=None, stop_tol=1e-12):
    """State evolution for the coupled linear model.

    ``psi_update(tau)`` defaults to the quadrature MMSE of ``prior``.
    Stops after ``T_max`` steps or when no block changes by more than
    ``stop_tol``.
    """
    if T_max < 1:
        raise ParameterError("T_max must be at least 1")
    update = psi_update or (lambda t: psi_update_glm(t, prior))
    seeded = seed_sections(params.gamma, params.omega).mask()
    q = params.gamma * prior.second_moment
    psi = _glm_initial_psi(params, prior)
    hist = {"psi": [psi], "sigma": [], "tau": []}
    for _ in range(T_max):
        sigma = base.W @ psi
        info = np.atleast_1d(np.asarray(channel.f_out(np.clip(sigma, 0.0, q), input_var=q), dtype=float))
        if np.any(info <= 0):
            bad = int(np.flatnonzero(info <= 0)[0])
            raise DivergenceError(f"channel is uninformative at row block {bad}", block=bad)
        tau = 1.0 / (params.alpha * (base.W.T @ info))
        new = np.array([0.0 if seeded[c] else update(tau[c]) for c in range(params.gamma)])
        hist["sigma"].append(sigma)
        hist["tau"].append(tau)
        hist["psi"].append(new)
        done = np.max(np.abs(new - psi)) <= stop_tol
        psi = new
        if done:
            break
    return GlmTrajectory(psi=np.array(hist["psi"]), sigma=np.array(hist["sigma"]),
                         tau=np.array(hist["tau"]), input_var=q)


def gaussian_fixed_point(params, base, noise_var, prior_var, tol=1e-14, max_iter=100000):
    """Fixed point of the all-Gaussian recursion (Gaussian prior, AWGN channel).

    Every map is in closed form: ``f_out = 1 / (sigma + noise_var)`` and
    ``psi = v tau / (v + tau)``.
    """
    seeded = seed_sections(params.gamma, params.omega).mask()
    psi = np.where(seeded, 0.0, prior_var)
    for _ in range(max_iter):
        sigma = base.W @ psi
        tau = 1.0 / (params.alpha * (base.W.T @ (1.0 / (sigma + noise_var))))
        new = np.where(seeded, 0.0, prior_var * tau / (prior_var + tau))
        if np.max(np.abs(new - psi)) <= tol:
            return new
        psi = new
    return psi


def sample_glm_design(params, base, stream, **kwargs):
    """Design matrix with block entry variance ``W_rc / (N/Γ)``.

    Only the unseeded column blocks are cached unless ``cached_blocks`` is
    given; seeded blocks are regenerated when needed.
    """
    if "cached_blocks" not in kwargs:
        seeded = seed_sections(params.gamma, params.omega).mask()
        kwargs["cached_blocks"] = [c for c in range(params.gamma) if not seeded[c]]
    return DesignMatrix(params, base, stream, scale=params.N / params.gamma, **kwargs)


@dataclass
class GlmRun:
    beta: np.ndarray
    iterations: int
    mse: list = field(default_factory=list)


def gamp_decode_glm(A, y, channel, params, base, prior, beta_seeded, se, iters, truth=None):
    """Coupled GAMP with the prior's posterior-mean denoiser.

    Seed blocks hold ``beta_seeded``; the others start at the prior mean.
    ``sigma[t]`` and ``tau[t]`` come from the trajectory ``se`` (last row
    reused past its end).
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (params.n,):
        raise ParameterError(f"y must have length {params.n}")
    seeds = seed_sections(params.gamma, params.omega)
    seeded = seeds.mask()
    width = params.cols_per_block
    rows = params.rows_per_block
    beta = np.full(params.N, prior.mean)
    for c in seeds.blocks:
        beta[c * width:(c + 1) * width] = beta_seeded[c * width:(c + 1) * width]
    free_blocks = [c for c in range(params.gamma) if not seeded[c]]
    seed_part = np.zeros(params.n)
    for c in seeds.blocks:
        seed_part += A.block_matvec(c, beta[c * width:(c + 1) * width])
    free_part = np.zeros(params.n)
    for c in free_blocks:
        free_part += A.block_matvec(c, beta[c * width:(c + 1) * width])
    s = np.zeros(params.n)
    run = GlmRun(beta=beta, iterations=0)
    for t in range(iters):
        row = min(t, len(se.sigma) - 1)
        # rows fed only by seeded blocks have sigma = 0; keep g_out defined there
        sigma_rows = np.repeat(np.maximum(se.sigma[row], 1e-12), rows)
        tau = se.tau[row]
        p = seed_part + free_part - sigma_rows * s
        s = np.asarray(channel.g_out(p, y, sigma_rows), dtype=float)
        if not np.all(np.isfinite(s)):
            raise DivergenceError(f"non-finite output estimate at iteration {t}", iteration=t,
                                  block=int(np.flatnonzero(~np.isfinite(s))[0]) // rows)
        new_free = np.zeros(params.n)
        for c in free_blocks:
            cols = slice(c * width, (c + 1) * width)
            r_c = beta[cols] + tau[c] * A.block_rmatvec(c, s)
            beta[cols] = g_in_glm(r_c, tau[c], prior)
            if not np.all(np.isfinite(beta[cols])):
                raise DivergenceError(f"non-finite input estimate at iteration {t}", iteration=t, block=c)
            new_free += A.block_matvec(c, beta[cols])
        free_part = new_free
        run.iterations = t + 1
        if truth is not None:
            run.mse.append(float(np.sum((beta - truth) ** 2) / params.N))
    run.beta = beta
    return run


def run_glm_trial(params, base, channel, prior, se, stream, iters):
    """Draw a design, a signal and an output from ``stream``, then decode.

    Sub-streams 0, 1 and 2 of ``stream`` feed the design, the signal and
    the channel noise. Returns the :class:`GlmRun` with its MSE record.
    """
    A = sample_glm_design(params, base, stream.child(0))
    beta = prior.sample(params.N, stream.child(1).generator())
    y = channel.sample(np.asarray(A.matvec(beta), dtype=float), stream.child(2).generator())
    return gamp_decode_glm(A, y, channel, params, base, prior, beta, se, iters, truth=beta)
