"""State evolution of the coupled decoder and the decoding-wave analysis.

Block indices are 0-based. The recursion, started from ``psi = 0`` on the
seed blocks and ``1`` elsewhere, reads

    sigma_r   = (1/Γ) sum_c W_rc psi_c
    phi_r     = 1 / f_out(sigma_r)
    tau_c     = (R / ln M) / [(1/Γ) sum_r W_rc / phi_r]
    psi_c     = 1 - eps(tau_c)          (0 on seeds)

where ``eps(tau)`` is the expected posterior mass that the sectionwise
denoiser puts on the true entry when the section is seen in Gaussian noise
of variance ``tau``.
"""

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import special

from .design import seed_sections
from .exceptions import DivergenceError, ParameterError, UndecodableError
from .numerics import RngStream, find_root_increasing, gauss_expect, integrate_1d

__all__ = [
    "SectionMmse",
    "SeTrajectory",
    "WaveReport",
    "eps_tau",
    "eps_tau_semi_analytic",
    "se_step",
    "run_se",
    "initial_sigma_closed_form",
    "info_integral",
    "h_delta",
    "wave_speed_g",
    "max_iters",
    "f_M_delta",
    "regime_classify",
    "decoded_frontier",
    "wave_progress",
    "perp_diagnostics",
    "potential_curvature",
    "DEFAULT_MC_SAMPLES",
]

DEFAULT_MC_SAMPLES = 100_000


def _check_tau(tau):
    tau = np.asarray(tau, dtype=float)
    if np.any(~(tau > 0)):
        raise ParameterError(f"tau must be positive, got {tau}")
    return tau


def _wrong_mass(u, tau):
    """Posterior mass off the true entry (column 0) for noise rows ``u``."""
    scaled = u * (1.0 / np.sqrt(tau))
    scaled[:, 0] += 1.0 / tau
    np.subtract(scaled, scaled.max(axis=1, keepdims=True), out=scaled)
    np.exp(scaled, out=scaled)
    wrong = scaled[:, 1:].sum(axis=1)
    # the largest term is exactly 1, so the denominator never underflows
    return wrong / (wrong + scaled[:, 0])


def eps_tau(tau, M, n_mc, stream):
    """Monte Carlo estimate of the posterior mass on the true entry.

    Parameters
    ----------
    tau : float
        Effective noise variance, ``> 0``.
    M : int
        Section size, ``>= 2``.
    n_mc : int
        Number of samples.
    stream : RngStream

    Returns
    -------
    McEstimate
    """
    tau = float(_check_tau(tau))
    if M < 2:
        raise ParameterError(f"M must be at least 2, got {M}")
    from .numerics import mc_expect

    def f(u):
        return 1.0 - _wrong_mass(u, tau)

    return mc_expect(f, dim=int(M), n_samples=int(n_mc), stream=stream)


class SectionMmse:
    """``psi(tau) = 1 - eps(tau)`` with common random numbers.

    One fixed ``(n_mc, M)`` Gaussian sample is reused for every ``tau``, so
    ``psi`` is a smooth deterministic function of ``tau`` and equal inputs
    give bit-equal outputs. The off-truth mass is averaged directly, which
    keeps small values of ``psi`` accurate.
    """

    def __init__(self, M, n_mc=DEFAULT_MC_SAMPLES, stream=None, batch=16384):
        if M < 2:
            raise ParameterError(f"M must be at least 2, got {M}")
        if n_mc < 100:
            raise ParameterError(f"n_mc must be at least 100, got {n_mc}")
        self.M = int(M)
        self.n_mc = int(n_mc)
        stream = RngStream(0) if stream is None else stream
        self._u = stream.generator().standard_normal((self.n_mc, self.M))
        self._batch = batch

    def __call__(self, tau):
        """Mean and standard error of ``1 - eps(tau)``."""
        tau = float(_check_tau(tau))
        vals = np.empty(self.n_mc)
        for start in range(0, self.n_mc, self._batch):
            vals[start:start + self._batch] = _wrong_mass(self._u[start:start + self._batch], tau)
        mean = float(vals.mean())
        se = float(vals.std(ddof=1) / math.sqrt(self.n_mc))
        return mean, se


def eps_tau_semi_analytic(tau, M, order=80):
    """Cross-check of ``eps(tau)`` that integrates the true entry exactly.

    Conditions on the true entry's noise and replaces the sum over the
    ``M - 1`` others by its mean with a second-order (delta-method)
    correction. Accurate when that sum concentrates (large ``M`` relative to
    ``exp(1/tau)``).
    """
    tau = float(_check_tau(tau))
    m1 = M - 1
    log_mean = math.log(m1) + 0.5 / tau
    # Var(sum) / mean^2 = (e^{1/tau} - 1) / (M - 1)
    rel_var = math.expm1(1.0 / tau) / m1

    def f(u):
        log_a = 1.0 / tau + u / math.sqrt(tau)
        # A / (A + S) at S = mean, and its second derivative in S
        x = special.expit(log_a - log_mean)
        return x - x * (1 - x) ** 2 * rel_var

    return float(np.clip(gauss_expect(f, order=order), 0.0, 1.0))


# ---------------------------------------------------------------------------
# recursion


@dataclass
class SeTrajectory:
    """State-evolution iterates.

    ``psi[t]`` (``t = 0..T``) is the per-block MSE prediction after ``t``
    steps; ``sigma[t]``, ``phi[t]``, ``tau[t]`` (``t = 0..T-1``) are computed
    from ``psi[t]``. ``psi_se`` holds the Monte Carlo standard errors.
    """

    psi: np.ndarray
    sigma: np.ndarray
    phi: np.ndarray
    tau: np.ndarray
    psi_se: np.ndarray
    seeds: tuple = ()

    @property
    def iterations(self):
        return len(self.sigma)

    def mean_psi(self):
        return self.psi.mean(axis=1)


def _initial_psi(gamma, seeds):
    psi = np.ones(gamma)
    psi[list(seeds.blocks)] = 0.0
    return psi


def se_step(psi, base, params, channel, mmse, seeds):
    """One step of the recursion.

    Returns
    -------
    sigma, phi, tau, psi_next, psi_next_se : arrays of length Γ
    """
    psi = np.asarray(psi, dtype=float)
    if np.any((psi < 0) | (psi > 1)):
        raise ParameterError("psi entries must lie in [0, 1]")
    gamma = base.gamma
    sigma = base.W @ psi / gamma
    info = np.atleast_1d(np.asarray(channel.f_out(np.clip(sigma, 0.0, 1.0)), dtype=float))
    dead = np.flatnonzero(info <= 0)
    if dead.size:
        raise DivergenceError(f"channel is uninformative at row block {int(dead[0])}", block=int(dead[0]))
    phi = 1.0 / info
    tau = (params.rate / math.log(params.M)) / (base.W.T @ info / gamma)
    psi_next = np.zeros(gamma)
    psi_se = np.zeros(gamma)
    seeded = seeds.mask()
    for c in range(gamma):
        if not seeded[c]:
            psi_next[c], psi_se[c] = mmse(tau[c])
    return sigma, phi, tau, psi_next, psi_se


def run_se(params, base, channel, T_max, stop_tol=1e-10, stream=None, n_mc=DEFAULT_MC_SAMPLES, mmse=None,
           fixed_point_tol=0.0):
    """Iterate the recursion from the seeded initialization.

    Stops after ``T_max`` steps, once every ``psi_c <= stop_tol``, or once no
    ``psi_c`` moves by more than ``fixed_point_tol`` (off by default).
    """
    if T_max < 1:
        raise ParameterError(f"T_max must be at least 1, got {T_max}")
    seeds = seed_sections(params.gamma, params.omega)
    if mmse is None:
        mmse = SectionMmse(params.M, n_mc, RngStream(0) if stream is None else stream)
    psi = _initial_psi(params.gamma, seeds)
    rows = {"psi": [psi], "sigma": [], "phi": [], "tau": [], "psi_se": [np.zeros_like(psi)]}
    for _ in range(T_max):
        prev = psi
        sigma, phi, tau, psi, psi_se = se_step(psi, base, params, channel, mmse, seeds)
        for key, val in zip(("sigma", "phi", "tau", "psi", "psi_se"), (sigma, phi, tau, psi, psi_se)):
            rows[key].append(val)
        if psi.max() <= stop_tol or np.max(np.abs(psi - prev)) <= fixed_point_tol:
            break
    return SeTrajectory(seeds=seeds.blocks, **{k: np.array(v) for k, v in rows.items()})


def initial_sigma_closed_form(gamma, omega, rho):
    """``sigma_r`` of the first step, from block counting (needs ``Γ >= 10 ω``).

    Rows near the edge see only off-band unseeded blocks; further in, the
    band picks up ``min(k, 2 omega + 1)`` unseeded blocks.
    """
    if gamma < 10 * omega or omega < 1:
        raise ParameterError("closed form needs omega >= 1 and gamma >= 10 * omega")
    out = np.empty(gamma)
    half = -(-gamma // 2)
    for r1 in range(1, half + 1):
        if r1 <= 3 * omega:
            val = (gamma - 8 * omega) / (gamma - omega - min(r1, omega + 1)) * rho
        else:
            k = min(r1 - 3 * omega, 2 * omega + 1)
            val = k * (1 - rho) / (2 * omega + 1) + (gamma - 8 * omega - k) / (gamma - 2 * omega - 1) * rho
        out[r1 - 1] = val
        out[gamma - r1] = val
    return out


# ---------------------------------------------------------------------------
# wave analysis


def info_integral(channel, upper, tol=1e-10):
    """``int_0^upper f_out``, with ``f_out`` held at ``f_out(1)`` beyond 1.

    Substitutes ``sigma = x^2`` to absorb the ``sigma^{-1/2}`` growth of
    sign channels at 0.
    """
    if upper < 0:
        raise ParameterError("upper limit must be non-negative")
    top = min(upper, 1.0)
    if hasattr(channel, "noise_var"):
        v = channel.noise_var
        base = math.log1p(top / v)
    else:
        base = integrate_1d(lambda x: 2.0 * x * channel.f_out(max(x * x, 1e-18)), 0.0, math.sqrt(top), tol=tol)
    if upper > 1.0:
        base += (upper - 1.0) * channel.f_out(1.0)
    return base


def h_delta(delta_gap, channel, capacity=None):
    """Root ``h`` of ``int_0^h f_out = 1.5 * delta_gap``."""
    cap = channel.capacity() if capacity is None else capacity
    target = 1.5 * delta_gap
    if not 0 < target < 2 * cap:
        raise ParameterError(f"gap {delta_gap} outside the feasible range (0, {4 * cap / 3})")
    return find_root_increasing(lambda h: info_integral(channel, h) - target, 0.0, 1.0, tol=1e-12)


def wave_speed_g(omega, rho, delta_gap, channel):
    """Largest ``k <= 2 omega + 1`` meeting the wave-speed inequality (0 if none).

    The inequality is
    ``int_0^{2 rho + k (1-rho)/(2 omega+1)} f_out - k (1-rho) f_out(1)/(2 omega+1) < 1.5 delta_gap``.
    """
    if omega < 1:
        raise ParameterError("omega must be at least 1")
    f1 = channel.f_out(1.0)
    target = 1.5 * delta_gap
    width = 2 * omega + 1
    best = 0
    for k in range(1, width + 1):
        frac = k * (1 - rho) / width
        if info_integral(channel, 2 * rho + frac) - frac * f1 < target:
            best = k
    return best


def max_iters(gamma, g):
    """Iteration budget ``ceil(Γ / 2g)``."""
    if g < 1:
        raise UndecodableError("wave speed is zero: the wave does not propagate")
    return -(-int(gamma) // (2 * int(g)))


def f_M_delta(M, delta, k=1.0):
    """Decoded-block threshold ``M^{-k delta} / (delta sqrt(ln M))``."""
    if M < 2 or not 0 < delta < 0.5 or not k > 0:
        raise ParameterError("need M >= 2, 0 < delta < 1/2 and k > 0")
    return M ** (-k * delta) / (delta * math.sqrt(math.log(M)))


@dataclass
class WaveReport:
    capacity: float
    rate: float
    gap: float
    delta: float
    h_delta: float
    rho: float
    rho_max: float
    g: int
    T: int
    f_M_delta: float
    k: float
    regime: str
    notes: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def regime_classify(params, channel, delta=None, k=1.0, capacity=None):
    """Capacity gap, wave speed and iteration budget for a code.

    ``delta`` defaults to the midpoint of ``(0, min(gap / 2R, 1/2))``.
    """
    cap = channel.capacity() if capacity is None else capacity
    rate = params.rate
    gap = cap - rate
    notes = []
    if gap <= 0:
        return WaveReport(cap, rate, gap, float("nan"), float("nan"), params.rho, float("nan"),
                          0, 0, float("nan"), k, "undecodable", ["rate is not below capacity"])
    upper = min(gap / (2 * rate), 0.5)
    if delta is None:
        delta = 0.5 * upper
    elif not 0 < delta < upper:
        raise ParameterError(f"delta must lie in (0, {upper}), got {delta}")
    h = h_delta(gap, channel, cap)
    rho = params.rho
    if rho == 0:
        notes.append("rho = 0 lies outside the range covered by the wave analysis")
        warnings.warn("rho = 0: wave analysis assumptions do not hold", RuntimeWarning, stacklevel=2)
    elif rho >= h / 2:
        notes.append(f"rho = {rho} is not below h/2 = {h / 2}")
    f_thr = f_M_delta(params.M, delta, k)
    if f_thr >= 1:
        notes.append(f"threshold f_M_delta = {f_thr:.4g} >= 1 does not constrain psi at this M")
    single = rate < (1 - rho) / (2 + delta) * channel.f_out(1.0)
    g = wave_speed_g(params.omega, rho, gap, channel) if params.omega >= 1 else 0
    T = max_iters(params.gamma, g) if g >= 1 else 0
    if single:
        regime = "single-shot"
    elif g >= 1 and 0 < rho < h / 2:
        regime = "wave"
    else:
        regime = "undecodable"
    return WaveReport(cap, rate, gap, delta, h, rho, h / 2, g, T, f_thr, k, regime, notes)


def decoded_frontier(psi_row, threshold):
    """Number of leading blocks (up to the middle) with ``psi <= threshold``."""
    psi_row = np.asarray(psi_row)
    half = -(-psi_row.size // 2)
    ok = psi_row[:half] <= threshold
    return int(half if ok.all() else np.argmin(ok))


def wave_progress(traj, g, threshold):
    """Frontier per step, and whether it advanced by ``>= g`` until the middle.

    Returns
    -------
    frontiers : list of int
        ``frontiers[t]`` is the frontier of ``psi[t]``.
    advances_ok : bool
    meet_step : int or None
        First step at which the frontier reaches the middle.
    """
    half = -(-traj.psi.shape[1] // 2)
    fronts = [decoded_frontier(row, threshold) for row in traj.psi]
    ok = True
    meet = None
    for t, front in enumerate(fronts):
        if front >= half:
            meet = t
            break
        if t + 1 < len(fronts) and fronts[t + 1] < min(front + g, half):
            ok = False
    return fronts, ok and meet is not None, meet


def perp_diagnostics(traj):
    """``sigma_perp`` and ``tau_perp`` per step (``x^t (1 - x^t / x^{t-1})``)."""
    sig = np.asarray(traj.sigma)
    tau = np.asarray(traj.tau)
    sig_perp = sig.copy()
    tau_perp = tau.copy()
    with np.errstate(divide="ignore", invalid="ignore"):
        sig_perp[1:] = sig[1:] * (1 - np.where(sig[:-1] > 0, sig[1:] / sig[:-1], 1.0))
        tau_perp[1:] = tau[1:] * (1 - tau[1:] / tau[:-1])
    return sig_perp, tau_perp


def potential_curvature(channel, grid=None, h=1e-3):
    """Smallest finite-difference second derivative of ``psi_out`` on a grid."""
    grid = np.linspace(0.05, 0.95, 19) if grid is None else np.asarray(grid)
    vals = [(channel.psi_out(s + h) - 2 * channel.psi_out(s) + channel.psi_out(s - h)) / h**2 for s in grid]
    return float(np.min(vals))
