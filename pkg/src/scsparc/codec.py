"""Encoding, the coupled GAMP decoder and section-level error measures.

Messages are arrays of ``L`` integers in ``[0, M)`` (0-based). A signal
vector ``beta`` has length ``N = L M``; section ``l`` is
``beta[l*M:(l+1)*M]``.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import special

from .exceptions import DivergenceError, ParameterError

__all__ = [
    "encode",
    "random_message",
    "transmit",
    "g_in",
    "hard_decision",
    "section_error_rate",
    "IterationState",
    "DecoderRun",
    "gamp_decode",
]


def random_message(params, stream):
    """Uniform message of ``L`` indices in ``[0, M)``."""
    return stream.generator().integers(0, params.M, size=params.L)


def encode(msg, params):
    """One-hot signal vector for a message."""
    msg = np.asarray(msg)
    if msg.shape != (params.L,):
        raise ParameterError(f"message must have {params.L} entries, got shape {msg.shape}")
    if not np.issubdtype(msg.dtype, np.integer) or msg.min() < 0 or msg.max() >= params.M:
        raise ParameterError(f"message indices must be integers in [0, {params.M})")
    beta = np.zeros(params.N)
    beta[np.arange(params.L) * params.M + msg] = 1.0
    return beta


def transmit(A, beta, channel, stream):
    """Codeword ``A beta`` sent through ``channel`` with noise from ``stream``."""
    x = np.asarray(A.matvec(beta), dtype=float)
    return channel.sample(x, stream.generator())


def g_in(r, tau, M=None):
    """Sectionwise posterior mean of a one-hot section seen in Gaussian noise.

    Parameters
    ----------
    r : array
        Either ``(..., M)`` sections, or a flat vector split into sections
        of length ``M``.
    tau : float or array
        Noise variance, broadcast against the section axis.

    Returns
    -------
    array of the same shape as ``r``: ``softmax(r / tau)`` per section.
    """
    tau = np.asarray(tau, dtype=float)
    if np.any(~(tau > 0)):
        raise ParameterError(f"tau must be positive, got {tau}")
    r = np.asarray(r)
    if M is not None:
        shaped = r.reshape(-1, M)
        return special.softmax(shaped / tau[..., None] if tau.ndim else shaped / tau, axis=-1).reshape(r.shape)
    return special.softmax(r / tau[..., None] if tau.ndim else r / tau, axis=-1)


def hard_decision(beta, M):
    """Index of the largest entry per section (ties go to the lowest index)."""
    return np.argmax(np.asarray(beta).reshape(-1, M), axis=1)


def section_error_rate(decoded, truth, seeds=None, params=None):
    """Fraction of wrong sections, over all sections and over unseeded ones.

    Returns
    -------
    dict with keys ``overall`` and ``unseeded``.
    """
    decoded = np.asarray(decoded)
    truth = np.asarray(truth)
    if decoded.shape != truth.shape:
        raise ParameterError("decoded and true messages differ in length")
    wrong = decoded != truth
    overall = float(wrong.mean()) if wrong.size else 0.0
    if seeds is None or params is None or len(seeds) == 0:
        return {"overall": overall, "unseeded": overall}
    per_block = params.L // params.gamma
    section_block = np.arange(truth.size) // per_block
    free = ~seeds.mask()[section_block]
    unseeded = float(wrong[free].mean()) if free.any() else 0.0
    return {"overall": overall, "unseeded": unseeded}


@dataclass
class IterationState:
    p: np.ndarray
    s: np.ndarray
    r: np.ndarray
    beta: np.ndarray


@dataclass
class DecoderRun:
    """Outcome of :func:`gamp_decode`.

    ``mse[t]`` is ``||beta^t - beta||^2 / L`` (when the truth was supplied)
    and pairs with the state-evolution prediction after ``t + 1`` steps.
    ``sigma[t]`` and ``tau[t]`` are the per-block parameters used at
    iteration ``t``.
    """

    beta: np.ndarray
    decoded: np.ndarray
    iterations: int
    sigma: list = field(default_factory=list)
    tau: list = field(default_factory=list)
    mse: list = field(default_factory=list)
    history: Optional[list] = None
    stopped_early: bool = False


def _posterior_psi(beta, params):
    """Per-block ``1 - mean_sections ||beta_sec||^2`` (decoder's own MSE estimate)."""
    sq = (np.asarray(beta, dtype=float).reshape(params.gamma, -1) ** 2).sum(axis=1)
    return np.clip(1.0 - sq / params.sections_per_block, 0.0, 1.0)


def gamp_decode(A, y, channel, params, base, seeds, beta_seeded, se, iters, truth=None,
                stop_tol=1e-6, mode="se", keep_history=False, callback=None):
    """Coupled GAMP decoder with the sectionwise softmax denoiser.

    Parameters
    ----------
    A : DesignMatrix
    y : array of length n
        Channel output.
    channel : Channel
    params : SparcParams
    base : BaseMatrix
    seeds : SeedSet
    beta_seeded : array of length N
        True signal on seeded blocks; other entries are ignored.
    se : SeTrajectory
        Supplies ``sigma[t]`` and ``tau[t]``; the last row is reused if the
        decoder runs past the stored trajectory.
    iters : int
        Maximum number of iterations.
    truth : array of length N, optional
        Enables the per-iteration MSE record.
    stop_tol : float
        Stop once the average largest entry per section exceeds
        ``1 - stop_tol``.
    mode : {"se", "online"}
        ``online`` re-estimates ``sigma`` and ``tau`` from the decoder's own
        posterior variances instead of reading them from ``se``.
    keep_history : bool
        Store every ``(p, s, r, beta)``.
    callback : callable, optional
        Called as ``callback(t, beta)`` after every iteration.
    """
    if iters < 0:
        raise ParameterError(f"iteration count must be non-negative, got {iters}")
    if mode not in ("se", "online"):
        raise ParameterError(f"unknown decoder mode {mode!r}")
    y = np.asarray(y, dtype=float)
    if y.shape != (params.n,):
        raise ParameterError(f"y must have length {params.n}, got shape {y.shape}")
    M = params.M
    gamma = params.gamma
    width = params.cols_per_block
    rows = params.rows_per_block
    seeded = seeds.mask()
    free_blocks = [c for c in range(gamma) if not seeded[c]]

    beta = np.zeros(params.N)
    for c in seeds.blocks:
        beta[c * width:(c + 1) * width] = beta_seeded[c * width:(c + 1) * width]
    seed_part = np.zeros(params.n)
    for c in seeds.blocks:
        seed_part += A.block_matvec(c, beta[c * width:(c + 1) * width])
    free_part = np.zeros(params.n)
    s = np.zeros(params.n)
    sections_per_block = params.sections_per_block
    run = DecoderRun(beta=beta.copy(), decoded=hard_decision(beta, M), iterations=0,
                     history=[] if keep_history else None)
    log_m = np.log(M)

    for t in range(iters):
        if mode == "se":
            row = min(t, len(se.sigma) - 1)
            sigma = np.asarray(se.sigma[row], dtype=float)
            tau = np.asarray(se.tau[row], dtype=float)
        else:
            psi_hat = _posterior_psi(beta, params)
            psi_hat[seeded] = 0.0
            sigma = np.maximum(base.W @ psi_hat / gamma, 1e-12)
            info = np.asarray(channel.f_out(np.minimum(sigma, 1.0)), dtype=float)
            tau = (params.rate / log_m) / (base.W.T @ info / gamma)
        # rows fed only by seeded blocks have sigma = 0; keep g_out defined there
        sigma_rows = np.repeat(np.maximum(sigma, 1e-12), rows)
        p = seed_part + free_part - sigma_rows * s
        s = np.asarray(channel.g_out(p, y, sigma_rows), dtype=float)
        if not np.all(np.isfinite(s)):
            bad = int(np.flatnonzero(~np.isfinite(s))[0]) // rows
            raise DivergenceError(f"non-finite output estimate at iteration {t}", iteration=t, block=bad)
        r_full = beta.copy() if keep_history else None
        new_free = np.zeros(params.n)
        for c in free_blocks:
            cols = slice(c * width, (c + 1) * width)
            r_c = beta[cols] + tau[c] * A.block_rmatvec(c, s)
            if not np.all(np.isfinite(r_c)):
                raise DivergenceError(f"non-finite input estimate at iteration {t}", iteration=t, block=c)
            if keep_history:
                r_full[cols] = r_c
            beta[cols] = g_in(r_c.reshape(sections_per_block, M), tau[c]).reshape(-1)
            new_free += A.block_matvec(c, beta[cols])
        free_part = new_free
        run.iterations = t + 1
        run.sigma.append(sigma)
        run.tau.append(tau)
        if truth is not None:
            run.mse.append(float(np.sum((beta - truth) ** 2) / params.L))
        if keep_history:
            run.history.append(IterationState(p=p, s=s.copy(), r=r_full, beta=beta.copy()))
        if callback is not None:
            callback(t, beta)
        if np.mean(beta.reshape(-1, M).max(axis=1)) > 1.0 - stop_tol:
            run.stopped_early = t + 1 < iters
            break

    run.beta = beta
    run.decoded = hard_decision(beta, M)
    return run
