"""Scikit-learn style wrappers around the codec and the linear-model decoder."""

import warnings

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .channels import make_channel
from .codec import encode, gamp_decode
from .design import DesignMatrix, build_base_matrix, seed_sections
from .exceptions import ParameterError
from .glm import GlmParams, gamp_decode_glm, prior_from_config, run_se_glm
from .harness import resolve_code
from .numerics import RngStream
from .state_evolution import SectionMmse, regime_classify, run_se

__all__ = ["SparcCodec", "CoupledGampRegressor", "DenseBlockOperator"]


class SparcCodec(BaseEstimator):
    """Spatially coupled SPARC as an encoder/decoder pair.

    ``fit`` resolves the code, runs state evolution and draws the design
    matrix. Messages passed to :meth:`transform` hold the payload sections
    only (``L`` minus the seed sections); the seed sections carry a fixed
    pattern drawn at fit time that the decoder knows.

    Parameters
    ----------
    L, M, gamma, omega : int
        Sections, section size, blocks, coupling half-width.
    rate_ratio : float
        Rate as a fraction of channel capacity.
    rho : float or None
        Off-band variance share; None picks a quarter of the admissible maximum.
    channel, channel_param : str, float
        Channel kind (``awgn``, ``bec``, ``bsc``) and its parameter.
    iters : int or None
        Decoder iterations; None uses the wave-analysis budget.
    n_mc : int
        Monte Carlo samples for the section MMSE.
    random_state : int
        Master seed.
    """

    def __init__(self, L=256, M=32, gamma=16, omega=1, rate_ratio=0.8, rho=None, channel="awgn",
                 channel_param=0.1, iters=None, n_mc=20_000, random_state=0):
        self.L = L
        self.M = M
        self.gamma = gamma
        self.omega = omega
        self.rate_ratio = rate_ratio
        self.rho = rho
        self.channel = channel
        self.channel_param = channel_param
        self.iters = iters
        self.n_mc = n_mc
        self.random_state = random_state

    def fit(self, X=None, y=None):
        ch = make_channel(self.channel, self.channel_param)
        code = {"L": self.L, "M": self.M, "gamma": self.gamma, "omega": self.omega,
                "rate_ratio": self.rate_ratio}
        if self.rho is not None:
            code["rho"] = self.rho
        params = resolve_code(code, ch)
        base = build_base_matrix(params.gamma, params.omega, params.rho)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            wave = regime_classify(params, ch)
        stream = RngStream(int(self.random_state))
        iters = int(self.iters or wave.T or 25)
        seeds = seed_sections(params.gamma, params.omega)
        seeded = seeds.mask()
        self.channel_ = ch
        self.params_ = params
        self.base_ = base
        self.wave_ = wave
        self.seeds_ = seeds
        self.se_ = run_se(params, base, ch, iters, stop_tol=0.0,
                          mmse=SectionMmse(params.M, self.n_mc, stream.child(2**32)))
        self.design_ = DesignMatrix(params, base, stream.child(0))
        per = params.sections_per_block
        section_seeded = np.repeat(seeded, per)
        self.payload_sections_ = np.flatnonzero(~section_seeded)
        self.seed_message_ = stream.child(1).generator().integers(0, params.M, size=params.L)
        self.n_payload_ = int(self.payload_sections_.size)
        return self

    def _full_message(self, payload):
        msg = self.seed_message_.copy()
        msg[self.payload_sections_] = payload
        return msg

    def transform(self, X):
        """Codewords (one row each) for payload messages ``X`` of shape ``(m, n_payload_)``."""
        check_is_fitted(self, "design_")
        X = check_array(X, dtype=np.int64)
        if X.shape[1] != self.n_payload_:
            raise ParameterError(f"messages need {self.n_payload_} payload sections, got {X.shape[1]}")
        return np.stack([np.asarray(self.design_.matvec(encode(self._full_message(row), self.params_)),
                                    dtype=float) for row in X])

    def predict(self, Y):
        """Decoded payload messages for channel outputs ``Y`` of shape ``(m, n)``."""
        check_is_fitted(self, "design_")
        Y = check_array(Y, dtype=np.float64)
        known = encode(self.seed_message_, self.params_)
        out = []
        for y in Y:
            run = gamp_decode(self.design_, y, self.channel_, self.params_, self.base_, self.seeds_, known,
                              self.se_, self.se_.iterations)
            out.append(run.decoded[self.payload_sections_])
        return np.array(out)

    def score(self, X, Y):
        """Fraction of payload sections decoded correctly."""
        return float(np.mean(self.predict(Y) == check_array(X, dtype=np.int64)))


class DenseBlockOperator:
    """Adapter exposing a dense ``(n, N)`` array through the block product interface."""

    def __init__(self, X, gamma):
        self.X = np.asarray(X, dtype=float)
        self.n, self.N = self.X.shape
        if self.n % gamma or self.N % gamma:
            raise ParameterError(f"gamma={gamma} must divide both dimensions {self.X.shape}")
        self.gamma = gamma
        self.cols_per_block = self.N // gamma

    def _cols(self, c):
        return slice(c * self.cols_per_block, (c + 1) * self.cols_per_block)

    def block_matvec(self, c, v_c):
        return self.X[:, self._cols(c)] @ v_c

    def block_rmatvec(self, c, u):
        return self.X[:, self._cols(c)].T @ u

    def matvec(self, v):
        return self.X @ v

    def rmatvec(self, u):
        return self.X.T @ u


class CoupledGampRegressor(RegressorMixin, BaseEstimator):
    """Coupled GAMP estimate of a separable-prior signal from ``y = channel(X coef)``.

    ``X`` must carry the coupled block variance profile ``W_rc / (N/Γ)``
    for the configured ``gamma``, ``omega`` and ``rho``. The first and last
    ``4 omega`` column blocks of the signal are passed to ``fit`` as
    ``seed_coef`` (a full-length vector; other entries are ignored).
    """

    def __init__(self, prior="bg", prior_p=0.1, prior_var=1.0, prior_mean=0.0, gamma=16, omega=1, rho=0.0,
                 channel="awgn", channel_param=0.05, iters=30):
        self.prior = prior
        self.prior_p = prior_p
        self.prior_var = prior_var
        self.prior_mean = prior_mean
        self.gamma = gamma
        self.omega = omega
        self.rho = rho
        self.channel = channel
        self.channel_param = channel_param
        self.iters = iters

    def _prior(self):
        return prior_from_config({"kind": self.prior, "p": self.prior_p, "var": self.prior_var,
                                  "mean": self.prior_mean})

    def fit(self, X, y, seed_coef=None):
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y, dtype=float)
        n, N = X.shape
        if y.shape != (n,):
            raise ParameterError(f"y must have length {n}")
        prior = self._prior()
        ch = make_channel(self.channel, self.channel_param)
        params = GlmParams(N, n / N, self.gamma, self.omega, self.rho)
        if params.n != n:
            raise ParameterError(f"gamma={self.gamma} must divide the number of rows {n}")
        base = build_base_matrix(self.gamma, self.omega, self.rho)
        se = run_se_glm(params, base, ch, prior, self.iters)
        seeds = np.full(N, prior.mean) if seed_coef is None else np.asarray(seed_coef, dtype=float)
        run = gamp_decode_glm(DenseBlockOperator(X, self.gamma), y, ch, params, base, prior, seeds, se,
                              se.iterations)
        self.coef_ = run.beta
        self.se_ = se
        self.n_features_in_ = N
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        return X @ self.coef_
