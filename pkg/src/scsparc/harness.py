"""Experiment orchestration: configs, parallel trials, aggregation and files.

A trial is fully determined by ``(config, master seed, sweep index, trial
id)``: its stream is ``RngStream(master_seed).child(sweep_index, trial_id)``
with sub-streams for the design matrix, the message and the channel noise.
Trials run in a thread pool whose size comes from ``SC_SPARC_THREADS``;
BLAS is pinned to one thread so every product is bit-reproducible whatever
the pool size, and records are reduced in trial-id order.
"""

import csv
import io
import json
import math
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import stats
from threadpoolctl import threadpool_limits

from . import __version__
from .channels import channel_from_config
from .codec import encode, gamp_decode, random_message, section_error_rate
from .design import DEFAULT_MEMORY_CAP, DesignMatrix, SparcParams, build_base_matrix, seed_sections
from .exceptions import ExperimentError, NumericalError, ParameterError
from .numerics import RngStream
from .state_evolution import SectionMmse, regime_classify, run_se

__all__ = [
    "ExperimentConfig",
    "TrialRecord",
    "SweepPoint",
    "ExperimentReport",
    "resolve_code",
    "run_trial",
    "run_experiment",
    "compare_se",
    "wilson_interval",
    "worker_count",
    "write_outputs",
    "DESK_PRESET",
]

SWEEP_AXES = ("n", "rate_ratio", "M", "omega")

DESK_PRESET = {
    "channel": {"kind": "awgn", "param": 1.0},
    "code": {"L": 1024, "M": 64, "gamma": 32, "omega": 3, "rate_ratio": 0.75},
    "trials": 50,
    "master_seed": 2024,
}


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce an experiment.

    ``code`` holds ``L, M, gamma, omega`` and either ``rate`` (nats) or
    ``rate_ratio`` (fraction of capacity); ``rho`` defaults to a quarter of
    the largest value the wave analysis allows. A sweep over ``n`` takes
    integer multiples of the base code length (``L`` is scaled).
    """

    channel: dict
    code: dict
    trials: int = 1
    master_seed: int = 0
    sweep_axis: Optional[str] = None
    sweep_values: list = field(default_factory=list)
    output_dir: Optional[str] = None
    decoder: dict = field(default_factory=dict)
    error_threshold: float = 0.01
    n_mc: int = 100_000

    def __post_init__(self):
        if isinstance(self.trials, bool) or not isinstance(self.trials, int) or self.trials < 1:
            raise ParameterError(f"trial count must be a positive integer, got {self.trials!r}")
        if self.sweep_axis is not None:
            if self.sweep_axis not in SWEEP_AXES:
                raise ParameterError(f"sweep axis must be one of {SWEEP_AXES}, got {self.sweep_axis!r}")
            vals = list(self.sweep_values)
            if not vals:
                raise ParameterError("sweep value list is empty")
            if any(b <= a for a, b in zip(vals, vals[1:])):
                raise ParameterError("sweep values must be strictly increasing")
        if not 0 < self.error_threshold < 1:
            raise ParameterError("error threshold must lie in (0, 1)")
        channel_from_config(self.channel)

    @classmethod
    def from_dict(cls, cfg):
        cfg = dict(cfg)
        sweep = cfg.pop("sweep", None) or {}
        known = {k: cfg[k] for k in ("channel", "code", "trials", "master_seed", "output_dir",
                                     "decoder", "error_threshold", "n_mc") if k in cfg}
        unknown = set(cfg) - set(known)
        if unknown:
            raise ParameterError(f"unknown config keys {sorted(unknown)}")
        if "channel" not in known or "code" not in known:
            raise ParameterError("config needs 'channel' and 'code'")
        return cls(sweep_axis=sweep.get("axis"), sweep_values=list(sweep.get("values", [])), **known)

    def to_dict(self):
        d = asdict(self)
        axis, values = d.pop("sweep_axis"), d.pop("sweep_values")
        d["sweep"] = {"axis": axis, "values": values} if axis else None
        d.pop("output_dir")
        return d

    def points(self):
        """Resolved code dict per sweep point."""
        if self.sweep_axis is None:
            return [(None, dict(self.code))]
        out = []
        for v in self.sweep_values:
            code = dict(self.code)
            if self.sweep_axis == "n":
                if int(v) != v or v < 1:
                    raise ParameterError("sweep over n takes positive integer multiples")
                code["L"] = int(self.code["L"]) * int(v)
            elif self.sweep_axis == "rate_ratio":
                code.pop("rate", None)
                code["rate_ratio"] = float(v)
            else:
                code[self.sweep_axis] = int(v)
            out.append((v, code))
        return out


def resolve_code(code, channel, capacity=None):
    """Turn a code dict into :class:`SparcParams` (filling in rate and rho)."""
    cap = channel.capacity() if capacity is None else capacity
    if "rate" in code:
        rate = float(code["rate"])
    elif "rate_ratio" in code:
        rate = float(code["rate_ratio"]) * cap
    else:
        raise ParameterError("code needs 'rate' or 'rate_ratio'")
    cfg = {k: code[k] for k in ("L", "M", "gamma", "omega") if k in code}
    rho = code.get("rho")
    if rho is None:
        probe = SparcParams.from_dict({**cfg, "rho": 0.0, "rate": rate})
        if rate >= cap:
            rho = 0.0
        else:
            # quarter of the largest admissible value
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                rho = 0.25 * regime_classify(probe, channel, capacity=cap).rho_max
    return SparcParams.from_dict({**cfg, "rho": float(rho), "rate": rate})


@dataclass
class TrialRecord:
    trial_id: int
    stream_id: int
    sweep_value: object
    mse: list
    se_mse: list
    ser_overall: float
    ser_unseeded: float
    iterations: int
    diverged: bool = False
    error: str = ""
    wall_time: float = 0.0


@dataclass
class SweepPoint:
    value: object
    params: SparcParams
    wave: dict
    se: object
    records: list
    error_prob: float
    error_ci: tuple
    n_errors: int
    n_valid: int


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    points: list

    def summary(self):
        return {
            "version": __version__,
            "config": self.config.to_dict(),
            "points": [
                {
                    "sweep_value": p.value,
                    "params": p.params.to_dict(),
                    "wave": p.wave,
                    "trials": len(p.records),
                    "valid_trials": p.n_valid,
                    "diverged": sum(r.diverged for r in p.records),
                    "error_events": p.n_errors,
                    "error_prob": p.error_prob,
                    "error_prob_ci": list(p.error_ci),
                    "mean_ser_unseeded": _mean([r.ser_unseeded for r in p.records if not r.diverged]),
                    "se_final_mse": float(p.se.mean_psi()[-1]),
                }
                for p in self.points
            ],
        }


def _mean(vals):
    return float(np.mean(vals)) if vals else float("nan")


def wilson_interval(k, n, confidence=0.95):
    """Wilson score interval for ``k`` successes out of ``n``."""
    if n == 0:
        return (0.0, 1.0)
    ci = stats.binomtest(int(k), int(n)).proportion_ci(confidence_level=confidence, method="wilson")
    return (float(ci.low), float(ci.high))


def worker_count(per_trial_bytes=0, memory_cap=None):
    """Pool size from ``SC_SPARC_THREADS``, reduced so cached matrices fit in memory."""
    raw = os.environ.get("SC_SPARC_THREADS", "1")
    try:
        want = int(raw)
    except ValueError:
        raise ParameterError(f"SC_SPARC_THREADS must be an integer, got {raw!r}") from None
    if want < 1:
        raise ParameterError("SC_SPARC_THREADS must be at least 1")
    cap = DEFAULT_MEMORY_CAP if memory_cap is None else memory_cap
    if per_trial_bytes > 0:
        want = max(1, min(want, cap // per_trial_bytes))
    return want


def run_trial(params, base, channel, se, stream, iters, decoder=None, error_threshold=0.01, sweep_value=None,
              trial_id=0):
    """Encode a random message, send it, decode it and score the result."""
    decoder = decoder or {}
    seeds = seed_sections(params.gamma, params.omega)
    seeded = seeds.mask()
    free = [c for c in range(params.gamma) if not seeded[c]]
    start = time.perf_counter()
    A = DesignMatrix(params, base, stream.child(0), cached_blocks=free, dtype=decoder.get("dtype", "auto"))
    msg = random_message(params, stream.child(1))
    beta = encode(msg, params)
    y = channel.sample(np.asarray(A.matvec(beta), dtype=float), stream.child(2).generator())
    se_mse = [float(v) for v in se.mean_psi()[1:iters + 1]]
    # state evolution stops once every psi is zero and stays there
    se_mse += se_mse[-1:] * (iters - len(se_mse))
    try:
        run = gamp_decode(A, y, channel, params, base, seeds, beta, se, iters, truth=beta,
                          stop_tol=decoder.get("stop_tol", 1e-6), mode=decoder.get("mode", "se"))
    except NumericalError as exc:
        return TrialRecord(trial_id, stream.stream_id, sweep_value, [], se_mse, float("nan"), float("nan"),
                           0, diverged=True, error=str(exc), wall_time=time.perf_counter() - start)
    mse = list(run.mse)
    if mse and len(mse) < iters:
        # an early stop leaves the estimate (numerically) fixed
        mse += [mse[-1]] * (iters - len(mse))
    ser = section_error_rate(run.decoded, msg, seeds, params)
    return TrialRecord(trial_id, stream.stream_id, sweep_value, mse, se_mse, ser["overall"], ser["unseeded"],
                       run.iterations, wall_time=time.perf_counter() - start)


def _trial_bytes(params):
    seeded = seed_sections(params.gamma, params.omega).mask()
    free = int((~seeded).sum())
    return free * params.cols_per_block * params.n * 4


def run_experiment(config, progress=None):
    """Run SE once per sweep point, then all trials; aggregate error probabilities.

    Raises :class:`ExperimentError` when more than half of the trials of a
    sweep point diverge.
    """
    channel = channel_from_config(config.channel)
    cap = channel.capacity()
    master = RngStream(config.master_seed)
    points = []
    with threadpool_limits(limits=1):
        for s_idx, (value, code) in enumerate(config.points()):
            params = resolve_code(code, channel, cap)
            base = build_base_matrix(params.gamma, params.omega, params.rho)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                wave = regime_classify(params, channel, capacity=cap)
            iters = int(config.decoder.get("iters") or (wave.T if wave.T else 0) or 25)
            mmse = SectionMmse(params.M, config.n_mc, master.child(s_idx, 2**32))
            se = run_se(params, base, channel, iters, stop_tol=0.0, mmse=mmse)
            workers = worker_count(_trial_bytes(params))

            def one(trial_id, params=params, base=base, se=se, s_idx=s_idx, value=value, iters=iters):
                rec = run_trial(params, base, channel, se, master.child(s_idx, trial_id), iters,
                                decoder=config.decoder, error_threshold=config.error_threshold,
                                sweep_value=value, trial_id=trial_id)
                if progress:
                    progress(s_idx, trial_id)
                return rec

            with ThreadPoolExecutor(max_workers=workers) as pool:
                records = sorted(pool.map(one, range(config.trials)), key=lambda r: r.trial_id)
            valid = [r for r in records if not r.diverged]
            if len(records) - len(valid) > 0.5 * len(records):
                raise ExperimentError(
                    f"{len(records) - len(valid)} of {len(records)} trials diverged at sweep point {value}"
                )
            k = sum(r.ser_unseeded > config.error_threshold for r in valid)
            points.append(SweepPoint(value, params, wave.to_dict(), se, records,
                                     k / len(valid) if valid else float("nan"),
                                     wilson_interval(k, len(valid)), k, len(valid)))
    report = ExperimentReport(config, points)
    if config.output_dir:
        write_outputs(report, config.output_dir)
    return report


def compare_se(report):
    """Per sweep point and iteration: deviation of the empirical MSE from SE.

    Returns a list of dicts with ``max_dev`` and ``mean_dev`` (over trials of
    ``|mse - se|``) and ``avg_dev`` (``|mean mse - se|``).
    """
    rows = []
    for p in report.points:
        valid = [r for r in p.records if not r.diverged and r.mse]
        if not valid:
            continue
        emp = np.array([r.mse for r in valid])
        se = np.asarray(valid[0].se_mse)[:emp.shape[1]]
        dev = np.abs(emp - se)
        for t in range(emp.shape[1]):
            rows.append({
                "sweep_value": p.value, "t": t, "se_mse": float(se[t]),
                "mean_mse": float(emp[:, t].mean()),
                "max_dev": float(dev[:, t].max()), "mean_dev": float(dev[:, t].mean()),
                "avg_dev": float(abs(emp[:, t].mean() - se[t])),
            })
    return rows


# ---------------------------------------------------------------------------
# files


def _fmt(x):
    if isinstance(x, float):
        return repr(x) if math.isfinite(x) else str(x)
    return str(x)


def _header(config):
    return "# " + json.dumps({"version": __version__, "config": config.to_dict()}, sort_keys=True) + "\n"


def _write_csv(path, config, header, rows):
    buf = io.StringIO()
    buf.write(_header(config))
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(x) for x in row])
    Path(path).write_text(buf.getvalue())


def write_outputs(report, output_dir):
    """``results.csv``, ``trajectories.csv``, ``se_trajectory.csv``, ``summary.json``.

    Wall-clock times are left out so reruns are byte-identical.
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = report.config
    results, trajs, se_rows = [], [], []
    for p in report.points:
        for r in p.records:
            results.append([p.value, r.trial_id, r.stream_id, r.iterations, r.ser_overall, r.ser_unseeded,
                            int(r.ser_unseeded > cfg.error_threshold) if not r.diverged else "",
                            int(r.diverged), r.error])
            for t, (m, s) in enumerate(zip(r.mse, r.se_mse)):
                trajs.append([p.value, r.trial_id, t, m, s])
        se = p.se
        for t in range(se.iterations):
            for c in range(se.psi.shape[1]):
                se_rows.append([p.value, t, c, se.psi[t, c], se.tau[t, c], c, se.sigma[t, c], se.phi[t, c]])
    _write_csv(out / "results.csv", cfg,
               ["sweep_value", "trial", "stream_id", "iterations", "ser_overall", "ser_unseeded",
                "error_event", "diverged", "error"], results)
    _write_csv(out / "trajectories.csv", cfg, ["sweep_value", "trial", "t", "mse", "se_mse"], trajs)
    _write_csv(out / "se_trajectory.csv", cfg, ["sweep_value", "t", "c", "psi", "tau", "r", "sigma", "phi"],
               se_rows)
    (out / "summary.json").write_text(json.dumps(report.summary(), indent=2, sort_keys=True) + "\n")
