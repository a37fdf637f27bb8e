"""Command-line interface: ``scsparc <command> [options]``.

Exit status is 0 on success, 2 on invalid parameters and 3 when an
experiment or numerical routine fails.
"""

import argparse
import csv
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .channels import channel_from_config, make_channel
from .codec import encode, gamp_decode, random_message, section_error_rate, hard_decision
from .design import DesignMatrix, build_base_matrix, seed_sections
from .exceptions import ParameterError, ScSparcError
from .glm import GlmParams, prior_from_config, run_glm_trial, run_se_glm
from .harness import DESK_PRESET, ExperimentConfig, compare_se, resolve_code, run_experiment
from .numerics import RngStream
from .state_evolution import SectionMmse, regime_classify, run_se

__all__ = ["main", "build_parser"]

LN2 = math.log(2.0)


def _load_config(path):
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParameterError(f"cannot read config {path}: {exc}") from None


def _channel(args, cfg):
    if args.channel is not None:
        param = args.channel_param
        if param is None:
            raise ParameterError("--channel needs --channel-param")
        return make_channel(args.channel, param)
    return channel_from_config(cfg.get("channel", DESK_PRESET["channel"]))


def _code(args, cfg):
    code = dict(cfg.get("code", DESK_PRESET["code"]))
    if args.params:
        try:
            code.update(json.loads(args.params))
        except json.JSONDecodeError as exc:
            raise ParameterError(f"--params is not valid JSON: {exc}") from None
    for key in ("L", "M", "gamma", "omega", "rho", "rate", "rate_ratio"):
        val = getattr(args, key, None)
        if val is not None:
            code[key] = val
            if key == "rate":
                code.pop("rate_ratio", None)
            if key == "rate_ratio":
                code.pop("rate", None)
    return code


def _add_channel_flags(p):
    p.add_argument("--channel", choices=["awgn", "bec", "bsc"], help="channel kind")
    p.add_argument("--channel-param", type=float, help="noise variance / erasure / flip probability")
    p.add_argument("--config", help="JSON config file")


def _add_code_flags(p):
    p.add_argument("--params", help="code parameters as JSON, e.g. '{\"L\": 256, \"M\": 32}'")
    p.add_argument("--L", type=int)
    p.add_argument("--M", type=int)
    p.add_argument("--gamma", type=int)
    p.add_argument("--omega", type=int)
    p.add_argument("--rho", type=float)
    p.add_argument("--rate", type=float, help="rate in nats per channel use")
    p.add_argument("--rate-ratio", dest="rate_ratio", type=float, help="rate as a fraction of capacity")


def _emit(obj, out=None):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


# ---------------------------------------------------------------------------
# commands


def cmd_capacity(args):
    cfg = _load_config(args.config)
    ch = _channel(args, cfg)
    cap = ch.capacity()
    out = {"channel": ch.config(), "capacity_nats": cap, "capacity_bits": cap / LN2}
    if ch.alphabet.discrete is not None:
        out["capacity_entropy_nats"] = ch.capacity_entropy()
    _emit(out)


def _se_for(args, cfg):
    ch = _channel(args, cfg)
    params = resolve_code(_code(args, cfg), ch)
    base = build_base_matrix(params.gamma, params.omega, params.rho)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        wave = regime_classify(params, ch, k=getattr(args, "k", 1.0))
    return ch, params, base, wave


def cmd_se(args):
    cfg = _load_config(args.config)
    ch, params, base, wave = _se_for(args, cfg)
    iters = args.iters or wave.T or 25
    mmse = SectionMmse(params.M, args.n_mc, RngStream(args.seed).child(2**32))
    traj = run_se(params, base, ch, iters, stop_tol=0.0, mmse=mmse)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "c", "psi", "tau", "r", "sigma", "phi"])
        for t in range(traj.iterations):
            for c in range(params.gamma):
                w.writerow([t, c, repr(float(traj.psi[t, c])), repr(float(traj.tau[t, c])), c,
                            repr(float(traj.sigma[t, c])), repr(float(traj.phi[t, c]))])
    finally:
        if args.out:
            fh.close()


def cmd_wave(args):
    cfg = _load_config(args.config)
    _, params, _, wave = _se_for(args, cfg)
    out = wave.to_dict()
    out["params"] = params.to_dict()
    _emit(out)


def cmd_design(args):
    if args.gamma is None or args.omega is None:
        raise ParameterError("design needs --gamma and --omega")
    base = build_base_matrix(args.gamma, args.omega, args.rho or 0.0)
    header = {"gamma": args.gamma, "omega": args.omega, "rho": base.rho,
              "row_sums": [float(x) for x in base.row_sums()]}
    print(json.dumps(header))
    w = csv.writer(sys.stdout, lineterminator="\n")
    for row in base.W:
        w.writerow([repr(float(x)) for x in row])


def cmd_decode(args):
    cfg = _load_config(args.config)
    ch, params, base, wave = _se_for(args, cfg)
    iters = args.iters or wave.T or 25
    stream = RngStream(args.seed)
    seeds = seed_sections(params.gamma, params.omega)
    free = [c for c in range(params.gamma) if c not in seeds]
    with threadpool_limits(limits=1):
        mmse = SectionMmse(params.M, args.n_mc, stream.child(2**32))
        traj = run_se(params, base, ch, iters, stop_tol=0.0, mmse=mmse)
        A = DesignMatrix(params, base, stream.child(0), cached_blocks=free)
        msg = random_message(params, stream.child(1))
        beta = encode(msg, params)
        y = ch.sample(np.asarray(A.matvec(beta), dtype=float), stream.child(2).generator())
        se_mse = traj.mean_psi()

        def report(t, est):
            ser = section_error_rate(hard_decision(est, params.M), msg, seeds, params)
            rec = {"t": t, "mse_empirical": float(np.sum((est - beta) ** 2) / params.L),
                   "mse_se": float(se_mse[min(t + 1, len(se_mse) - 1)]), "ser_running": ser["overall"],
                   "ser_unseeded": ser["unseeded"]}
            print(json.dumps(rec, sort_keys=True))

        gamp_decode(A, y, ch, params, base, seeds, beta, traj, iters, mode=args.mode, callback=report,
                    stop_tol=args.stop_tol)


def cmd_simulate(args):
    cfg = _load_config(args.config) or dict(DESK_PRESET)
    if args.channel is not None:
        cfg["channel"] = _channel(args, cfg).config()
    cfg["code"] = _code(args, cfg)
    for key, attr in (("trials", "trials"), ("master_seed", "seed"), ("output_dir", "out_dir"),
                      ("error_threshold", "error_threshold"), ("n_mc", "n_mc")):
        val = getattr(args, attr)
        if val is not None:
            cfg[key] = val
    if args.sweep_axis:
        cfg["sweep"] = {"axis": args.sweep_axis, "values": [float(v) if args.sweep_axis == "rate_ratio" else int(v)
                                                            for v in args.sweep_values.split(",")]}
    if args.iters:
        cfg.setdefault("decoder", {})["iters"] = args.iters
    config = ExperimentConfig.from_dict(cfg)
    report = run_experiment(config)
    summary = report.summary()
    summary["se_comparison"] = compare_se(report)
    _emit(summary, None if not args.quiet else (Path(config.output_dir or ".") / "summary_full.json"))


def cmd_glm(args):
    cfg = _load_config(args.config)
    ch = _channel(args, cfg) if (args.channel or "channel" in cfg) else make_channel("awgn", 0.05)
    prior = prior_from_config({"kind": args.prior, "p": args.prior_p, "var": args.prior_var,
                               "mean": args.prior_mean})
    params = GlmParams(args.N, args.alpha, args.gamma or 16, args.omega if args.omega is not None else 1,
                       args.rho or 0.0)
    base = build_base_matrix(params.gamma, params.omega, params.rho)
    traj = run_se_glm(params, base, ch, prior, args.iters)
    iters = traj.iterations
    master = RngStream(args.seed)
    mses = []
    with threadpool_limits(limits=1):
        for trial in range(args.trials):
            mses.append(run_glm_trial(params, base, ch, prior, traj, master.child(trial), iters).mse)
    emp = np.array(mses).mean(axis=0)
    se = traj.mean_psi()[1:]
    for t in range(iters):
        print(json.dumps({"t": t, "mse_empirical": float(emp[t]), "mse_se": float(se[t])}, sort_keys=True))


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="scsparc", description="Spatially coupled SPARC toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("capacity", help="channel capacity in nats and bits")
    _add_channel_flags(p)
    p.set_defaults(func=cmd_capacity)

    p = sub.add_parser("se", help="state-evolution trajectory as CSV")
    _add_channel_flags(p)
    _add_code_flags(p)
    p.add_argument("--iters", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-mc", dest="n_mc", type=int, default=100_000)
    p.add_argument("--out")
    p.set_defaults(func=cmd_se)

    p = sub.add_parser("wave", help="decoding-wave report as JSON")
    _add_channel_flags(p)
    _add_code_flags(p)
    p.add_argument("--k", type=float, default=1.0, help="exponent constant of the decoded threshold")
    p.set_defaults(func=cmd_wave)

    p = sub.add_parser("design", help="base matrix as CSV with a JSON header")
    p.add_argument("--gamma", type=int)
    p.add_argument("--omega", type=int)
    p.add_argument("--rho", type=float, default=0.0)
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("decode", help="decode one codeword, one JSON record per iteration")
    _add_channel_flags(p)
    _add_code_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iters", type=int)
    p.add_argument("--n-mc", dest="n_mc", type=int, default=100_000)
    p.add_argument("--mode", choices=["se", "online"], default="se")
    p.add_argument("--stop-tol", dest="stop_tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("simulate", help="Monte Carlo experiment with file outputs")
    _add_channel_flags(p)
    _add_code_flags(p)
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--iters", type=int)
    p.add_argument("--n-mc", dest="n_mc", type=int)
    p.add_argument("--error-threshold", dest="error_threshold", type=float)
    p.add_argument("--sweep-axis", dest="sweep_axis", choices=["n", "rate_ratio", "M", "omega"])
    p.add_argument("--sweep-values", dest="sweep_values", help="comma-separated, strictly increasing")
    p.add_argument("--quiet", action="store_true", help="write the summary to the output directory only")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("glm", help="coupled GAMP on a linear model with a separable prior")
    _add_channel_flags(p)
    p.add_argument("--prior", choices=["gaussian", "bernoulli", "bg"], default="bg")
    p.add_argument("--prior-p", dest="prior_p", type=float, default=0.1)
    p.add_argument("--prior-var", dest="prior_var", type=float, default=1.0)
    p.add_argument("--prior-mean", dest="prior_mean", type=float, default=0.0)
    p.add_argument("--N", type=int, default=20000)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--gamma", type=int)
    p.add_argument("--omega", type=int)
    p.add_argument("--rho", type=float)
    p.add_argument("--iters", type=int, default=30)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_glm)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "simulate" and bool(args.sweep_axis) != bool(args.sweep_values):
        parser.error("--sweep-axis and --sweep-values go together")
    try:
        args.func(args)
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ScSparcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
