"""Command-line interface: ``bmckde <command> [--config FILE] [overrides]``.

Exit status is 0 on success, 2 when the configuration violates an assumption
and 1 on any other error. Report files are overwritten, never appended to.
"""

import argparse
import sys
from pathlib import Path

import numpy as np
import yaml

from . import harness
from .density import oracle_for
from .estimator import CIConfig, RegionSelector, SpeedSequence, confidence_interval, delta_for_level, kde
from .harness import (CROSSGEN_HEADER, REPORT_HEADER, VARIANCE_HEADER, ValidationError, load_config,
                      run_replicates, validate_alpha_bandwidth, validate_config, validate_speed, write_csv,
                      write_samples_jsonl)
from .kernels import BandwidthSchedule, get_kernel
from .models import initial_from_dict, model_from_dict, simulate_tree
from .moments import oracle_check
from .tree import generation

COMMANDS = ("simulate", "estimate", "oracle-check", "verify-clt", "verify-mdp", "verify-crossgen",
            "validate", "export-density")
ORACLE_TOL = 1e-10


def _floats(text):
    return [float(v) for v in text.split(",") if v]


def _ints(text):
    return [int(v) for v in text.split(",") if v]


def _strs(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def build_parser():
    parser = argparse.ArgumentParser(prog="bmckde", description="Kernel density estimation on bifurcating "
                                     "Markov chains: simulation, estimation and Monte Carlo checks.")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("run")
    g.add_argument("--config", help="YAML or JSON experiment config")
    g.add_argument("--out", default=".", help="output directory (default: current directory)")
    g.add_argument("--seed", type=int, help="base seed (unsigned 64-bit)")
    g.add_argument("--threads", type=int, help=f"worker threads (default: ${harness.THREADS_ENV} or all cores)")
    g.add_argument("--dry-run", action="store_true", help="print the resolved config and exit")
    g.add_argument("--plot", action="store_true", help="also write PNG figures next to the CSV files")
    g.add_argument("--samples", action="store_true", help="also dump per-replicate statistics as JSONL")
    o = common.add_argument_group("config overrides")
    o.add_argument("--gamma", type=float)
    o.add_argument("--beta", type=float)
    o.add_argument("--s", type=float)
    o.add_argument("--alpha", type=float)
    o.add_argument("--kernel")
    o.add_argument("--kernel-order", type=int)
    o.add_argument("--replicates", type=int)
    o.add_argument("--depths", type=_ints, help="comma-separated depths")
    o.add_argument("--xs", type=_floats, help="comma-separated evaluation points")
    o.add_argument("--deltas", type=_floats, help="comma-separated deviation levels")
    o.add_argument("--regions", type=_strs, help="comma-separated regions (GEN, TREE)")
    helps = {
        "simulate": "simulate one tree and write its states",
        "estimate": "density estimates with confidence intervals from one tree",
        "oracle-check": "compare moment formulas with exhaustive enumeration",
        "verify-clt": "variance ratios and interval coverage over replicates",
        "verify-mdp": "empirical deviation rates against the limiting rate",
        "verify-crossgen": "cross-generation correlations and combined variance",
        "validate": "check the bandwidth, speed and ergodicity assumptions",
        "export-density": "write the invariant density on a grid",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name], description=helps[name])
    return parser


def resolve_config(args):
    overrides = {k: getattr(args, k) for k in ("gamma", "beta", "s", "alpha", "kernel", "kernel_order",
                                               "replicates", "depths", "xs", "deltas", "regions", "seed")}
    return load_config(args.config, **overrides)


def _meta(cfg, command):
    return {"command": command, **cfg.to_dict()}


def _out(args, name):
    path = Path(args.out)
    path.mkdir(parents=True, exist_ok=True)
    return path / name


def cmd_validate(cfg, args):
    model = model_from_dict(cfg.model)
    alpha = cfg.alpha if cfg.alpha is not None else getattr(model, "alpha", None)
    if alpha is not None and 0 < alpha < 1 and 0 < cfg.gamma < 1:
        print(validate_alpha_bandwidth(alpha, cfg.gamma).message)
    if cfg.beta > 0 and 0 < cfg.gamma < 1 and cfg.s > 0:
        print(validate_speed(cfg.gamma, cfg.s, cfg.beta).message)
    elif cfg.beta == 0:
        print("beta=0: central-limit scale, no speed condition")
    validate_config(cfg, model)
    print("configuration valid")


def cmd_simulate(cfg, args):
    validate_config(cfg)
    model = model_from_dict(cfg.model)
    tree = simulate_tree(model, max(cfg.depths), cfg.seed, initial_from_dict(cfg.initial))
    rows = [[u, generation(u), tree.state(u)] for u in range(1, tree.states.size + 1)]
    path = _out(args, "tree.csv")
    write_csv(path, ["node", "generation", "state"], rows, _meta(cfg, "simulate"))
    print(f"wrote {path} ({tree.states.size} nodes)")
    if args.plot and model.continuous:
        from .plotting import plot_density

        plot_density(_out(args, "tree.png"), oracle_for(model), samples=tree.states)


def cmd_estimate(cfg, args):
    validate_config(cfg)
    model = model_from_dict(cfg.model)
    if not model.continuous:
        raise ValueError("density estimation needs a continuous model")
    oracle = oracle_for(model)
    k = get_kernel(cfg.kernel, cfg.kernel_order)
    schedule = BandwidthSchedule(cfg.gamma)
    speed = SpeedSequence(cfg.beta)
    tree = simulate_tree(model, max(cfg.depths), cfg.seed, initial_from_dict(cfg.initial))
    xs = np.asarray(cfg.xs, dtype=float)
    rows, curves = [], {}
    for n in cfg.depths:
        h = schedule(n)
        ci = CIConfig(delta=delta_for_level(cfg.ci_level, speed(n)))
        for tag in cfg.regions:
            region = RegionSelector(tag, n)
            star = RegionSelector(tag if cfg.star_region == "same" else cfg.star_region, n)
            est = kde(tree, region, k, h, xs)
            plug = kde(tree, star, k, h, xs)
            iv = confidence_interval(est, plug, ci, speed, n, region.size, h, k)
            for i, x in enumerate(xs):
                rows.append([n, tag, float(x), h, est[i], float(oracle(x)), iv.lo[i], iv.hi[i], iv.level])
            curves[f"{tag} n={n}"] = (xs, est)
    path = _out(args, "estimate.csv")
    write_csv(path, ["n", "region", "x", "h", "estimate", "mu", "ci_lo", "ci_hi", "level"], rows,
              _meta(cfg, "estimate"))
    print(f"wrote {path} ({len(rows)} rows)")
    if args.plot:
        from .plotting import plot_density

        plot_density(_out(args, "estimate.png"), oracle, estimates=curves if xs.size > 1 else None)


def cmd_oracle_check(cfg, args):
    check = oracle_check(cfg.seed)
    rows = [[name, value, ORACLE_TOL, "PASS" if value <= ORACLE_TOL else "FAIL"]
            for name, value in zip(check._fields, check)]
    path = _out(args, "oracle_check.csv")
    write_csv(path, ["identity", "max_abs_error", "tolerance", "verdict"], rows,
              {"command": "oracle-check", "seed": cfg.seed})
    print(f"max |formula - enumeration| = {check.worst:.3e}")
    if check.worst > ORACLE_TOL:
        raise RuntimeError(f"moment formulas disagree with enumeration by {check.worst:.3e}")


def _samples(cfg, args):
    samples = run_replicates(cfg, args.threads)
    if args.samples:
        write_samples_jsonl(_out(args, "samples.jsonl"), samples)
    return samples


def _print_verdicts(rows, name_col, verdict_col=-1):
    for r in rows:
        print(f"{r[verdict_col]}  {' '.join(str(v) for v in r[:name_col + 1])}")


def cmd_verify_clt(cfg, args):
    samples = _samples(cfg, args)
    rows = harness.verify_clt(samples)
    path = _out(args, "clt_variance.csv")
    write_csv(path, VARIANCE_HEADER, rows, _meta(cfg, "verify-clt"))
    _print_verdicts(rows, 3)
    print(f"wrote {path}")
    if args.plot:
        from .plotting import plot_variance

        plot_variance(_out(args, "clt_variance.png"), rows)


def cmd_verify_mdp(cfg, args):
    samples = _samples(cfg, args)
    report, verdicts = harness.verify_mdp(samples)
    meta = _meta(cfg, "verify-mdp")
    path = _out(args, "mdp_report.csv")
    write_csv(path, REPORT_HEADER, report.rows, meta)
    vrows = [[v.region, v.x, v.delta, " ".join(map(str, v.depths)), " ".join(repr(r) for r in v.rates),
              v.trend, v.ratio, v.inversions, v.finite, v.verdict] for v in verdicts]
    vpath = _out(args, "mdp_verdict.csv")
    write_csv(vpath, ["region", "x", "delta", "depths", "rates", "trend", "ratio", "inversions", "finite",
                      "verdict"], vrows, meta)
    _print_verdicts(vrows, 2)
    print(f"wrote {path} and {vpath}")
    if args.plot:
        from .plotting import plot_rates

        plot_rates(_out(args, "mdp_rates.png"), report)


def cmd_verify_crossgen(cfg, args):
    samples = _samples(cfg, args)
    rows = harness.verify_crossgen(samples)
    if not rows:
        raise ValueError(f"crossgen_k={cfg.crossgen_k} needs a depth n > k")
    path = _out(args, "crossgen.csv")
    write_csv(path, CROSSGEN_HEADER, rows, _meta(cfg, "verify-crossgen"))
    _print_verdicts(rows, 4)
    print(f"wrote {path}")
    if args.plot:
        from .plotting import plot_correlations

        n, x = max(cfg.depths), float(cfg.xs[0])
        vec = np.column_stack([samples.get(f"cg_{ell}", n, x) for ell in range(cfg.crossgen_k + 1)])
        plot_correlations(_out(args, "crossgen.png"), vec)


def cmd_export_density(cfg, args):
    model = model_from_dict(cfg.model)
    oracle = oracle_for(model)
    path = _out(args, "density.csv")
    oracle.to_csv(path)
    print(f"wrote {path} (source: {oracle.source}, integral {oracle.integral():.10f})")
    if args.plot and oracle.continuous:
        from .plotting import plot_density

        plot_density(_out(args, "density.png"), oracle)


HANDLERS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "oracle-check": cmd_oracle_check,
    "verify-clt": cmd_verify_clt,
    "verify-mdp": cmd_verify_mdp,
    "verify-crossgen": cmd_verify_crossgen,
    "validate": cmd_validate,
    "export-density": cmd_export_density,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.dry_run:
            print(yaml.safe_dump({"command": args.command, **cfg.to_dict()}, sort_keys=True), end="")
            return 0
        HANDLERS[args.command](cfg, args)
    except ValidationError as exc:
        print(f"validation failed: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime error
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
