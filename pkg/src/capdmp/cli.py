"""Command-line interface.

Subcommands: validate (oracle suite), run / tune / ratio (benchmark
harness), plot-metric and plot-results (SVG emission).  Exit codes:
0 success, 1 validation failure, 2 config error, 3 runtime failure.

Configuration is a flat key-value file (see `config.KEY_REGISTRY`); every
subcommand's --help lists the keys it recognizes.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import bench, config as cfg, svgplot
from .bench import (
    ExperimentConfig,
    TargetSpec,
    efficiency_table,
    read_results_csv,
    run_experiment,
    tune_sampler,
    write_results_csv,
    write_summary_csv,
)
from .errors import ConfigError, ContractViolation
from .targets import make_target
from .validation import run_validation


def _keys_epilog(subcommand: str) -> str:
    keys = cfg.SUBCOMMAND_KEYS.get(subcommand, [])
    if not keys:
        return "recognized config keys: none"
    lines = ["recognized config keys:"]
    for key in keys:
        default, help_text = cfg.KEY_REGISTRY[key]
        lines.append(f"  {key:<36} {help_text} (default: {default})")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="capdmp",
        description="Covariance-adaptive PDMP samplers and benchmark harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(
            name, help=help_text, epilog=_keys_epilog(name),
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        p.add_argument("--config", default=None, help="flat key-value config file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="base seed override")
        p.add_argument("--jobs", type=int, default=1, help="worker processes")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")
        p.set_defaults(func=func)
        return p

    add("validate", cmd_validate, "run the cross-module oracle suites")
    add("run", cmd_run, "tune (optionally) and run the configured experiment")
    add("tune", cmd_tune, "nested Brent tuning only; writes tuned parameters")
    p_ratio = add("ratio", cmd_ratio, "efficiency-ratio table from results.csv")
    p_ratio.add_argument("--results", default=None,
                         help="results.csv path (default: <out>/results.csv)")
    add("plot-metric", cmd_plot_metric, "density contours with metric ellipses")
    p_pr = add("plot-results", cmd_plot_results, "ratio curves from results.csv")
    p_pr.add_argument("--results", default=None,
                      help="results.csv path (default: <out>/results.csv)")
    return parser


def _load(args) -> dict:
    values = cfg.load_config(args.config) if args.config else {}
    if args.seed is not None:
        values["experiment.base_seed"] = args.seed
        values["metro.seed"] = args.seed
    return values


def _say(args):
    if args.quiet:
        return lambda msg: None
    return lambda msg: print(f"[capdmp] {msg}", flush=True)


def _ensure_out(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _echo_config(values: dict, out_dir: str):
    path = os.path.join(out_dir, "resolved_config.cfg")
    with open(path, "w") as fh:
        fh.write("# resolved configuration (defaults overlaid with file values)\n")
        for key in sorted(cfg.KEY_REGISTRY):
            value = cfg.get(values, key)
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            fh.write(f"{key} = {value}\n")
    return path


def _targets_from_config(values: dict) -> list[TargetSpec]:
    name = cfg.get(values, "target.name")
    if name == "banana":
        return [TargetSpec("banana", {"a": float(cfg.get(values, "target.a")),
                                      "b": float(cfg.get(values, "target.b"))},
                           label="banana")]
    if name == "gaussian":
        d = int(cfg.get(values, "target.dimension"))
        grid = cfg.as_number_list(values.get("experiment.delta_grid"))
        if grid is None:
            grid = [float(cfg.get(values, "target.delta"))]
        return [TargetSpec("gaussian", {"d": d, "delta": delta},
                           label=f"gaussian_delta{delta:g}")
                for delta in grid]
    raise ConfigError("experiments support banana and gaussian targets",
                      key="target.name")


def _experiment_from_config(values: dict, jobs: int) -> ExperimentConfig:
    samplers = cfg.get(values, "experiment.samplers")
    if isinstance(samplers, str):
        samplers = [s.strip() for s in samplers.split(",") if s.strip()]
    fixed_T, fixed_delta = {}, {}
    for sampler in ("bps", "sl_pdmp", "ca_bps"):
        t_key = f"experiment.{sampler}_T"
        d_key = f"experiment.{sampler}_delta"
        if values.get(t_key) is not None:
            fixed_T[sampler] = float(values[t_key])
        if values.get(d_key) is not None:
            fixed_delta[sampler] = float(values[d_key])
    # metro.* act as shared fallbacks for the Metropolised samplers
    for sampler in ("sl_pdmp", "ca_bps"):
        if sampler not in fixed_T and values.get("metro.window_T") is not None:
            fixed_T[sampler] = float(values["metro.window_T"])
        if sampler not in fixed_delta and values.get("metro.grid_step") is not None:
            fixed_delta[sampler] = float(values["metro.grid_step"])
    beta_grid = cfg.as_number_list(cfg.get(values, "ratio.beta_grid")) or []
    n_eps = int(cfg.get(values, "ratio.epsilon_points"))
    eps_grid = list(np.logspace(
        np.log10(float(cfg.get(values, "ratio.epsilon_min"))),
        np.log10(float(cfg.get(values, "ratio.epsilon_max"))), n_eps))
    exp = ExperimentConfig(
        targets=_targets_from_config(values),
        samplers=samplers,
        replicates=int(cfg.get(values, "experiment.replicates")),
        budget_seconds=values.get("experiment.budget_seconds",
                                  cfg.KEY_REGISTRY["experiment.budget_seconds"][0]),
        budget_windows=values.get("experiment.budget_windows"),
        budget_events=values.get("experiment.budget_events"),
        tune=bool(cfg.get(values, "experiment.tune")),
        tune_replicates=values.get("experiment.tune_replicates"),
        tune_budget_seconds=values.get("experiment.tune_budget_seconds"),
        outer_iterations=int(cfg.get(values, "experiment.outer_iterations")),
        inner_iterations=int(cfg.get(values, "experiment.inner_iterations")),
        beta_grid=beta_grid,
        epsilon_grid=eps_grid,
        base_seed=int(values.get("experiment.base_seed")
                      if values.get("experiment.base_seed") is not None
                      else cfg.get(values, "metro.seed")),
        burn_in=float(cfg.get(values, "sampler.burn_in")),
        hardness=float(cfg.get(values, "metric.hardness")),
        record_dt=float(cfg.get(values, "sampler.record_dt")),
        jobs=jobs,
        fixed_T=fixed_T,
        fixed_delta=fixed_delta,
        timing_in_results=str(cfg.get(values, "experiment.timing_in_results")),
    )
    if exp.budget_seconds is None and exp.budget_windows is None \
            and exp.budget_events is None:
        exp.budget_seconds = 10.0
    return exp


# ---------------------------------------------------------------------------
# Subcommands


def cmd_validate(args) -> int:
    say = _say(args)
    say("running oracle suites (this takes a minute or two)")
    results = run_validation(seed=args.seed or 0)
    width = max(len(r.name) for r in results)
    failed = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"[{status}] {r.name:<{width}}  {r.detail}")
        if not r.passed:
            failed += 1
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else 1


def cmd_run(args) -> int:
    values = _load(args)
    out_dir = _ensure_out(args)
    exp = _experiment_from_config(values, args.jobs)
    say = _say(args)
    echo = _echo_config(values, out_dir)
    say(f"resolved config echoed to {echo}")
    rows, summary = run_experiment(exp, progress=say)
    results_path = os.path.join(out_dir, "results.csv")
    summary_path = os.path.join(out_dir, "summary.csv")
    write_results_csv(results_path, rows)
    write_summary_csv(summary_path, summary)
    _write_human_summary(os.path.join(out_dir, "summary.txt"), summary)
    say(f"wrote {results_path} ({len(rows)} rows) and {summary_path}")
    return 0


def cmd_tune(args) -> int:
    values = _load(args)
    out_dir = _ensure_out(args)
    exp = _experiment_from_config(values, args.jobs)
    say = _say(args)
    _echo_config(values, out_dir)
    path = os.path.join(out_dir, "tuned.csv")
    with open(path, "w") as fh:
        fh.write("target,sampler,T,delta\n")
        for spec in exp.targets:
            for sampler in exp.samplers:
                say(f"tuning {sampler} on {spec.label}")
                (T, delta), _ = tune_sampler(spec, sampler, exp)
                fh.write(f"{spec.label},{sampler},{bench.fmt(T)},{bench.fmt(delta)}\n")
                say(f"  tuned T={T:.4g} delta={delta:.4g}")
    say(f"wrote {path}")
    return 0


def _rows_by_target(rows):
    grouped: dict = {}
    for row in rows:
        grouped.setdefault(row.target, {}).setdefault(row.sampler, []).append(row)
    return grouped


def cmd_ratio(args) -> int:
    values = _load(args)
    out_dir = _ensure_out(args)
    results_path = args.results or os.path.join(out_dir, "results.csv")
    if not os.path.exists(results_path):
        raise ConfigError(f"results file not found: {results_path}")
    rows = read_results_csv(results_path)
    exp_beta = cfg.as_number_list(cfg.get(values, "ratio.beta_grid")) or []
    n_eps = int(cfg.get(values, "ratio.epsilon_points"))
    eps_grid = list(np.logspace(
        np.log10(float(cfg.get(values, "ratio.epsilon_min"))),
        np.log10(float(cfg.get(values, "ratio.epsilon_max"))), n_eps))
    path = os.path.join(out_dir, "ratio.csv")
    with open(path, "w") as fh:
        fh.write("target,beta,epsilon,ratio,ratio_kind\n")
        for target, by_sampler in sorted(_rows_by_target(rows).items()):
            for beta, eps, ratio, kind in efficiency_table(by_sampler, exp_beta,
                                                           eps_grid):
                fh.write(f"{target},{bench.fmt(beta)},{bench.fmt(eps)},"
                         f"{bench.fmt(ratio)},{kind}\n")
    _say(args)(f"wrote {path}")
    return 0


def cmd_plot_metric(args) -> int:
    values = _load(args)
    out_dir = _ensure_out(args)
    name = cfg.get(values, "target.name")
    if name == "banana":
        target = make_target("banana", a=float(cfg.get(values, "target.a")),
                             b=float(cfg.get(values, "target.b")))
    elif name == "gaussian":
        target = make_target("gaussian", d=2,
                             delta=float(cfg.get(values, "target.delta")))
    elif name == "mixture":
        target = make_target(
            "mixture", weights=[0.5, 0.5], means=[[-1.5, 0.0], [1.5, 0.0]],
            covariances=[[[0.8, 0.5], [0.5, 0.6]], [[0.8, -0.5], [-0.5, 0.6]]])
    else:
        raise ConfigError("unknown target for plot-metric", key="target.name")
    if target.d != 2:
        raise ConfigError("plot-metric requires a 2-d target")
    region = (float(cfg.get(values, "plot.x_min")), float(cfg.get(values, "plot.x_max")),
              float(cfg.get(values, "plot.y_min")), float(cfg.get(values, "plot.y_max")))
    path = os.path.join(out_dir, f"metric_{target.name}.svg")
    svgplot.write_metric_plot(
        target, region, int(cfg.get(values, "plot.grid_points")),
        float(cfg.get(values, "metric.hardness")), path)
    _say(args)(f"wrote {path}")
    return 0


def cmd_plot_results(args) -> int:
    values = _load(args)
    out_dir = _ensure_out(args)
    results_path = args.results or os.path.join(out_dir, "results.csv")
    if not os.path.exists(results_path):
        raise ConfigError(f"results file not found: {results_path}")
    rows = read_results_csv(results_path)
    beta_grid = cfg.as_number_list(cfg.get(values, "ratio.beta_grid")) or []
    say = _say(args)
    if not beta_grid:
        print("[capdmp] warning: empty beta grid, no ratio plot emitted")
        return 0
    n_eps = int(cfg.get(values, "ratio.epsilon_points"))
    eps_grid = list(np.logspace(
        np.log10(float(cfg.get(values, "ratio.epsilon_min"))),
        np.log10(float(cfg.get(values, "ratio.epsilon_max"))), n_eps))
    delta_points: dict = {}
    made_any = False
    for target, by_sampler in sorted(_rows_by_target(rows).items()):
        table = efficiency_table(by_sampler, beta_grid, eps_grid)
        if not table:
            continue
        ratio_rows = [{"beta": b, "epsilon": e, "ratio": r, "ratio_kind": k}
                      for b, e, r, k in table]
        path = os.path.join(out_dir, f"ratio_{target}.svg")
        svgplot.write_ratio_plot(ratio_rows, path,
                                 title=f"efficiency ratio: {target}")
        say(f"wrote {path}")
        made_any = True
        if target.startswith("gaussian_delta"):
            delta = float(target.removeprefix("gaussian_delta"))
            r0 = {b: r for b, e, r, k in table if k == "matched" and e == min(eps_grid)}
            for beta, val in r0.items():
                delta_points.setdefault(beta, []).append((delta, val))
    if len(delta_points) > 0 and any(len(v) > 1 for v in delta_points.values()):
        path = os.path.join(out_dir, "ratio_vs_delta.svg")
        svgplot.write_delta_sweep_plot(delta_points, path)
        say(f"wrote {path}")
    if not made_any:
        print("[capdmp] warning: no target had both bps and ca_bps rows; "
              "nothing to plot")
    return 0


def _write_human_summary(path, summary_rows):
    with open(path, "w") as fh:
        fh.write(f"{'target':<22}{'sampler':<12}{'median KS':>12}"
                 f"{'wall s':>10}{'events':>12}{'T':>10}{'delta':>10}\n")
        for row in summary_rows:
            if row["ratio_kind"]:
                continue
            fh.write(f"{row['target']:<22}{row['sampler']:<12}"
                     f"{row['median_ks']:>12.5f}{row['median_wall_s']:>10.3f}"
                     f"{row['median_events']:>12.0f}{row['tuned_T']:>10.4g}"
                     f"{row['tuned_delta']:>10.4g}\n")
        fh.write("\nmatched-KS efficiency r(0) per target "
                 "(above 1 favors CA-BPS):\n")
        r0 = {}
        for row in summary_rows:
            if row["ratio_kind"] == "matched":
                key = row["target"]
                eps = row["epsilon"]
                if key not in r0 or eps < r0[key][0]:
                    if row["beta"] == 1.0:
                        r0[key] = (eps, row["ratio"])
        for target, (eps, ratio) in sorted(r0.items()):
            fh.write(f"  {target:<22} r(~0) = {ratio:.4f}\n")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ContractViolation) as exc:
        print(f"[capdmp] config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"[capdmp] runtime failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
