"""Configuration-driven experiment runner.

Verbs:
  solve            one solve; writes summary.csv, surface.csv, policy.csv
                   (when recording), and PNG figures alongside.
  mesh-study       value / increment / increment-ratio table over the
                   study.h_values list, one block per switching cost.
  control-study    value and difference-to-finest over study.j_values at
                   fixed h and cost, with serial vs parallel wall times.
  validate-config  parse, apply overrides, and type-check a config.

Exit codes: 0 success, 2 configuration error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import report
from .config import RunConfig, build_spec, load_config, resolve_rule, scheme_kwargs
from .exceptions import ConfigurationError, ConvergenceError, HJBVIError
from .model import discretize_controls
from .solver import SchemeParams, solve

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hjbvi",
        description="Switching-system solver for nonlocal HJB variational "
                    "inequalities (mixed optimal stopping and control)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, msg in (("solve", "run a single solve"),
                      ("mesh-study", "mesh / cost convergence study"),
                      ("control-study", "control refinement study"),
                      ("validate-config", "validate a config file")):
        p = sub.add_parser(name, help=msg)
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key via dotted path (repeatable)")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads for component parallelism")
        p.add_argument("--record-policy", action="store_true",
                       help="record per-step policy and stopping mask")
    return parser


def _controls_of(cfg: RunConfig, j=None):
    model = cfg.model
    if model["kind"] == "zero_dynamics":
        return discretize_controls((0.0, 0.0), 1)
    interval = tuple(model.get("control_interval", (0.0, 1.0)))
    return discretize_controls(interval, int(j if j is not None else
                                             model.get("controls", 2)))


def _params_of(cfg: RunConfig, h: float, args, *, cost=None, dt_rule=None,
               parallel=None) -> SchemeParams:
    kw = scheme_kwargs(cfg, h, cost=cost, dt_rule=dt_rule)
    if args.record_policy:
        kw["record_policy"] = True
    if args.threads is not None:
        kw["n_threads"] = args.threads
        kw["parallel_components"] = args.threads > 1
    if parallel is not None:
        kw["parallel_components"] = parallel
    return SchemeParams(**kw)


def _out_dir(cfg: RunConfig, args) -> Path:
    out = args.out or cfg.output.get("directory", "out")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _formats(cfg: RunConfig) -> set[str]:
    return set(cfg.output.get("formats", ["csv", "png"]))


def _report_point(cfg: RunConfig) -> float:
    model = cfg.model
    if "x0" in model:
        return float(model["x0"])
    lo, hi = model.get("domain", (0.0, 2.0))
    return 0.5 * (float(lo) + float(hi))


def _run_single(cfg: RunConfig, args) -> int:
    h = float(cfg.scheme["h"])
    spec = build_spec(cfg, h)
    controls = _controls_of(cfg)
    params = _params_of(cfg, h, args)
    result = solve(spec, controls, params)

    x0 = _report_point(cfg)
    value = result.value(x0, component="last")
    out = _out_dir(cfg, args)
    record = {
        "value": value, "x0": x0, "T": spec.horizon,
        "h": params.h, "dt": params.dt, "epsilon": params.epsilon,
        "theta": params.theta, "cost": params.cost, "J": controls.j,
        "picard_total": result.stats.total_iterations,
        "picard_max": result.stats.max_iterations,
        "picard_mean": result.stats.mean_iterations,
        "max_contraction_ratio": result.stats.max_contraction_ratio,
        "contraction_bound": result.stats.contraction_bound,
        "wall_time": result.stats.wall_time,
    }
    report.write_summary(out / "summary.csv", record)
    report.write_surface(out / "surface.csv", result)
    figures = "png" in _formats(cfg)
    if figures:
        report.render_surface(out / "surface.png", result)
    if params.record_policy:
        report.write_policy(out / "policy.csv", result)
        if figures:
            report.render_policy(out / "policy.png", result)
    print(f"value at (T={spec.horizon:g}, x={x0:g}): {value:.6f}  "
          f"(picard mean {result.stats.mean_iterations:.1f}, "
          f"wall {result.stats.wall_time:.2f}s)")
    print(f"artifacts written to {out}")
    return EXIT_OK


def _run_mesh_study(cfg: RunConfig, args) -> int:
    study = cfg.study
    h_values = [float(v) for v in study.get("h_values", [])]
    if len(h_values) < 3:
        raise ConfigurationError("mesh-study needs study.h_values with >= 3 "
                                 "descending entries")
    c_values = [float(v) for v in study.get("c_values",
                                            [cfg.scheme.get("cost", 1 / 640)])]
    x0 = _report_point(cfg)
    out = _out_dir(cfg, args)
    rows = []
    failures = 0
    for c in c_values:
        values = []
        for h in h_values:
            try:
                spec = build_spec(cfg, h, domain=study.get("domain"))
                result = solve(spec, _controls_of(cfg),
                               _params_of(cfg, h, args, cost=c))
                values.append(result.value(x0, component="last"))
            except ConvergenceError as exc:
                print(f"solve failed for c={c:g}, h={h:g}: {exc}",
                      file=sys.stderr)
                failures += 1
                values = None
                break
        if values is None:
            continue
        incs = [np.nan]
        for k in range(1, len(values)):
            incs.append(values[k] - values[k - 1])
        for k, h in enumerate(h_values):
            if k < 2 or incs[k] == 0.0:
                ratio = np.nan
            else:
                ratio = incs[k - 1] / incs[k] if incs[k] != 0.0 else np.nan
            rows.append({"c": c, "h": h, "value": values[k],
                         "increment": incs[k], "ratio": ratio})
    header = ["c", "h", "value", "increment", "ratio"]
    report.write_study(out / "study.csv",
                       header, [[r[k] for k in header] for r in rows])
    if "png" in _formats(cfg):
        report.render_mesh_study(out / "study.png", rows)
    print(report.format_table(header, [[r[k] for k in header] for r in rows]))
    print(f"artifacts written to {out}")
    return EXIT_SOLVER if failures and not rows else EXIT_OK


def _run_control_study(cfg: RunConfig, args) -> int:
    study = cfg.study
    j_values = [int(v) for v in study.get("j_values", [])]
    if not j_values:
        raise ConfigurationError("control-study needs study.j_values")
    j_values = sorted(set(j_values))
    h = float(cfg.scheme["h"])
    x0 = _report_point(cfg)
    out = _out_dir(cfg, args)

    finals = {}
    rows = []
    for j in j_values:
        spec = build_spec(cfg, h, domain=study.get("domain"))
        controls = _controls_of(cfg, j=j)
        t0 = time.perf_counter()
        res = solve(spec, controls, _params_of(cfg, h, args, parallel=False))
        serial_time = time.perf_counter() - t0
        if j > 1:
            t0 = time.perf_counter()
            res_par = solve(spec, controls,
                            _params_of(cfg, h, args, parallel=True))
            parallel_time = time.perf_counter() - t0
            if not np.array_equal(res_par.final, res.final):
                raise ConvergenceError(
                    f"parallel and serial solves disagree at J={j}")
        else:
            parallel_time = serial_time
        finals[j] = res
        rows.append({"j": j, "value": res.value(x0, component="last"),
                     "serial_time": serial_time,
                     "parallel_time": parallel_time,
                     "speedup": serial_time / parallel_time})
    j_max = j_values[-1]
    ref = finals[j_max].final[-1]
    for row in rows:
        diff = np.abs(finals[row["j"]].final[-1] - ref)
        row["diff_to_finest"] = float(diff.mean())
        row["diff_at_x0"] = abs(row["value"]
                                - rows[-1]["value"])
    header = ["j", "value", "diff_to_finest", "diff_at_x0",
              "serial_time", "parallel_time", "speedup"]
    report.write_study(out / "study.csv",
                       header, [[r[k] for k in header] for r in rows])
    if "png" in _formats(cfg):
        report.render_control_study(out / "study.png", rows)
    print(report.format_table(header, [[r[k] for k in header] for r in rows]))
    print(f"artifacts written to {out}")
    return EXIT_OK


def _run_validate(cfg: RunConfig, args) -> int:
    h = float(cfg.scheme["h"])
    build_spec(cfg, h)
    kw = scheme_kwargs(cfg, h)
    SchemeParams(**kw)
    for key in ("dt_rule", "eps_rule", "k_sl_rule"):
        if key in cfg.scheme:
            resolve_rule(cfg.scheme[key], h, f"scheme.{key}")
    print("config OK")
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.set)
        if args.command == "solve":
            return _run_single(cfg, args)
        if args.command == "mesh-study":
            return _run_mesh_study(cfg, args)
        if args.command == "control-study":
            return _run_control_study(cfg, args)
        return _run_validate(cfg, args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        where = ""
        if exc.step is not None:
            where = f" (step {exc.step}" + (
                f", component {exc.component})" if exc.component is not None
                else ")")
        print(f"solver failure{where}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except HJBVIError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
