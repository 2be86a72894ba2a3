"""Command-line harness: single runs, parameter sweeps, invariant suites.

Outputs are plain CSV plus text plot scripts; no rendering dependency.
Every CSV starts with a ``# schema=1`` comment line so downstream readers
can guard against layout changes without disturbing the fixed headers.

Exit codes: 0 success, 1 configuration error, 2 runtime solver failure,
3 invariant violation (``validate``). The ``HDT_LOG`` environment variable
sets log verbosity (DEBUG/INFO/WARNING/...).
"""
from __future__ import annotations

import argparse
import concurrent.futures
import configparser
import dataclasses
import logging
import os
import sys

import numpy as np

from . import baselines, controller, validate
from .controller import POLICIES
from .scenario import _SECTIONS, ConfigError, Scenario, _convert, build_scenario

log = logging.getLogger(__name__)

SCHEMA_LINE = "# schema=1"
SLOTS_HEADER = "t,tau,pt,policy,a_es,x,y,b,f,z,T_tol,E_tol_share,H,E_queue,A"
SUMMARY_HEADER = ("policy,seed,param,value,mean_A,mean_T_resp,mean_E,"
                  "placement_delay,updating_delay,alternations,bcd_iters,status")

_SUITES = {
    "drift": validate.suite_drift,
    "gradients": validate.suite_gradients,
    "oracle": validate.suite_oracle,
    "envelopes": validate.suite_envelopes,
}


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    return str(v)


def _load_config(path: str) -> str:
    try:
        with open(path) as fh:
            return fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc


def _apply_flags(sc: Scenario, args) -> Scenario:
    updates = {}
    if args.seed is not None:
        updates["rng_seed"] = args.seed
    if getattr(args, "round_z", None):
        updates["round_z"] = args.round_z
    if getattr(args, "pathloss_sign", None):
        updates["pathloss_sign"] = args.pathloss_sign
    return dataclasses.replace(sc, **updates) if updates else sc


def write_slots_csv(path: str, trace) -> None:
    sc = trace.scenario
    with open(path, "w", newline="") as fh:
        fh.write(SCHEMA_LINE + "\n")
        fh.write(SLOTS_HEADER + "\n")
        for rec in trace.records:
            es = rec.large.es_index  # -1 where unattached
            share = rec.energy_share
            for i in range(sc.num_pts):
                row = (rec.frame, rec.tau, i, trace.policy, int(es[i]),
                       rec.large.x[i], rec.small.y[i], rec.small.b[i],
                       rec.small.f[i], int(rec.small.z[i]),
                       rec.breakdown.t_tol[i], share[i],
                       rec.queues.h[i], rec.queues.e,
                       rec.breakdown.accuracy[i])
                fh.write(",".join(_fmt(v) for v in row) + "\n")


def _summary_row(policy: str, seed: int, param: str, value,
                 summary=None, status: str = "ok") -> str:
    if summary is None:
        mid = [""] * 7
    else:
        mid = [_fmt(summary.mean_accuracy), _fmt(summary.mean_response_delay),
               _fmt(summary.mean_energy), _fmt(summary.placement_delay),
               _fmt(summary.updating_delay), str(summary.total_alternations),
               _fmt(summary.mean_bcd_iterations)]
    return ",".join([policy, str(seed), param, _fmt(value) if value != "" else "",
                     *mid, status])


def write_summary_csv(path: str, rows: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(SCHEMA_LINE + "\n")
        fh.write(SUMMARY_HEADER + "\n")
        for row in rows:
            fh.write(row + "\n")


def cmd_run(args) -> int:
    try:
        sc = build_scenario(_load_config(args.config))
        sc = _apply_flags(sc, args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        trace = controller.run_policy(sc, args.policy)
        summary = baselines.summarize(trace)
    except Exception as exc:  # solver failure past the per-slot fallbacks
        log.exception("run failed")
        print(f"error: solver failure: {exc}", file=sys.stderr)
        return 2
    os.makedirs(args.out, exist_ok=True)
    write_slots_csv(os.path.join(args.out, "slots.csv"), trace)
    write_summary_csv(os.path.join(args.out, "summary.csv"),
                      [_summary_row(args.policy, sc.rng_seed, "", "", summary)])
    print(f"{args.policy} seed={sc.rng_seed}: "
          f"mean_A={summary.mean_accuracy:.4f} "
          f"mean_T_resp={summary.mean_response_delay:.4f}s "
          f"mean_E={summary.mean_energy:.2f}J "
          f"fallback_slots={summary.fallback_slots}")
    return 0


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

@dataclasses.dataclass
class SweepSpec:
    param: str
    values: list
    seeds: list
    policies: list
    out: str
    base_overrides: dict


def _scenario_field_types() -> dict:
    return {f.name: f.type for f in dataclasses.fields(Scenario)}


def parse_sweep_spec(text: str, default_out: str) -> SweepSpec:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"sweep spec parse error: {exc}") from exc
    if not parser.has_section("sweep"):
        raise ConfigError("sweep spec needs a [sweep] section")

    sect = dict(parser.items("sweep"))
    param = sect.pop("param", "").strip()
    fields = {f.name: f for f in dataclasses.fields(Scenario)}
    if param not in fields:
        raise ConfigError(f"swept parameter {param!r} is not a scenario field")
    conv = int if fields[param].type in (int, "int") else float
    try:
        values = [conv(v) for v in sect.pop("values", "").split()]
        seeds = [int(v) for v in sect.pop("seeds", "0").split()]
    except ValueError as exc:
        raise ConfigError(f"bad sweep value: {exc}") from exc
    if not values:
        raise ConfigError("sweep value list is empty")
    if not seeds:
        raise ConfigError("sweep needs at least one seed")
    policies = sect.pop("policies", "taco").split()
    for p in policies:
        if p not in POLICIES:
            raise ConfigError(f"unknown policy {p!r}; choose from {POLICIES}")
    out = sect.pop("out", default_out)
    if sect:
        raise ConfigError("unknown sweep keys: " + ", ".join(sorted(sect)))

    # remaining sections form the base scenario config
    overrides = {}
    unknown = []
    for section in parser.sections():
        if section == "sweep":
            continue
        if section not in _SECTIONS:
            unknown.append(section)
            continue
        for key, raw in parser.items(section):
            if key not in _SECTIONS[section]:
                unknown.append(f"{section}.{key}")
                continue
            field_name, kind = _SECTIONS[section][key]
            try:
                overrides[field_name] = _convert(kind, raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {section}.{key}: {exc}") from exc
    if unknown:
        raise ConfigError("unknown config keys: " + ", ".join(sorted(unknown)))
    return SweepSpec(param, values, seeds, policies, out, overrides)


def _sweep_point(spec: SweepSpec, value, seed: int, policy: str):
    from .scenario import resolve_budgets

    overrides = dict(spec.base_overrides)
    overrides[spec.param] = value
    overrides["rng_seed"] = seed
    sc = resolve_budgets(Scenario(**overrides))
    trace = controller.run_policy(sc, policy)
    return baselines.summarize(trace)


_PLOT_METRICS = {
    "mean_A": 5,
    "mean_T_resp": 6,
    "mean_E": 7,
    "placement_delay": 8,
    "updating_delay": 9,
}


def write_plot_scripts(spec: SweepSpec) -> None:
    """One gnuplot-dialect text script per metric; plain commands, no deps."""
    for metric, col in _PLOT_METRICS.items():
        lines = [
            f"# gnuplot script: {metric} vs {spec.param}, one curve per policy",
            "# usage: gnuplot -p this_file   (run from the sweep output dir)",
            "# summary.csv columns: " + SUMMARY_HEADER,
            "set datafile separator ','",
            "set datafile commentschars '#'",
            f"set xlabel '{spec.param}'",
            f"set ylabel '{metric}'",
            "set key outside",
            "plot " + ", \\\n     ".join(
                f"'summary.csv' using 4:(strcol(1) eq '{p}' && strcol(12) eq "
                f"'ok' ? column({col}) : 1/0) with points title '{p}'"
                for p in spec.policies),
        ]
        path = os.path.join(spec.out, f"plot_{metric}.gp")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def cmd_sweep(args) -> int:
    try:
        spec = parse_sweep_spec(_load_config(args.spec), args.out)
        if args.seed is not None:
            spec.seeds = [args.seed]
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    points = [(v, s, p) for v in spec.values for s in spec.seeds
              for p in spec.policies]
    results: dict = {}
    if args.jobs > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=args.jobs) as ex:
            futs = {ex.submit(_sweep_point, spec, *pt): pt for pt in points}
            for fut in concurrent.futures.as_completed(futs):
                pt = futs[fut]
                try:
                    results[pt] = fut.result()
                except Exception as exc:
                    log.warning("sweep point %s failed: %s", pt, exc)
                    results[pt] = exc
    else:
        for pt in points:
            try:
                results[pt] = _sweep_point(spec, *pt)
            except Exception as exc:
                log.warning("sweep point %s failed: %s", pt, exc)
                results[pt] = exc

    rows = []
    ok = 0
    for value, seed, policy in points:  # deterministic (value, seed, policy)
        res = results[(value, seed, policy)]
        if isinstance(res, Exception):
            rows.append(_summary_row(policy, seed, spec.param, value,
                                     status=f"error:{type(res).__name__}"))
        else:
            rows.append(_summary_row(policy, seed, spec.param, value, res))
            ok += 1
    os.makedirs(spec.out, exist_ok=True)
    write_summary_csv(os.path.join(spec.out, "summary.csv"), rows)
    write_plot_scripts(spec)
    print(f"sweep {spec.param}: {ok}/{len(points)} points succeeded "
          f"-> {spec.out}/summary.csv")
    return 0 if ok else 2


def cmd_validate(args) -> int:
    fn = _SUITES[args.suite]
    violations, checks, detail = fn()
    extra = " ".join(f"{k}={v}" for k, v in detail.items())
    print(f"suite {args.suite}: {checks - violations}/{checks} checks passed"
          + (f" ({extra})" if extra else ""))
    if violations:
        print(f"error: {violations} violation(s) in suite {args.suite}",
              file=sys.stderr)
        return 3
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="edgetwin",
        description="Two-timescale virtual-twin placement/offloading simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment and dump CSVs")
    run.add_argument("config", help="scenario config file (INI key=value)")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--policy", choices=POLICIES, default="taco")
    run.add_argument("--out", default=".")
    run.add_argument("--round-z", choices=("det", "prob"), default=None)
    run.add_argument("--pathloss-sign", choices=("physical", "literal"),
                     default=None)
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run a parameter sweep")
    sweep.add_argument("spec", help="sweep spec file ([sweep] + scenario keys)")
    sweep.add_argument("--seed", type=int, default=None,
                       help="override the spec's seed list with one seed")
    sweep.add_argument("--jobs", type=int, default=1)
    sweep.add_argument("--out", default=".")
    sweep.set_defaults(func=cmd_sweep)

    val = sub.add_parser("validate", help="run an invariant suite")
    val.add_argument("--suite", choices=sorted(_SUITES), required=True)
    val.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("HDT_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
