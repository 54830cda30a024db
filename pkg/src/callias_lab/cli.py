"""Command-line entry point: ``callias-lab {list, run, sweep, properties}``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .experiments import (DESCRIPTIONS, EXPERIMENTS, ConfigError, ExperimentConfig, IndexReport,
                          property_suite, run_experiment)
from .calculus import SWITCH_KINDS

CSV_COLUMNS = ("experiment", "kappa", "window_radius", "index_signature", "index_kernel", "spectral_flow",
               "nc_winding", "pairing", "chern_diff", "boundary", "g_est", "kappa0", "gap", "agreement",
               "runtime_ms")

EXIT_OK, EXIT_USAGE, EXIT_ASSERTION = 0, 1, 2

_NUM = (int, float)
# key -> (accepted python types, description); "lattice" and "tolerances" are nested objects
SCHEMA: dict[str, tuple[tuple, str]] = {
    "experiment": ((str,), "experiment name (required)"),
    "lattice": ((dict,), "lattice parameters (extent, fiber_dim, spacing, length, chern_extent, box)"),
    "kappa": (_NUM, "kappa; default 0.5 kappa0 (bounded families) or the family default"),
    "kappa_values": ((list,), "list of kappa values (kernel-count families)"),
    "switch": ((str,), f"switch function kind, one of {', '.join(SWITCH_KINDS)}; default erf_based"),
    "g": (_NUM, "switch width g; default from the potential"),
    "m": (_NUM, "mass for mass-flip diagnostics; default 1"),
    "mu": (_NUM, "doubling mass; default 0"),
    "flux": ((list,), "rational flux [p, q] meaning theta = 2 pi p / q; default [1, 3]"),
    "crossings": ((int,), "designed crossing count k (robbin_salamon); default 1"),
    "winding": ((int,), "vortex winding w (even_vortex, bounded_transform_check); default 1"),
    "window_radius": (_NUM, "window radius (physical units); family default"),
    "momentum_radius": (_NUM, "phase-space window momentum cutoff; family default"),
    "seed": ((int,), "random seed; default 0"),
    "sweep_points": ((int,), "kappa sweep points inside robbin_salamon; default 0"),
    "tolerances": ((dict,), "tolerance overrides (amplitude, interface_leak)"),
}
LATTICE_KEYS = {"extent": _NUM, "fiber_dim": (int,), "spacing": _NUM, "length": _NUM,
                "chern_extent": (int,), "box": (list,)}
TOLERANCE_KEYS = {"amplitude": _NUM, "interface_leak": _NUM}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# config

def _type_ok(value: Any, types: tuple) -> bool:
    if isinstance(value, bool):
        return bool in types
    if float in types and isinstance(value, int):
        return True
    return isinstance(value, types)


def _type_name(types: tuple) -> str:
    names = {int: "integer", float: "number", str: "string", list: "array", dict: "object"}
    return " or ".join(dict.fromkeys(names[t] for t in types))


def _check_object(obj: dict, allowed: dict, path: str):
    for key, value in obj.items():
        if key not in allowed:
            raise ConfigError(f"{path}.{key}: unknown key (allowed: {', '.join(sorted(allowed))})")
        types = allowed[key][0] if isinstance(allowed[key][0], tuple) else allowed[key]
        if not _type_ok(value, types):
            raise ConfigError(f"{path}.{key}: expected {_type_name(types)}, got {type(value).__name__}")


def parse_config(text: str) -> ExperimentConfig:
    """Strictly validate a JSON experiment config and fill in defaults."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError("$: config must be a JSON object")
    _check_object(data, SCHEMA, "$")
    if "experiment" not in data:
        raise ConfigError("$.experiment: required key missing")
    if data["experiment"] not in EXPERIMENTS:
        raise ConfigError(f"$.experiment: unknown experiment {data['experiment']!r}")
    _check_object(data.get("lattice", {}), LATTICE_KEYS, "$.lattice")
    _check_object(data.get("tolerances", {}), TOLERANCE_KEYS, "$.tolerances")
    for i, v in enumerate(data.get("kappa_values") or []):
        if not _type_ok(v, _NUM):
            raise ConfigError(f"$.kappa_values[{i}]: expected number, got {type(v).__name__}")
    flux = data.get("flux")
    if flux is not None and (len(flux) != 2 or not all(_type_ok(v, (int,)) for v in flux)):
        raise ConfigError("$.flux: expected [p, q] with integer entries")
    for key in ("kappa", "g", "window_radius", "momentum_radius"):
        if key in data and not data[key] > 0:
            raise ConfigError(f"$.{key}: must be positive, got {data[key]}")
    for key in ("mu", "sweep_points"):
        if key in data and data[key] < 0:
            raise ConfigError(f"$.{key}: must be nonnegative, got {data[key]}")
    if "switch" in data and data["switch"] not in SWITCH_KINDS:
        raise ConfigError(f"$.switch: unknown kind {data['switch']!r}")
    kwargs = {k: v for k, v in data.items() if k != "experiment"}
    if "flux" in kwargs:
        kwargs["flux"] = tuple(kwargs["flux"])
    try:
        return ExperimentConfig(name=data["experiment"], **kwargs)
    except ConfigError as exc:
        raise ConfigError(f"$.{exc}") from None


def serialize_config(cfg: ExperimentConfig) -> str:
    d = cfg.to_dict()
    d["experiment"] = d.pop("name")
    d = {k: v for k, v in d.items() if v is not None}
    return json.dumps(d, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# reports

def _fmt(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12g}"
    return str(v)


def _round_floats(x):
    if isinstance(x, float):
        return float(f"{x:.12g}") if math.isfinite(x) else str(x)
    if isinstance(x, dict):
        return {k: _round_floats(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_round_floats(v) for v in x]
    return x


def report_rows(reports: Sequence[IndexReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in reports:
        w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def emit_report(report: IndexReport | Sequence[IndexReport], out_dir: str | os.PathLike) -> tuple[Path, Path]:
    """Write ``results.json`` and ``results.csv`` into ``out_dir``."""
    reports = [report] if isinstance(report, IndexReport) else list(report)
    d = Path(out_dir)
    try:
        d.mkdir(parents=True, exist_ok=True)
        jpath, cpath = d / "results.json", d / "results.csv"
        payload = [_round_floats(r.to_dict()) for r in reports]
        jpath.write_text(json.dumps(payload[0] if isinstance(report, IndexReport) else payload, indent=2))
        cpath.write_text(report_rows(reports))
    except OSError as exc:
        raise OSError(f"cannot write report to {d}: {exc.strerror or exc}") from exc
    return jpath, cpath


# ---------------------------------------------------------------------------
# commands

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="callias-lab", description="Finite-volume index theorems on lattice models.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("list", help="list experiments and config keys")
    r = sub.add_parser("run", help="run one experiment")
    r.add_argument("name", choices=EXPERIMENTS)
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    s = sub.add_parser("sweep", help="sweep one parameter of an experiment")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--param", required=True)
    s.add_argument("--points", type=int, default=8)
    s.add_argument("--lo", type=float, default=0.05, help="lowest kappa as a fraction of kappa0")
    s.add_argument("--hi", type=float, default=0.95, help="highest kappa as a fraction of kappa0")
    s.add_argument("--values", default=None, help="comma-separated values for parameters other than kappa")
    s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    pr = sub.add_parser("properties", help="run the randomized property suite")
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--out", default=None)
    return p


def _load_config(path: str, overrides: Sequence[str]) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    data_cfg = parse_config(text)
    if not overrides:
        return data_cfg
    data = json.loads(serialize_config(data_cfg))
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"override {item!r} is not KEY=VALUE")
        key, raw = item.split("=", 1)
        try:
            data[key] = json.loads(raw)
        except json.JSONDecodeError:
            data[key] = raw
    return parse_config(json.dumps(data))


def _workers() -> int:
    raw = os.environ.get("CALLIAS_LAB_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"CALLIAS_LAB_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def _run_one(cfg: ExperimentConfig) -> IndexReport:
    return run_experiment(cfg.name, cfg)


def _report_failures(reports: Sequence[IndexReport]) -> int:
    bad = [r for r in reports if not r.agreement]
    for r in bad:
        print(f"agreement failed for {r.experiment} (kappa={r.kappa}): engines {r.engines()}, "
              f"expected {r.expected}", file=sys.stderr)
    return EXIT_ASSERTION if bad else EXIT_OK


def cmd_list() -> int:
    for name in EXPERIMENTS:
        print(f"{name}\n    {DESCRIPTIONS[name]}")
    print("\nconfig keys:")
    for key, (_, doc) in SCHEMA.items():
        print(f"  {key:16s} {doc}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load_config(args.config, args.set)
    if cfg.name != args.name:
        raise UsageError(f"config describes {cfg.name!r} but {args.name!r} was requested")
    rep = run_experiment(args.name, cfg)
    emit_report(rep, args.out)
    print(report_rows([rep]), end="")
    return _report_failures([rep])


def sweep_configs(base: ExperimentConfig, param: str, points: int, lo: float = 0.05, hi: float = 0.95,
                  values: Sequence[Any] | None = None) -> list[ExperimentConfig]:
    if points < 1:
        raise UsageError("--points must be at least 1")
    if param == "kappa" and values is None:
        if not 0 < lo <= hi:
            raise UsageError("need 0 < --lo <= --hi")
        k0 = run_experiment(base.name, replace(base, kappa=None, sweep_points=0)).kappa0
        if k0 is None:
            raise UsageError(f"experiment {base.name} has no kappa0; pass --values")
        values = [float(f) * k0 for f in np.geomspace(lo, hi, points)]
    if values is None:
        raise UsageError(f"sweeping {param!r} needs --values")
    if param not in SCHEMA or param in ("experiment", "lattice", "tolerances"):
        raise UsageError(f"cannot sweep {param!r}")
    data = json.loads(serialize_config(base))
    out = []
    for v in values:
        data[param] = v
        out.append(parse_config(json.dumps(data)))
    return out


def cmd_sweep(args) -> int:
    base = _load_config(args.config, args.set)
    values = None
    if args.values is not None:
        values = [json.loads(v) for v in args.values.split(",")]
        if args.points != len(values):
            args.points = len(values)
    cfgs = sweep_configs(base, args.param, args.points, args.lo, args.hi, values)
    n = min(_workers(), len(cfgs))
    if n > 1:
        with ProcessPoolExecutor(max_workers=n) as ex:
            reports = list(ex.map(_run_one, cfgs))
    else:
        reports = [_run_one(c) for c in cfgs]
    emit_report(reports, args.out)
    print(report_rows(reports), end="")
    return _report_failures(reports)


def cmd_properties(args) -> int:
    suite = property_suite(args.seed)
    for name, res in suite.results.items():
        print(f"{'PASS' if res.passed else 'FAIL'} {name} ({res.trials} trials)")
        if res.counterexample:
            print(f"    counterexample: {res.counterexample}", file=sys.stderr)
    if args.out:
        d = Path(args.out)
        d.mkdir(parents=True, exist_ok=True)
        (d / "properties.json").write_text(json.dumps(suite.to_dict(), indent=2))
    return EXIT_OK if suite.all_passed else EXIT_ASSERTION


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "list":
            return cmd_list()
        if args.command == "run":
            return cmd_run(args)
        if args.command == "sweep":
            return cmd_sweep(args)
        return cmd_properties(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
