"""Command-line interface.

``phasepi estimate``  estimate the nonzero proportion from a z file and a correlation CSV
``phasepi simulate``  run a grid of Monte-Carlo scenarios and write a bias / std table
``phasepi spectrum``  list the leading eigenvalues of a correlation matrix and k_delta

Configuration files are JSON objects with the ``RunConfig`` fields; unknown
keys are rejected. Exit codes: 0 success, 1 I/O error, 2 invalid input,
3 partial failure (rejected scenarios).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import itertools
import json
import math
import os
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import __version__
from .cppls import McpConfig
from .errors import NumericalError, ValidationError
from .ftm import PhaseConfig
from .pipeline import estimate_pi
from .simgen import SimScenario, default_threads, run_scenario
from .spectral import choose_k, eigh_sym, validate_correlation

EXIT_OK, EXIT_IO, EXIT_INVALID, EXIT_PARTIAL = 0, 1, 2, 3

SIM_COLUMNS = ("kind", "pi", "mu_star", "m", "reps", "seed", "estimator", "bias", "std_dev")
SPECTRUM_DELTAS = (0.3, 0.5, 0.7)
THREADS_ENV = "PHASEPI_THREADS"


class InputError(Exception):
    """A file could not be read or written."""


@dataclass(frozen=True)
class RunConfig:
    delta: float = 0.5
    mcp: McpConfig = field(default_factory=McpConfig)
    phase: PhaseConfig = field(default_factory=PhaseConfig)
    threads: Union[int, str] = 1
    seed: int = 0
    output_format: str = "csv"

    @property
    def gamma(self) -> float:
        return self.phase.gamma

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValidationError(f"delta must lie in (0, 1), got {self.delta}")
        if self.threads != "auto" and (not isinstance(self.threads, int) or isinstance(self.threads, bool)
                                       or self.threads < 1):
            raise ValidationError(f"threads must be a positive integer or 'auto', got {self.threads!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or not 0 <= self.seed < 2**64:
            raise ValidationError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")
        if self.output_format not in ("csv", "json"):
            raise ValidationError(f"output_format must be 'csv' or 'json', got {self.output_format!r}")

    def resolved_threads(self) -> int:
        """Thread count after applying the environment override."""
        if THREADS_ENV in os.environ:
            return default_threads()
        if self.threads == "auto":
            return os.cpu_count() or 1
        return int(self.threads)

    @classmethod
    def from_mapping(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ValidationError("config must be a JSON object")
        data = dict(data)
        top = {f.name for f in dataclasses.fields(cls)} | {"gamma"}
        _reject_unknown(data, top, "config")
        mcp = _sub_config(McpConfig, data.pop("mcp", {}), "mcp")
        phase_data = dict(data.pop("phase", {}) or {})
        if "gamma" in data:
            if "gamma" in phase_data and phase_data["gamma"] != data["gamma"]:
                raise ValidationError("gamma given both at top level and under 'phase' with different values")
            phase_data["gamma"] = data.pop("gamma")
        phase = _sub_config(PhaseConfig, phase_data, "phase")
        if "delta" in data:
            _number(data["delta"], "delta")
        return cls(mcp=mcp, phase=phase, **data)

    def as_dict(self) -> dict:
        return {
            "delta": self.delta,
            "gamma": self.gamma,
            "mcp": dataclasses.asdict(self.mcp),
            "phase": dataclasses.asdict(self.phase),
            "threads": self.threads,
            "seed": self.seed,
            "output_format": self.output_format,
        }


def _reject_unknown(data: dict, allowed, where: str) -> None:
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ValidationError(f"unknown {where} key(s): {', '.join(unknown)}")


def _number(value, name):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"{name} must be a number, got {value!r}")
    return value


def _sub_config(cls, data, where):
    if not isinstance(data, dict):
        raise ValidationError(f"'{where}' must be a JSON object")
    _reject_unknown(data, {f.name for f in dataclasses.fields(cls)}, where)
    for key, value in data.items():
        _number(value, f"{where}.{key}")
    return cls(**data)


# ---------------------------------------------------------------- file I/O


def _read_text(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from exc


def load_json(path):
    text = _read_text(path)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path} is not valid JSON: {exc}") from exc


def load_config(path: Optional[str]) -> RunConfig:
    return RunConfig() if path is None else RunConfig.from_mapping(load_json(path))


def load_vector(path) -> np.ndarray:
    """One real per line, or a single CSV column."""
    rows = [r for r in csv.reader(io.StringIO(_read_text(path))) if r and any(c.strip() for c in r)]
    if any(len(r) != 1 for r in rows):
        raise ValidationError(f"{path}: expected one value per line")
    try:
        return np.array([float(r[0]) for r in rows])
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def load_matrix(path) -> np.ndarray:
    """Dense comma-separated matrix, no header, row-major."""
    rows = [r for r in csv.reader(io.StringIO(_read_text(path))) if r]
    widths = {len(r) for r in rows}
    if len(widths) > 1:
        raise ValidationError(f"{path}: ragged rows (lengths {sorted(widths)})")
    try:
        return np.array([[float(c) for c in r] for r in rows]).reshape(len(rows), -1 if rows else 0)
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def _write_text(path, text: str) -> None:
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _fmt(value) -> str:
    # repr round-trips floats exactly; NaN becomes the empty field
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in header])
    return buf.getvalue()


def _json_text(payload) -> str:
    def clean(v):
        if isinstance(v, float) and not math.isfinite(v):
            return None
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        return v

    return json.dumps(clean(payload), indent=2) + "\n"


# ---------------------------------------------------------------- commands


def cmd_estimate(args) -> int:
    cfg = load_config(args.config)
    z = load_vector(args.z)
    sigma = load_matrix(args.sigma)
    m = z.shape[0]
    if sigma.shape != (m, m):
        raise ValidationError(
            f"dimension mismatch: z has {m} entries, sigma is {sigma.shape[0]}x{sigma.shape[1] if sigma.ndim == 2 else 0}"
        )
    res = estimate_pi(z, sigma, cfg.delta, cfg.mcp, cfg.phase)
    record = res.as_dict()
    for note in res.warnings:
        print(f"warning: {note}", file=sys.stderr)
    if cfg.output_format == "json":
        sys.stdout.write(_json_text({"version": __version__, "result": record}))
    else:
        record = dict(record, warnings="; ".join(record["warnings"]), version=__version__)
        sys.stdout.write(_csv_text(list(record), [record]))
    return EXIT_OK


_SCENARIO_KEYS = {"kind", "pi", "mu_star", "m", "reps", "seed"}
_GRID_KEYS = {"kinds", "pi", "mu_star", "m", "reps", "seed"}


def _as_list(value):
    return list(value) if isinstance(value, (list, tuple)) else [value]


def expand_grid(spec: dict) -> list:
    """Scenario entries (raw dicts) from an explicit list and/or a product grid, in declaration order."""
    if not isinstance(spec, dict):
        raise ValidationError("grid file must be a JSON object")
    _reject_unknown(spec, {"config", "scenarios", "grid"}, "grid file")
    entries = list(spec.get("scenarios") or [])
    grid = spec.get("grid")
    if grid is not None:
        if not isinstance(grid, dict):
            raise ValidationError("'grid' must be a JSON object")
        _reject_unknown(grid, _GRID_KEYS, "grid")
        for key in ("kinds", "pi", "mu_star"):
            if key not in grid:
                raise ValidationError(f"'grid' needs '{key}'")
        for kind, pi, mu_star, m in itertools.product(
            _as_list(grid["kinds"]), _as_list(grid["pi"]), _as_list(grid["mu_star"]), _as_list(grid.get("m", 2000))
        ):
            entry = {"kind": kind, "pi": pi, "mu_star": mu_star, "m": m}
            for key in ("reps", "seed"):
                if key in grid:
                    entry[key] = grid[key]
            entries.append(entry)
    return entries


def parse_scenario(entry, default_seed: int) -> SimScenario:
    if not isinstance(entry, dict):
        raise ValidationError(f"scenario must be a JSON object, got {entry!r}")
    _reject_unknown(entry, _SCENARIO_KEYS, "scenario")
    for key in ("kind", "pi", "mu_star"):
        if key not in entry:
            raise ValidationError(f"scenario is missing '{key}'")
    for key in ("pi", "mu_star", "m", "reps", "seed"):
        if key in entry:
            _number(entry[key], key)
    return SimScenario(
        kind=entry["kind"],
        pi=float(entry["pi"]),
        mu_star=float(entry["mu_star"]),
        m=entry.get("m", 2000),
        replications=entry.get("reps", 100),
        seed=entry.get("seed", default_seed),
    )


def cmd_simulate(args) -> int:
    spec = load_json(args.grid)
    cfg = RunConfig.from_mapping(spec.get("config", {}) if isinstance(spec, dict) else {})
    if args.config is not None:
        if isinstance(spec, dict) and "config" in spec:
            raise ValidationError("config given both in the grid file and with --config")
        cfg = load_config(args.config)
    threads = cfg.resolved_threads()

    scenarios, rejects = [], []
    for index, entry in enumerate(expand_grid(spec)):
        try:
            scenarios.append(parse_scenario(entry, cfg.seed))
        except ValidationError as exc:
            rejects.append({"index": index, "scenario": entry, "reason": str(exc)})

    rows, failures = [], []
    for scenario in scenarios:
        summary = run_scenario(scenario, cfg.delta, cfg.mcp, cfg.phase, threads=threads)
        rows.extend(summary.rows())
        for rep, message in summary.failures:
            failures.append({"scenario": scenario.kind.value, "pi": scenario.pi, "mu_star": scenario.mu_star,
                             "replication": rep, "error": message})

    if cfg.output_format == "json":
        text = _json_text({"version": __version__, "config": cfg.as_dict(), "rows": rows,
                           "rejects": rejects, "failures": failures})
    else:
        text = _csv_text(SIM_COLUMNS, rows)
    _write_text(args.out, text)

    for f in failures:
        print(f"replication failure: {json.dumps(f)}", file=sys.stderr)
    if not scenarios and not rejects:
        print("error: no scenarios given", file=sys.stderr)
        return EXIT_PARTIAL
    if rejects:
        print("rejected scenarios:", file=sys.stderr)
        for r in rejects:
            print(f"  [{r['index']}] {json.dumps(r['scenario'])}: {r['reason']}", file=sys.stderr)
        _write_text(f"{args.out}.rejects.json", _json_text(rejects))
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_spectrum(args) -> int:
    cfg = load_config(args.config)
    sigma = validate_correlation(load_matrix(args.sigma))
    spectrum = eigh_sym(sigma)
    top = args.top
    if top < 1:
        raise ValidationError(f"--top must be positive, got {top}")
    if top > spectrum.m:
        print(f"warning: --top {top} exceeds m = {spectrum.m}; showing {spectrum.m}", file=sys.stderr)
        top = spectrum.m
    eig = [float(v) for v in spectrum.eigenvalues[:top]]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        ks = {d: choose_k(spectrum, d) for d in SPECTRUM_DELTAS}
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    if cfg.output_format == "json":
        sys.stdout.write(_json_text({
            "version": __version__,
            "m": spectrum.m,
            "eigenvalues": eig,
            "k_delta": {str(d): k for d, k in ks.items()},
        }))
    else:
        out = _csv_text(["rank", "eigenvalue"], [{"rank": i + 1, "eigenvalue": v} for i, v in enumerate(eig)])
        out += "\n" + _csv_text(["delta", "k"], [{"delta": d, "k": k} for d, k in ks.items()])
        sys.stdout.write(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phasepi", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="estimate the nonzero proportion")
    p.add_argument("--z", required=True, help="z values, one per line")
    p.add_argument("--sigma", required=True, help="correlation matrix, dense CSV without header")
    p.add_argument("--config", help="JSON run configuration")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("simulate", help="run a grid of simulation scenarios")
    p.add_argument("--grid", required=True, help="JSON file with 'scenarios' and/or 'grid' (and optional 'config')")
    p.add_argument("--out", required=True, help="output table path")
    p.add_argument("--config", help="JSON run configuration (instead of the grid file's 'config')")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("spectrum", help="leading eigenvalues and k_delta of a correlation matrix")
    p.add_argument("--sigma", required=True, help="correlation matrix, dense CSV without header")
    p.add_argument("--top", type=int, default=20, help="number of eigenvalues to list (default 20)")
    p.add_argument("--config", help="JSON run configuration (only output_format is used)")
    p.set_defaults(func=cmd_spectrum)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValidationError, NumericalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
