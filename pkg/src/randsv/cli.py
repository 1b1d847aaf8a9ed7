"""Command-line front end: config parsing, experiment dispatch, report emission.

Reports are written atomically (temp file + rename) and contain no timing or
worker-count information, so a rerun with the same config and seed produces
byte-identical files at any concurrency level. Exit codes: 0 success, 1
identity-suite residual above tolerance, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import __version__
from .biortho import IdentityReport, identity_suite
from .ensembles import (
    EntryDistribution,
    SeedPath,
    make_spec,
    validate_assumption,
)
from .experiments import (
    ConfigError,
    DistanceReport,
    ExperimentConfig,
    ProbeReport,
    ScalingReport,
    TailEstimate,
    TailReport,
    concentration_probe,
    distance_experiment,
    minsv_lowerbound_experiment,
    sandwich_experiment,
    scaling_experiment,
    tail_experiment,
)
from .nets import EpsNet, build_net, covering_check

SUBCOMMANDS = (
    "verify", "scaling", "tail", "sandwich", "minsv",
    "distance", "probe", "net", "validate-ensemble",
)

# config-file schema: key -> (type tag, default); lists are comma-separated
CONFIG_SCHEMA = {
    "ensemble": ("str", "gaussian"),
    "n": ("int", 64),
    "m": ("int", None),
    "trials": ("int", 100),
    "seed": ("int", 1),
    "l": ("int_list", ()),
    "t": ("float_list", ()),
    "eps": ("float_list", ()),
    "c1": ("float", 1.0),
    "c_low": ("float", 0.05),
    "c_high": ("float", 20.0),
    "workers": ("int", 1),
    "out": ("str", None),
    "format": ("str", "csv"),
    "tolerance": ("float", 1e-8),
    "mode": ("str", None),
    "d": ("int", None),
    "k": ("int", 8),
    "s": ("float", 2.0),
    "decay": ("float", 1.0),
    "budget": ("int", 100_000),
    "samples": ("int", 1_000_000),
    "s0": ("float", 1.0),
    "p": ("float", 0.0),
}

_SECTIONS = ("experiment",)

# keys that describe execution, not the experiment; kept out of emitted files
_VOLATILE_KEYS = ("workers", "out", "format")


@dataclass(frozen=True)
class RunManifest:
    subcommand: str
    tool_version: str
    master_seed: int
    config: dict
    outputs: tuple[str, ...]
    resamples: int
    wall_time_s: float

    def file_fields(self) -> dict:
        """The deterministic subset embedded in JSON reports."""
        cfg = {k: v for k, v in self.config.items() if k not in _VOLATILE_KEYS}
        return {
            "subcommand": self.subcommand,
            "tool_version": self.tool_version,
            "master_seed": self.master_seed,
            "config": cfg,
            "resamples": self.resamples,
        }


def _parse_scalar(key, kind, raw, where):
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "int_list":
            return tuple(int(x) for x in raw.split(",") if x.strip())
        if kind == "float_list":
            return tuple(float(x) for x in raw.split(",") if x.strip())
        return raw
    except ValueError:
        raise ConfigError(
            f"{where}: value {raw!r} for key {key!r} is not a valid {kind}"
        ) from None


def parse_config_text(text: str) -> dict:
    """Parse the flat sectioned key=value format into validated values.

    Unknown sections or keys, and malformed values, raise ConfigError naming
    the offending key and line.
    """
    values = {k: default for k, (_, default) in CONFIG_SCHEMA.items()}
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SECTIONS:
                raise ConfigError(f"line {line_no}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected key = value, got {raw_line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_SCHEMA:
            raise ConfigError(f"line {line_no}: unknown key {key!r}")
        values[key] = _parse_scalar(key, CONFIG_SCHEMA[key][0], raw, f"line {line_no}")
    _validate_values(values)
    return values


def _validate_values(values):
    try:
        EntryDistribution.from_name(values["ensemble"])
    except ValueError as exc:
        raise ConfigError(f"unknown distribution kind: {exc}") from None
    if values["format"] not in ("csv", "json"):
        raise ConfigError(f"format must be csv or json, got {values['format']!r}")
    for key in ("n", "trials", "workers"):
        if values[key] is not None and values[key] < 1:
            raise ConfigError(f"{key} must be at least 1, got {values[key]}")
    if values["seed"] < 0:
        raise ConfigError("seed must be a non-negative 64-bit integer")
    if values["tolerance"] <= 0.0:
        raise ConfigError("tolerance must be positive")


def config_from_values(values: dict) -> ExperimentConfig:
    dist = EntryDistribution.from_name(values["ensemble"])
    n = values["n"]
    m = values["m"] if values["m"] is not None else n
    try:
        spec = make_spec(dist, n, m, conc_level=values["p"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return ExperimentConfig(
        spec=spec,
        trials=values["trials"],
        master_seed=values["seed"],
        l_values=tuple(values["l"]),
        t_values=tuple(values["t"]),
        eps_values=tuple(values["eps"]),
        out_path=values["out"],
        out_format=values["format"],
    )


def parse_config(text: str) -> ExperimentConfig:
    """Parse config text straight to an ExperimentConfig (see parse_config_text)."""
    return config_from_values(parse_config_text(text))


def format_config(cfg: ExperimentConfig) -> str:
    """Emit config text that parses back to an equal ExperimentConfig."""
    lines = ["[experiment]"]
    lines.append(f"ensemble = {cfg.spec.dist.name}")
    lines.append(f"n = {cfg.spec.rows}")
    lines.append(f"m = {cfg.spec.cols}")
    lines.append(f"trials = {cfg.trials}")
    lines.append(f"seed = {cfg.master_seed}")
    if cfg.spec.conc_level:
        lines.append(f"p = {cfg.spec.conc_level!r}")
    if cfg.l_values:
        lines.append("l = " + ",".join(str(l) for l in cfg.l_values))
    if cfg.t_values:
        lines.append("t = " + ",".join(repr(t) for t in cfg.t_values))
    if cfg.eps_values:
        lines.append("eps = " + ",".join(repr(e) for e in cfg.eps_values))
    if cfg.out_path:
        lines.append(f"out = {cfg.out_path}")
    lines.append(f"format = {cfg.out_format}")
    return "\n".join(lines) + "\n"


def _atomic_write(path: str, data: str):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".randsv-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _format_cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_csv(records: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if records:
        header = list(records[0].keys())
        writer.writerow(header)
        for rec in records:
            writer.writerow([_format_cell(rec[k]) for k in header])
    return buf.getvalue()


def render_json(records: list[dict], manifest_fields: dict) -> str:
    return json.dumps({"manifest": manifest_fields, "records": records}, indent=2) + "\n"


def emit_report(records: list[dict], out_format: str, path: str | None,
                manifest_fields: dict | None = None) -> str:
    """Render the records in the requested format; write atomically when a
    path is given. Returns the rendered text either way."""
    if out_format == "csv":
        text = render_csv(records)
    elif out_format == "json":
        text = render_json(records, manifest_fields or {})
    else:
        raise ConfigError(f"format must be csv or json, got {out_format!r}")
    if path is not None:
        _atomic_write(path, text)
    return text


def _tail_records(n, l, estimates) -> list[dict]:
    return [
        {
            "n": n,
            "l": l,
            "t": e.threshold,
            "successes": e.successes,
            "trials": e.trials,
            "point": e.point,
            "ci_low": e.ci_low,
            "ci_high": e.ci_high,
            "resamples": e.resamples,
        }
        for e in estimates
    ]


@dataclass(frozen=True)
class AssumptionRun:
    """validate-ensemble output bundled with its identifying parameters."""

    report: object
    kind: str
    samples: int


def report_records(report) -> list[dict]:
    """Flatten any report object into uniform CSV/JSON records."""
    if isinstance(report, AssumptionRun):
        rep = report.report
        return [{
            "ensemble": report.kind,
            "samples": report.samples,
            "mean_ok": rep.mean_ok,
            "var_ok": rep.var_ok,
            "psi2_ok": rep.psi2_ok,
            "conc_ok": rep.conc_ok,
            "sample_mean": rep.sample_mean,
            "sample_second_moment": rep.sample_second_moment,
            "psi2": rep.psi2,
            "witness_s": rep.witness_s,
        }]
    if isinstance(report, ScalingReport):
        return [
            {
                "n": report.n,
                "l": c.l,
                "trials": c.trials,
                "median_sv": c.median_sv,
                "ratio": c.ratio,
                "q25": c.q25,
                "q75": c.q75,
            }
            for c in report.cells
        ]
    if isinstance(report, TailReport):
        return _tail_records(report.n, report.l, report.estimates)
    if isinstance(report, DistanceReport):
        return _tail_records(report.ambient_dim, report.codim, report.estimates)
    if isinstance(report, ProbeReport):
        return _tail_records(report.estimate.trials, 0, [report.estimate])
    if isinstance(report, IdentityReport):
        return [
            {
                "n": report.n,
                "l": c.split,
                "trial": c.trial,
                "resamples": c.resamples,
                "gram": c.gram,
                "dual_norm": c.dual_norm,
                "chain": c.chain,
                "hs": c.hs,
                "op": c.op,
            }
            for c in report.cells
        ]
    if isinstance(report, EpsNet):
        return [
            {f"x{i}": float(p[i]) for i in range(report.dim)}
            for p in report.points
        ]
    raise TypeError(f"no record mapping for {type(report).__name__}")


def _resamples_of(report) -> int:
    if isinstance(report, DistanceReport):
        return report.resamples
    if isinstance(report, IdentityReport):
        return sum(c.resamples for c in report.cells)
    return 0


def run(subcommand: str, values: dict) -> RunManifest:
    """Execute one subcommand with validated config values.

    Returns the manifest; raises ConfigError (exit 2 at the CLI) for bad
    configuration and IdentityFailure (exit 1) when the verify suite exceeds
    its tolerance.
    """
    if subcommand not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    started = time.monotonic()
    workers = values["workers"]
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    map_fn = pool.map if pool is not None else map
    extras: dict = {}
    try:
        report, extras = _dispatch(subcommand, values, map_fn)
    finally:
        if pool is not None:
            pool.shutdown()

    records = report_records(report)
    config_echo = {k: values[k] for k in CONFIG_SCHEMA if values[k] is not None}
    config_echo["subcommand"] = subcommand
    manifest = RunManifest(
        subcommand=subcommand,
        tool_version=__version__,
        master_seed=values["seed"],
        config={**config_echo, **extras},
        outputs=(values["out"],) if values["out"] else (),
        resamples=_resamples_of(report),
        wall_time_s=time.monotonic() - started,
    )
    text = emit_report(records, values["format"], values["out"], manifest.file_fields())
    if not values["out"]:
        sys.stdout.write(text)
    if subcommand == "verify" and report.max_residual > values["tolerance"]:
        raise IdentityFailure(
            f"identity residual {report.max_residual:.3e} exceeds "
            f"tolerance {values['tolerance']:.1e}",
            manifest,
        )
    return manifest


class IdentityFailure(RuntimeError):
    """The verify suite found a residual above the requested tolerance."""

    def __init__(self, message, manifest):
        super().__init__(message)
        self.manifest = manifest


def _default_splits(n):
    return tuple(sorted({1, n // 4, n // 2, n - 1} - {0}))


def _decay_matrix(n, decay):
    return np.diag(decay ** np.arange(n, dtype=np.float64))


def _dispatch(subcommand, values, map_fn):
    cfg = config_from_values(values)
    dist = cfg.spec.dist
    seed_path = SeedPath(values["seed"], 0)
    n = values["n"]

    if subcommand == "verify":
        splits = cfg.l_values or _default_splits(n)
        report = identity_suite(cfg.spec, splits, cfg.trials, seed_path, map_fn)
        return report, {}

    if subcommand == "scaling":
        if not cfg.l_values:
            raise ConfigError("scaling requires --l")
        report = scaling_experiment(cfg, map_fn)
        return report, {
            "loglog_slope": report.loglog_slope,
            "loglog_intercept": report.loglog_intercept,
        }

    if subcommand == "tail":
        if len(cfg.l_values) != 1:
            raise ConfigError("tail requires exactly one --l value")
        report = tail_experiment(cfg, cfg.l_values[0], values["c1"], map_fn)
        return report, {"fitted_c2": report.fitted_c2}

    if subcommand == "sandwich":
        if len(cfg.l_values) != 1:
            raise ConfigError("sandwich requires exactly one --l value")
        est = sandwich_experiment(cfg, cfg.l_values[0], values["c_low"], values["c_high"], map_fn)
        report = TailReport(n=n, l=cfg.l_values[0], c1=values["c_high"],
                            estimates=(est,), fitted_c2=None)
        return report, {}

    if subcommand == "minsv":
        if values["m"] is None:
            raise ConfigError("minsv requires --m (column count)")
        ests = minsv_lowerbound_experiment(cfg, map_fn)
        report = TailReport(n=n, l=values["m"], c1=0.0, estimates=ests, fitted_c2=None)
        return report, {}

    if subcommand == "distance":
        if values["m"] is None:
            raise ConfigError("distance requires --m (codimension)")
        report = distance_experiment(dist, n, values["m"], cfg.eps_values,
                                     cfg.trials, values["seed"], map_fn=map_fn)
        return report, {"median_ratio": report.median_ratio}

    if subcommand == "probe":
        mode = values["mode"]
        if mode is None:
            raise ConfigError("probe requires --mode")
        if mode in ("sum", "projection", "anisotropic", "vector_norm") and len(values["t"]) != 1:
            raise ConfigError(f"probe mode {mode!r} requires exactly one --t value")
        params: dict = {"dist": dist}
        if mode == "sum":
            params["coefficients"] = np.full(n, 1.0 / math.sqrt(n))
            params["t"] = values["t"][0]
        elif mode == "projection":
            if values["d"] is None:
                raise ConfigError("projection probe requires --d (projection rank)")
            params.update(ambient_dim=n, proj_dim=values["d"], t=values["t"][0])
        elif mode == "anisotropic":
            params.update(matrix=_decay_matrix(n, values["decay"]), t=values["t"][0])
        elif mode == "vector_norm":
            params.update(matrix=_decay_matrix(n, values["decay"]), t=values["t"][0])
        else:  # product_norm
            params.update(matrix=_decay_matrix(n, values["decay"]),
                          k=values["k"], s=values["s"],
                          t=values["t"][0] if values["t"] else 1.0)
        report = concentration_probe(mode, params, cfg.trials, values["seed"], map_fn)
        return report, {"probe_mode": mode, "radius": report.radius,
                        **{f"detail_{k}": v for k, v in report.detail.items()}}

    if subcommand == "net":
        if len(cfg.eps_values) != 1:
            raise ConfigError("net requires exactly one --eps value")
        if values["d"] is None:
            raise ConfigError("net requires --d (sphere dimension)")
        net = build_net(values["d"], cfg.eps_values[0], seed_path, values["budget"])
        cover = covering_check(net, max(values["samples"] // 100, 1000), seed_path.split(1))
        return net, {
            "net_size": net.size,
            "cardinality_bound": net.cardinality_bound(),
            "covering_radius": cover,
        }

    # validate-ensemble
    rep = validate_assumption(cfg.spec, values["s0"], values["samples"], seed_path)
    return AssumptionRun(rep, dist.name, values["samples"]), {}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="randsv",
        description="Singular-value experiments and dual-system verification "
                    "for i.i.d. random matrices.",
    )
    parser.add_argument("--version", action="version", version=f"randsv {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", metavar="PATH", help="config file (overridden by flags)")
        p.add_argument("--seed", type=int, metavar="U64")
        p.add_argument("--trials", type=int, metavar="N")
        p.add_argument("--n", type=int, metavar="N")
        p.add_argument("--m", type=int, metavar="N")
        p.add_argument("--l", metavar="L[,L...]")
        p.add_argument("--t", metavar="V[,V...]")
        p.add_argument("--eps", metavar="V[,V...]")
        p.add_argument("--ensemble", metavar="NAME")
        p.add_argument("--workers", type=int, metavar="N")
        p.add_argument("--out", metavar="PATH")
        p.add_argument("--format", choices=("csv", "json"))
        p.add_argument("--tolerance", type=float, metavar="REAL")
        p.add_argument("--c1", type=float, metavar="REAL")
        p.add_argument("--c-low", dest="c_low", type=float, metavar="REAL")
        p.add_argument("--c-high", dest="c_high", type=float, metavar="REAL")
        p.add_argument("--mode", choices=("sum", "projection", "anisotropic",
                                          "vector_norm", "product_norm"))
        p.add_argument("--d", type=int, metavar="N")
        p.add_argument("--k", type=int, metavar="N")
        p.add_argument("--s", type=float, metavar="REAL")
        p.add_argument("--decay", type=float, metavar="REAL")
        p.add_argument("--budget", type=int, metavar="N")
        p.add_argument("--samples", type=int, metavar="N")
        p.add_argument("--s0", type=float, metavar="REAL")
        p.add_argument("--p", type=float, metavar="REAL")
    return parser


_LIST_FLAGS = {"l": "int_list", "t": "float_list", "eps": "float_list"}


def resolve_values(args: argparse.Namespace) -> dict:
    """Merge config-file values with command-line flags (flags win)."""
    if args.config:
        try:
            with open(args.config) as fh:
                values = parse_config_text(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
    else:
        values = {k: default for k, (_, default) in CONFIG_SCHEMA.items()}
    for key in CONFIG_SCHEMA:
        flag = getattr(args, key, None)
        if flag is None:
            continue
        if key in _LIST_FLAGS:
            values[key] = _parse_scalar(key, _LIST_FLAGS[key], flag, 0)
        else:
            values[key] = flag
    _validate_values(values)
    return values


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        values = resolve_values(args)
        manifest = run(args.subcommand, values)
    except ConfigError as exc:
        print(f"randsv: config error: {exc}", file=sys.stderr)
        return 2
    except IdentityFailure as exc:
        print(f"randsv: {exc}", file=sys.stderr)
        return 1
    summary = {
        "subcommand": manifest.subcommand,
        "outputs": list(manifest.outputs),
        "resamples": manifest.resamples,
        "wall_time_s": round(manifest.wall_time_s, 3),
    }
    print(f"randsv: done {json.dumps(summary)}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
