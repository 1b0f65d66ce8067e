"""Command-line front end: rates, phase split, Bloch evolution, oracle, sweeps.

    blangevin <rates|phase|evolve|oracle|sweep> --config PATH
              [--set key=value]... [--output PATH] [--format csv|json]

Configs are TOML with sections [model], [protocol], [integrator], [oracle],
[sweep], [output]; dotted-path --set overrides are applied before
validation.  Units: B0 = 1 defines the frequency scale, everything else is
dimensionless in those units.

Outputs are deterministic: records carry a config fingerprint (hash of the
canonical resolved config) and a timestamp only when SOURCE_DATE_EPOCH is
set, so identical config + seed reproduce byte-identical files.  Exit
codes: 0 success, 2 config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Optional

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import __version__
from .adiabatic import FieldProtocol, superposition_state
from .bath import discretize_bath
from .bloch import (
    PhaseResult,
    build_generator,
    check_adiabatic_window,
    evolve,
    extract_phases,
)
from .errors import BlangevinError, ConfigError, NumericalError
from .oracle import (
    average_oracle_results,
    compare_with_langevin,
    propagate_exact,
    thermal_initial_state,
)
from .spectral import RateSet, SpectralModel, compute_rate_set

DEFAULTS = {
    "model": {"beta": math.inf},
    "protocol": {"B0": 1.0},
    "integrator": {"dt": None, "t_final": None, "s0": [1.0, 0.0, 0.0],
                   "record_every": 1},
    "oracle": {
        "modes": 6,
        "n_max": 2,
        "grid": "resonance_refined",
        "samples": 32,
        "seed": 1234,
        "steps_per_cycle": None,
        "t_final": None,
        "frame": "lab",
    },
    "output": {"path": None, "format": "json"},
}

EVOLVE_CSV_HEADER = ["t", "s_x", "s_y", "s_z", "abs_s_plus", "arg_s_plus"]
SWEEP_CSV_HEADER = ["parameter", "value", "metric", "metric_value"]
SWEEP_METRICS = [
    "gamma_perp", "gamma_perp_vac", "gamma_par", "lambda0", "delta_lambda",
    "xi", "prob_vt", "phi_d", "phi_g", "phi_total", "phi_berry_ideal",
    "correction_fraction",
]


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    """Validated run configuration plus the resolved raw dictionary."""

    model: SpectralModel
    protocol: FieldProtocol
    integrator: dict
    oracle: dict
    sweep: Optional[dict]
    output: dict
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def fingerprint(self) -> str:
        return config_fingerprint(self.raw)


def config_fingerprint(raw: dict) -> str:
    """Content hash of the resolved config, stable under key reordering."""
    canon = json.dumps(raw, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _parse_override(text: str) -> tuple[str, Any]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, _, value = text.partition("=")
    key = key.strip()
    try:
        parsed = tomllib.loads(f"v = {value.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        parsed = value.strip()
    return key, parsed


def _set_dotted(raw: dict, path: str, value: Any) -> None:
    parts = path.split(".")
    node = raw
    for p in parts[:-1]:
        if p not in node or not isinstance(node[p], dict):
            node[p] = {}
        node = node[p]
    node[parts[-1]] = value


def _get_dotted(raw: dict, path: str) -> Any:
    node = raw
    for p in path.split("."):
        if not isinstance(node, dict) or p not in node:
            raise ConfigError(f"unknown parameter path {path!r}")
        node = node[p]
    return node


def _resolve(raw: dict) -> dict:
    resolved: dict = {}
    known = set(DEFAULTS) | {"sweep"}
    for section in raw:
        if section not in known:
            raise ConfigError(f"unknown config section [{section}]")
    for section, defaults in DEFAULTS.items():
        block = dict(defaults)
        block.update(raw.get(section, {}))
        resolved[section] = block
    if "sweep" in raw:
        resolved["sweep"] = dict(raw["sweep"])
    return resolved


def build_config(raw: dict) -> RunConfig:
    """Validate a raw (already resolved) config dictionary."""
    resolved = _resolve(raw)
    mblock = dict(resolved["model"])
    try:
        kind = mblock.pop("kind")
        alpha = mblock.pop("alpha")
        omega_c = mblock.pop("omega_c")
    except KeyError as exc:
        raise ConfigError(f"[model] is missing required key {exc}") from None
    beta = mblock.pop("beta", math.inf)
    if isinstance(beta, str):
        if beta.lower() not in ("inf", "infinity"):
            raise ConfigError(f"bad beta value {beta!r}")
        beta = math.inf
    model = SpectralModel(
        kind=kind, alpha=float(alpha), omega_c=float(omega_c), beta=float(beta),
        center=mblock.pop("center", None), width=mblock.pop("width", None),
    )
    if mblock:
        raise ConfigError(f"unknown [model] keys: {sorted(mblock)}")

    pblock = dict(resolved["protocol"])
    try:
        protocol = FieldProtocol(
            b0=float(pblock.pop("B0")),
            theta=float(pblock.pop("theta")),
            omega_drive=float(pblock.pop("Omega")),
        )
    except KeyError as exc:
        raise ConfigError(f"[protocol] is missing required key {exc}") from None
    if pblock:
        raise ConfigError(f"unknown [protocol] keys: {sorted(pblock)}")

    for section in ("integrator", "oracle", "output"):
        extra = set(resolved[section]) - set(DEFAULTS[section])
        if extra:
            raise ConfigError(f"unknown [{section}] keys: {sorted(extra)}")
    if resolved["oracle"]["grid"] not in ("linear", "resonance_refined"):
        raise ConfigError(f"unknown oracle grid {resolved['oracle']['grid']!r}")
    if resolved["oracle"]["frame"] not in ("lab", "adiabatic"):
        raise ConfigError(f"unknown oracle frame {resolved['oracle']['frame']!r}")

    sweep = resolved.get("sweep")
    if sweep is not None:
        if "parameter" not in sweep or "values" not in sweep:
            raise ConfigError("[sweep] needs 'parameter' and 'values'")
        if not isinstance(sweep["values"], list) or not sweep["values"]:
            raise ConfigError("[sweep] values must be a non-empty list")
        _get_dotted(raw, sweep["parameter"])  # path must exist
    out = resolved["output"]
    if out["format"] not in ("csv", "json"):
        raise ConfigError(f"unknown output format {out['format']!r}")
    # store the resolved dict (defaults applied) for a stable fingerprint
    finger_raw = {k: v for k, v in resolved.items()}
    return RunConfig(
        model=model,
        protocol=protocol,
        integrator=resolved["integrator"],
        oracle=resolved["oracle"],
        sweep=sweep,
        output=out,
        raw=finger_raw,
    )


def load_config(path: str, overrides: Optional[list[str]] = None) -> RunConfig:
    """Parse a TOML config file and apply dotted-path overrides."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error in {path}: {exc}") from None
    for text in overrides or []:
        key, value = _parse_override(text)
        _set_dotted(raw, key, value)
    return build_config(raw)


# ---------------------------------------------------------------------------
# Result records
# ---------------------------------------------------------------------------


def _timestamp() -> Optional[str]:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is None:
        return None
    return (
        datetime.datetime.fromtimestamp(int(epoch), tz=datetime.timezone.utc)
        .isoformat()
    )


@dataclass
class ResultRecord:
    """Machine-readable output of one command."""

    fingerprint: str
    command: str
    timestamp: Optional[str]
    version: str
    payload: dict

    def to_dict(self) -> dict:
        return {
            "fingerprint": self.fingerprint,
            "command": self.command,
            "timestamp": self.timestamp,
            "version": self.version,
            **self.payload,
        }


def make_record(config: RunConfig, command: str, payload: dict) -> ResultRecord:
    return ResultRecord(
        fingerprint=config.fingerprint,
        command=command,
        timestamp=_timestamp(),
        version=__version__,
        payload=payload,
    )


def _rates_dict(rates: RateSet) -> dict:
    return {
        "gamma_perp": rates.gamma_perp,
        "gamma_perp_vac": rates.gamma_perp_vac,
        "gamma_par": rates.gamma_par,
        "lambda0": rates.lambda0,
        "delta_lambda": rates.delta_lambda,
        "xi": rates.xi,
        "prob_vt": rates.prob_vt,
        "gamma_perp_at_b0": rates.gamma_perp_at_b0,
    }


def _phases_dict(phases: PhaseResult) -> dict:
    return {
        "phi_d": phases.phi_d,
        "phi_g": phases.phi_g,
        "phi_total": phases.phi_total,
        "phi_berry_ideal": phases.phi_berry_ideal,
        "correction_fraction": phases.correction_fraction,
    }


def _write_json(record: ResultRecord, stream) -> None:
    stream.write(json.dumps(record.to_dict(), indent=2, sort_keys=True))
    stream.write("\n")


def _csv_metadata_lines(record: ResultRecord) -> list[str]:
    lines = [
        f"# blangevin {record.command} v{record.version}",
        f"# fingerprint: {record.fingerprint}",
    ]
    if record.timestamp is not None:
        lines.append(f"# timestamp: {record.timestamp}")
    return lines


def _open_output(config: RunConfig, cli_output: Optional[str]):
    path = cli_output or config.output.get("path")
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w", newline=""), True


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _write_metric_csv(record: ResultRecord, metrics: dict, stream) -> None:
    for line in _csv_metadata_lines(record):
        stream.write(line + "\n")
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["metric", "value"])
    for name, value in metrics.items():
        writer.writerow([name, repr(float(value))])


def cmd_rates(config: RunConfig, stream, fmt: str = "json") -> ResultRecord:
    rates = compute_rate_set(config.model, config.protocol)
    window = check_adiabatic_window(rates, config.protocol)
    record = make_record(
        config, "rates", {"rates": _rates_dict(rates), "window": asdict(window)}
    )
    print(f"rates for {config.model.kind} model (fingerprint {config.fingerprint})")
    for name, value in _rates_dict(rates).items():
        print(f"  {name:16s} {value: .12e}")
    print(window.summary())
    if fmt == "csv":
        _write_metric_csv(record, _rates_dict(rates), stream)
    else:
        _write_json(record, stream)
    return record


def cmd_phase(config: RunConfig, stream, fmt: str = "json") -> ResultRecord:
    phases = extract_phases(config.model, config.protocol)
    record = make_record(config, "phase", {"phases": _phases_dict(phases)})
    print(f"phase decomposition (fingerprint {config.fingerprint})")
    print(f"  phi_d           {phases.phi_d: .12e}")
    print(f"  phi_g           {phases.phi_g: .12e}")
    print(f"  phi_total       {phases.phi_total: .12e}")
    print(f"  phi_berry_ideal {phases.phi_berry_ideal: .12e}")
    print(f"  correction      {phases.correction_fraction: .12e}")
    if phases.window is not None:
        print(phases.window.summary())
    if fmt == "csv":
        _write_metric_csv(record, _phases_dict(phases), stream)
    else:
        _write_json(record, stream)
    return record


def _default_dt(gen) -> float:
    return 0.25 * 0.01 / gen.rate_scale


def cmd_evolve(config: RunConfig, stream, fmt: str) -> ResultRecord:
    rates = compute_rate_set(config.model, config.protocol)
    gen = build_generator(rates, config.protocol.omega0, config.protocol.theta)
    dt = config.integrator.get("dt") or _default_dt(gen)
    t_final = config.integrator.get("t_final") or config.protocol.period
    if not math.isfinite(t_final):
        raise ConfigError("evolve needs a finite t_final (Omega = 0 has no cycle)")
    s0 = [float(x) for x in config.integrator.get("s0", [1.0, 0.0, 0.0])]
    record_every = int(config.integrator.get("record_every", 1))
    traj = evolve(gen, s0, t_final, dt, record_every=record_every)
    arg = traj.arg_s_plus()
    record = make_record(
        config,
        "evolve",
        {
            "dt": traj.dt,
            "n_samples": int(traj.times.size),
            "final_state": traj.states[-1].tolist(),
            "final_arg_s_plus": float(arg[-1]),
        },
    )
    if fmt == "csv":
        for line in _csv_metadata_lines(record):
            stream.write(line + "\n")
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(EVOLVE_CSV_HEADER)
        abs_sp = traj.s_plus_abs()
        for i in range(traj.times.size):
            writer.writerow(
                [
                    repr(float(traj.times[i])),
                    repr(float(traj.states[i, 0])),
                    repr(float(traj.states[i, 1])),
                    repr(float(traj.states[i, 2])),
                    repr(float(abs_sp[i])),
                    repr(float(arg[i])),
                ]
            )
    else:
        record.payload["trajectory"] = {
            "t": traj.times.tolist(),
            "s": traj.states.tolist(),
            "arg_s_plus": arg.tolist(),
        }
        _write_json(record, stream)
    return record


def cmd_oracle(config: RunConfig, stream, fmt: str = "json") -> ResultRecord:
    if fmt == "csv":
        raise ConfigError("the oracle record is nested; use --format json")
    model, protocol = config.model, config.protocol
    ob = config.oracle
    grid = ob["grid"]
    bath = discretize_bath(
        model,
        int(ob["modes"]),
        grid,
        n_max=int(ob["n_max"]),
        b0=protocol.b0 if grid == "resonance_refined" else None,
    )
    steps = ob.get("steps_per_cycle")
    if steps is None:
        omega_fast = max(protocol.b0, float(bath.frequencies[-1]))
        steps = 2 * int(math.ceil(protocol.period * 50 * omega_fast / (2 * math.pi)))
    spin0 = superposition_state(protocol.theta)
    states, info = thermal_initial_state(
        bath, spin0, samples=int(ob["samples"]), seed=int(ob["seed"])
    )
    runs = [
        propagate_exact(
            protocol, bath, psi, int(steps), t_final=ob.get("t_final"),
            frame=ob.get("frame", "lab"),
        )
        for psi in states
    ]
    result = runs[0] if len(runs) == 1 else average_oracle_results(runs)
    rates = compute_rate_set(model, protocol)
    phases = extract_phases(model, protocol)
    report = compare_with_langevin(result, rates, phases)
    payload = {
        "bath": {
            "frequencies": bath.frequencies.tolist(),
            "couplings": bath.couplings.tolist(),
            "n_max": bath.n_max,
            "grid": bath.grid,
            "ensemble": info,
        },
        "oracle": {
            "final_phase": result.final_phase,
            "fitted_decay": result.fitted_decay,
            "norm_drift": result.norm_drift,
            "top_occupancy": result.top_occupancy,
            "steps_per_cycle": int(steps),
            "warnings": result.warnings,
        },
        "comparison": {
            k: v for k, v in asdict(report).items()
        },
        "rates": _rates_dict(rates),
        "phases": _phases_dict(phases),
    }
    record = make_record(config, "oracle", payload)
    print(report.summary())
    _write_json(record, stream)
    return record


def _sweep_point(raw: dict, parameter: str, value) -> list:
    raw_point = json.loads(json.dumps(raw))  # deep copy
    _set_dotted(raw_point, parameter, value)
    raw_point.pop("sweep", None)
    cfg = build_config(raw_point)
    rates = compute_rate_set(cfg.model, cfg.protocol)
    phases = extract_phases(cfg.model, cfg.protocol)
    merged = {**_rates_dict(rates), **_phases_dict(phases)}
    return [[parameter, value, metric, merged[metric]] for metric in SWEEP_METRICS]


def _worker_limit(n_points: int) -> int:
    env = os.environ.get("BLANGEVIN_WORKERS")
    if env is not None:
        try:
            limit = int(env)
        except ValueError:
            raise ConfigError(f"BLANGEVIN_WORKERS must be an integer, got {env!r}")
        if limit < 1:
            raise ConfigError("BLANGEVIN_WORKERS must be >= 1")
        return min(limit, n_points)
    return 1


def cmd_sweep(config: RunConfig, stream, fmt: str) -> ResultRecord:
    if config.sweep is None:
        raise ConfigError("sweep command needs a [sweep] section")
    parameter = config.sweep["parameter"]
    values = config.sweep["values"]
    workers = _worker_limit(len(values))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_sweep_point, config.raw, parameter, v) for v in values
            ]
            rows_per_point = [f.result() for f in futures]
    else:
        rows_per_point = [_sweep_point(config.raw, parameter, v) for v in values]
    rows = [row for point in rows_per_point for row in point]
    record = make_record(
        config,
        "sweep",
        {"parameter": parameter, "n_points": len(values), "metrics": SWEEP_METRICS},
    )
    if fmt == "csv":
        for line in _csv_metadata_lines(record):
            stream.write(line + "\n")
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(SWEEP_CSV_HEADER)
        for row in rows:
            writer.writerow(
                [row[0], repr(float(row[1])), row[2], repr(float(row[3]))]
            )
    else:
        record.payload["rows"] = [
            {"parameter": r[0], "value": r[1], "metric": r[2], "metric_value": r[3]}
            for r in rows
        ]
        _write_json(record, stream)
    return record


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blangevin",
        description="decay rates, phase split and exact-bath oracle for a "
        "driven spin coupled to a bosonic bath",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("rates", "phase", "evolve", "oracle", "sweep"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="TOML config path")
        sp.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="dotted-path config override (repeatable)",
        )
        sp.add_argument("--output", default=None, help="output path ('-' = stdout)")
        sp.add_argument("--format", default=None, choices=("csv", "json"))
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = load_config(args.config, args.overrides)
        fmt = args.format or config.output.get("format", "json")
        stream, close = _open_output(config, args.output)
        try:
            if args.command == "rates":
                cmd_rates(config, stream, fmt)
            elif args.command == "phase":
                cmd_phase(config, stream, fmt)
            elif args.command == "evolve":
                cmd_evolve(config, stream, fmt)
            elif args.command == "oracle":
                cmd_oracle(config, stream, fmt)
            else:
                cmd_sweep(config, stream, fmt)
        finally:
            if close:
                stream.close()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except BlangevinError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
