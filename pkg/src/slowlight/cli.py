"""Config-driven scenario runner.

Usage::

    slowlight run config.yaml [--out DIR] [--seed N] [--resolution-scale F]
    slowlight --print-defaults [SCENARIO]

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .adiabaton import AdiabatonSpec
from .model import (
    ENVELOPE_FAMILIES,
    SHAPE_FAMILIES,
    DomainError,
    EnvelopeSpec,
    LossParams,
    MediumParams,
    ShapeSpec,
    SimulationGrid,
)
from .scenarios import (
    ScenarioResult,
    run_adiabaton_propagation,
    run_lz_scan,
    run_rabi_check,
    run_speed_measurement,
    run_storage_retrieval,
)
from .solver import NumericalError, RunRecord, StepSizeError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
PARTIAL_MARKER = "PARTIAL_OUTPUT"

SCENARIOS = ("adiabaton-propagation", "storage-retrieval", "speed-measurement", "lz-scan", "rabi-check")

_KINK = {"family": "tanh-kink", "amplitude": math.pi / 2, "width": 1.0, "center": -5.0}
_FLAT = {"family": "constant", "amplitude": 0.0, "width": 1.0, "center": 0.0}
_OUTPUT = {"directory": "slowlight-out", "stride_tau": 10, "stride_zeta": 10}

_PROPAGATION = {
    "grid": {"tau_min": 0.0, "tau_max": 2400.0, "n_tau": 2000, "zeta_min": 0.0, "zeta_max": 2.0, "n_zeta": 200},
    "medium": {"g": 100.0, "gamma_e": 0.0},
    "envelope": {"family": "constant", "amplitude": 1.0, "width": 1.0, "center": 0.0},
    "theta": _KINK,
    "phi": _FLAT,
    "reference": {"tau_ref": 0.0, "xi_ref": -15.0},
    "initial": "adiabaton",
}

DEFAULTS: dict[str, dict] = {
    "adiabaton-propagation": _PROPAGATION,
    "speed-measurement": _PROPAGATION,
    "storage-retrieval": {
        "grid": {"tau_min": 0.0, "tau_max": 4300.0, "n_tau": 3584, "zeta_min": 0.0, "zeta_max": 10.0, "n_zeta": 501},
        "medium": {"g": 100.0, "gamma_e": 0.0},
        "envelope": {"family": "raised-cosine-gate", "amplitude": 1.0, "width": 50.0, "center": 1981.25, "window": 20.0},
        "theta": {"family": "gaussian-bump", "amplitude": math.pi / 4, "width": 1.0, "center": -5.0},
        "phi": _FLAT,
        "reference": {"tau_ref": 0.0, "xi_ref": -20.0},
        "initial": "adiabaton",
    },
    "rabi-check": {
        "grid": {"tau_min": 0.0, "tau_max": 4 * math.pi, "n_tau": 4001, "zeta_min": 0.0, "zeta_max": 1.0, "n_zeta": 2},
        "medium": {"g": 0.0, "gamma_e": 0.0},
        "rabi": {"omega0": 1.0},
    },
    "lz-scan": {
        "envelope": {"family": "lorentzian-hump", "amplitude": 1.0, "width": 1.0, "center": 0.0, "power": 2},
        "medium": {"g": 100.0, "gamma_e": 0.0},
        "theta": _KINK,
        "phi": _FLAT,
        "reference": {"tau_ref": 0.0, "xi_ref": -15.0},
        "lz": {"products": [1.0, 2.0, 4.0], "half_height": 4.0, "immunity_check": True},
    },
}

REQUIRED_BLOCKS = {
    "adiabaton-propagation": ("medium",),
    "speed-measurement": ("medium",),
    "storage-retrieval": ("medium",),
    "rabi-check": (),
    "lz-scan": ("envelope",),
}

_BLOCK_KEYS = {
    "grid": {"tau_min", "tau_max", "n_tau", "zeta_min", "zeta_max", "n_zeta"},
    "medium": {"g", "gamma_e"},
    "envelope": {"family", "amplitude", "width", "center", "depth", "offset", "power", "window"},
    "theta": {"family", "amplitude", "width", "center"},
    "phi": {"family", "amplitude", "width", "center"},
    "reference": {"tau_ref", "xi_ref"},
    "loss": {"wavelength", "density_param", "pulse_scale", "propagation_length"},
    "output": {"directory", "stride_tau", "stride_zeta"},
    "rabi": {"omega0"},
    "lz": {"products", "half_height", "immunity_check"},
}
_SCALARS = {"scenario", "seed", "initial"}


class ConfigError(ValueError):
    """Invalid configuration; ``code`` is a stable machine-readable tag."""

    def __init__(self, code: str, message: str, line: Optional[int] = None):
        self.code = code
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}{message} [{code}]")


@dataclass
class ScenarioConfig:
    scenario: str
    blocks: dict
    seed: int = 0
    lines: dict = field(default_factory=dict, repr=False)

    @property
    def output_dir(self) -> Path:
        return Path(self.blocks["output"]["directory"])

    def grid(self) -> SimulationGrid:
        return SimulationGrid(**self.blocks["grid"])

    def medium(self) -> MediumParams:
        return MediumParams(**self.blocks["medium"])

    def envelope(self) -> EnvelopeSpec:
        return EnvelopeSpec(**self.blocks["envelope"])

    def adiabaton_spec(self) -> AdiabatonSpec:
        b = self.blocks
        return AdiabatonSpec(self.envelope(), ShapeSpec(**b["theta"]), ShapeSpec(**b["phi"]), self.medium(),
                             b["reference"]["tau_ref"], b["reference"]["xi_ref"])

    def loss(self) -> Optional[LossParams]:
        return LossParams(**self.blocks["loss"]) if "loss" in self.blocks else None

    def resolved(self) -> dict:
        return {"scenario": self.scenario, "seed": self.seed, **copy.deepcopy(self.blocks)}


# --------------------------------------------------------------------------
# parsing
# --------------------------------------------------------------------------


def _line_map(text: str) -> dict:
    """Dotted key path -> 1-based source line, from the YAML node tree."""
    lines: dict = {}
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError:
        return lines

    def walk(node, prefix):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                path = f"{prefix}.{k.value}" if prefix else str(k.value)
                lines[path] = k.start_mark.line + 1
                walk(v, path)

    if root is not None:
        walk(root, "")
    return lines


def _number(value, path, lines, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError("invalid-value", f"{path} must be a number, got {value!r}", lines.get(path))
    if integer and (not float(value).is_integer()):
        raise ConfigError("invalid-value", f"{path} must be an integer, got {value!r}", lines.get(path))
    if not math.isfinite(value):
        raise ConfigError("invalid-value", f"{path} must be finite", lines.get(path))
    return int(value) if integer else float(value)


def _positive(value, path, lines, allow_zero=False, hint=""):
    ok = value >= 0 if allow_zero else value > 0
    if not ok:
        bound = ">= 0" if allow_zero else "> 0"
        raise ConfigError("non-positive", f"{path} must be {bound}{hint}", lines.get(path))
    return value


def _family(value, path, lines, allowed):
    if value not in allowed:
        raise ConfigError("invalid-value", f"{path} must be one of {sorted(allowed)}, got {value!r}", lines.get(path))
    return value


def parse_config(text: str) -> ScenarioConfig:
    """Validate a YAML run configuration and fill defaults."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError("parse-error", f"not valid YAML: {getattr(exc, 'problem', exc)}",
                          mark.line + 1 if mark else None) from None
    lines = _line_map(text)
    if not isinstance(raw, dict):
        raise ConfigError("parse-error", "top level must be a mapping", 1)
    if "scenario" not in raw:
        raise ConfigError("missing-block", "missing required key 'scenario'", None)
    name = raw["scenario"]
    if name not in SCENARIOS:
        raise ConfigError("unknown-scenario", f"unknown scenario {name!r}; expected one of {list(SCENARIOS)}",
                          lines.get("scenario"))

    for key, value in raw.items():
        if key not in _BLOCK_KEYS and key not in _SCALARS:
            raise ConfigError("unknown-key", f"unknown top-level key {key!r}", lines.get(str(key)))
        if key in _BLOCK_KEYS:
            if not isinstance(value, dict):
                raise ConfigError("invalid-value", f"{key} must be a mapping", lines.get(key))
            for sub in value:
                if sub not in _BLOCK_KEYS[key]:
                    raise ConfigError("unknown-key", f"unknown key {key}.{sub}", lines.get(f"{key}.{sub}"))
    for block in REQUIRED_BLOCKS[name]:
        if block not in raw:
            raise ConfigError("missing-block", f"scenario {name} needs a '{block}' block", None)

    defaults = DEFAULTS[name]
    blocks: dict[str, Any] = {}
    for key in set(defaults) | {k for k in raw if k in _BLOCK_KEYS}:
        base = copy.deepcopy(defaults.get(key, {}))
        if isinstance(base, dict):
            base.update(raw.get(key, {}))
        else:
            base = raw.get(key, base)
        blocks[key] = base
    blocks["output"] = {**_OUTPUT, **raw.get("output", {})}
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("invalid-value", f"seed must be a non-negative integer, got {seed!r}", lines.get("seed"))

    _validate_blocks(name, blocks, lines)
    return ScenarioConfig(name, blocks, seed, lines)


def _validate_blocks(name: str, blocks: dict, lines: dict) -> None:
    if "grid" in blocks:
        g = blocks["grid"]
        for k in ("tau_min", "tau_max", "zeta_min", "zeta_max"):
            g[k] = _number(g[k], f"grid.{k}", lines)
        for k in ("n_tau", "n_zeta"):
            g[k] = _number(g[k], f"grid.{k}", lines, integer=True)
            if g[k] < 2:
                raise ConfigError("invalid-value", f"grid.{k} must be >= 2", lines.get(f"grid.{k}"))
        for lo, hi in (("tau_min", "tau_max"), ("zeta_min", "zeta_max")):
            if not g[hi] > g[lo]:
                raise ConfigError("invalid-value", f"grid.{hi} must exceed grid.{lo}", lines.get(f"grid.{hi}"))
    if "medium" in blocks:
        m = blocks["medium"]
        m["g"] = _number(m["g"], "medium.g", lines)
        m["gamma_e"] = _positive(_number(m.get("gamma_e", 0.0), "medium.gamma_e", lines), "medium.gamma_e", lines,
                                 allow_zero=True)
        vacuum_ok = name == "rabi-check"
        if m["g"] < 0 or (m["g"] == 0 and not vacuum_ok):
            hint = " (g = 0, vacuum propagation, is only allowed for rabi-check)" if m["g"] == 0 else ""
            raise ConfigError("non-positive", f"medium.g must be > 0{hint}", lines.get("medium.g"))
    if "envelope" in blocks:
        e = blocks["envelope"]
        _family(e.get("family"), "envelope.family", lines, ENVELOPE_FAMILIES)
        for k in ("amplitude", "width", "center", "depth", "offset", "window"):
            if k in e:
                e[k] = _number(e[k], f"envelope.{k}", lines)
        _positive(e["amplitude"], "envelope.amplitude", lines)
        _positive(e["width"], "envelope.width", lines)
        if "window" in e:
            _positive(e["window"], "envelope.window", lines, allow_zero=True)
        if "power" in e:
            e["power"] = _number(e["power"], "envelope.power", lines, integer=True)
            if e["power"] < 2 or e["power"] % 2:
                raise ConfigError("invalid-value", "envelope.power must be an even integer >= 2",
                                  lines.get("envelope.power"))
    for shape in ("theta", "phi"):
        if shape in blocks:
            s = blocks[shape]
            _family(s.get("family"), f"{shape}.family", lines, SHAPE_FAMILIES)
            for k in ("amplitude", "width", "center"):
                if k in s:
                    s[k] = _number(s[k], f"{shape}.{k}", lines)
            _positive(s["width"], f"{shape}.width", lines)
    if "reference" in blocks:
        r = blocks["reference"]
        for k in ("tau_ref", "xi_ref"):
            r[k] = _number(r[k], f"reference.{k}", lines)
    if "loss" in blocks:
        lp = blocks["loss"]
        for k in sorted(_BLOCK_KEYS["loss"]):
            if k not in lp:
                raise ConfigError("missing-block", f"loss.{k} is required when a loss block is given", lines.get("loss"))
            lp[k] = _positive(_number(lp[k], f"loss.{k}", lines), f"loss.{k}", lines)
    o = blocks["output"]
    if not isinstance(o["directory"], str) or not o["directory"]:
        raise ConfigError("invalid-value", "output.directory must be a non-empty string", lines.get("output.directory"))
    for k in ("stride_tau", "stride_zeta"):
        o[k] = _number(o[k], f"output.{k}", lines, integer=True)
        if o[k] < 1:
            raise ConfigError("invalid-value", f"output.{k} must be >= 1", lines.get(f"output.{k}"))
    if "rabi" in blocks:
        blocks["rabi"]["omega0"] = _positive(_number(blocks["rabi"]["omega0"], "rabi.omega0", lines),
                                             "rabi.omega0", lines)
    if "lz" in blocks:
        lz = blocks["lz"]
        if not isinstance(lz["products"], list) or not lz["products"]:
            raise ConfigError("invalid-value", "lz.products must be a non-empty list", lines.get("lz.products"))
        lz["products"] = [_positive(_number(p, "lz.products", lines), "lz.products", lines) for p in lz["products"]]
        lz["half_height"] = _positive(_number(lz["half_height"], "lz.half_height", lines), "lz.half_height", lines)
        if not isinstance(lz["immunity_check"], bool):
            raise ConfigError("invalid-value", "lz.immunity_check must be true or false", lines.get("lz.immunity_check"))
    if name in ("adiabaton-propagation", "speed-measurement", "storage-retrieval"):
        if blocks.get("initial") not in ("adiabaton", "dark"):
            raise ConfigError("invalid-value", "initial must be 'adiabaton' or 'dark'", lines.get("initial"))
    if name == "speed-measurement" and blocks["envelope"]["family"] != "constant":
        raise ConfigError("invalid-value", "speed-measurement needs envelope.family = constant",
                          lines.get("envelope.family"))


def print_defaults(scenario: Optional[str] = None, stream=None) -> None:
    names = [scenario] if scenario else list(SCENARIOS)
    docs = []
    for n in names:
        doc = {"scenario": n, "seed": 0, **copy.deepcopy(DEFAULTS[n]), "output": dict(_OUTPUT)}
        docs.append(doc)
    yaml.safe_dump_all(docs, stream or sys.stdout, sort_keys=False, default_flow_style=False)


# --------------------------------------------------------------------------
# running and reporting
# --------------------------------------------------------------------------


def run_scenario(config: ScenarioConfig) -> ScenarioResult:
    name = config.scenario
    rng = np.random.default_rng(config.seed)
    if name == "adiabaton-propagation":
        return run_adiabaton_propagation(config.adiabaton_spec(), config.grid(), config.blocks["initial"], rng,
                                         config.loss())
    if name == "speed-measurement":
        return run_speed_measurement(config.adiabaton_spec(), config.grid(), config.blocks["initial"])
    if name == "storage-retrieval":
        return run_storage_retrieval(config.adiabaton_spec(), config.grid(), config.blocks["initial"])
    if name == "rabi-check":
        return run_rabi_check(config.blocks["rabi"]["omega0"], config.grid(), config.medium())
    lz = config.blocks["lz"]
    spec = config.adiabaton_spec() if lz["immunity_check"] else None
    return run_lz_scan(config.envelope(), np.asarray(lz["products"]), lz["half_height"], spec)


def _clean(value):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else None
    return value


def emit_report(result: ScenarioResult, config: ScenarioConfig) -> dict:
    """Summary document: scenario results plus aggregated run diagnostics."""
    results = dict(result.summary)
    record = result.record
    diag: dict = {}
    if record is not None:
        d = record.diagnostics
        diag = {
            "max_norm_drift": float(np.max(d["norm_drift"])),
            "max_slice_conservation_residual": float(np.nanmax(d["conservation_residual"]))
            if np.any(np.isfinite(d["conservation_residual"])) else None,
            "min_dark_state_fidelity": float(np.nanmin(d["min_fidelity"]))
            if np.any(np.isfinite(d["min_fidelity"])) else None,
            "max_excited_population": float(np.max(d["max_excited"])),
        }
        if np.all(record.g_profile == 0):
            results.pop("measured_speed", None)
            results["vacuum_propagation"] = True
    if "loss" in config.blocks and "loss_rate_estimate" not in results:
        from .model import loss_rate

        results["loss_rate_estimate"] = loss_rate(config.loss())
    return _clean({
        "schema_version": SCHEMA_VERSION,
        "scenario": result.name,
        "config": config.resolved(),
        "results": results,
        "diagnostics": diag,
    })


SUMMARY_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "scenario", "config", "results", "diagnostics"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "scenario": {"enum": list(SCENARIOS)},
        "config": {"type": "object", "required": ["scenario", "seed", "output"]},
        "results": {"type": "object"},
        "diagnostics": {
            "type": "object",
            "properties": {
                "max_norm_drift": {"type": "number", "minimum": 0},
                "max_excited_population": {"type": "number", "minimum": 0},
            },
        },
    },
    "additionalProperties": False,
}

FIELD_COLUMNS = ["tau", "zeta", "re_omega_plus", "im_omega_plus", "re_omega_minus", "im_omega_minus"]
ATOM_COLUMNS = ["tau", "zeta", "re_psi_plus", "im_psi_plus", "re_psi_minus", "im_psi_minus", "re_psi_e", "im_psi_e"]
DIAGNOSTIC_COLUMNS = ["zeta", "norm_drift", "conservation_residual", "min_fidelity", "max_excited"]


def _write_csv(path: Path, columns, table: np.ndarray) -> None:
    np.savetxt(path, table, fmt="%.17g", delimiter=",", header=",".join(columns), comments="")


def _grid_table(record: RunRecord, values: np.ndarray, stride_tau: int, stride_zeta: int) -> np.ndarray:
    zi = np.arange(0, record.grid.n_zeta, stride_zeta)
    ti = np.arange(0, record.grid.n_tau, stride_tau)
    Z, T = np.meshgrid(record.zeta[zi], record.tau[ti], indexing="ij")
    v = values[np.ix_(zi, ti)]
    cols = [T.ravel(), Z.ravel()]
    for k in range(v.shape[-1]):
        cols += [v[..., k].real.ravel(), v[..., k].imag.ravel()]
    return np.column_stack(cols)


def write_outputs(result: ScenarioResult, config: ScenarioConfig, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    record = result.record
    o = config.blocks["output"]
    if record is not None:
        _write_csv(out / "fields.csv", FIELD_COLUMNS, _grid_table(record, record.fields, o["stride_tau"], o["stride_zeta"]))
        _write_csv(out / "atoms.csv", ATOM_COLUMNS, _grid_table(record, record.atoms, o["stride_tau"], o["stride_zeta"]))
        d = record.diagnostics
        _write_csv(out / "diagnostics.csv", DIAGNOSTIC_COLUMNS,
                   np.column_stack([d[k] for k in DIAGNOSTIC_COLUMNS]))
    summary = emit_report(result, config)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True, allow_nan=False) + "\n")
    marker = out / PARTIAL_MARKER
    if marker.exists():
        marker.unlink()
    return summary


def _write_marker(out: Path, message: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / PARTIAL_MARKER).write_text(message + "\n")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="slowlight", description="Run slow-light polarization scenarios.")
    ap.add_argument("--print-defaults", nargs="?", const="", metavar="SCENARIO",
                    help="print default configurations (all scenarios, or one) and exit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command")
    run = sub.add_parser("run", help="run one scenario from a YAML config")
    run.add_argument("config", type=Path)
    run.add_argument("--out", type=Path, help="output directory (overrides output.directory)")
    run.add_argument("--seed", type=int, help="random seed (overrides seed)")
    run.add_argument("--resolution-scale", type=float, default=1.0,
                     help="multiply the tau and zeta step counts")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    if args.print_defaults is not None:
        if args.print_defaults and args.print_defaults not in SCENARIOS:
            print(f"error: unknown scenario {args.print_defaults!r} [unknown-scenario]", file=sys.stderr)
            return EXIT_CONFIG
        print_defaults(args.print_defaults or None)
        return EXIT_OK
    if args.command != "run":
        ap.print_usage(sys.stderr)
        return EXIT_CONFIG

    try:
        text = args.config.read_text()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        config = parse_config(text)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("invalid-value", "--seed must be >= 0")
            config.seed = args.seed
        if args.out is not None:
            config.blocks["output"]["directory"] = str(args.out)
        if args.resolution_scale != 1.0:
            if not args.resolution_scale > 0:
                raise ConfigError("non-positive", "--resolution-scale must be > 0")
            if "grid" in config.blocks:
                g = config.grid().scaled(args.resolution_scale)
                config.blocks["grid"].update(n_tau=g.n_tau, n_zeta=g.n_zeta)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = config.output_dir
    try:
        result = run_scenario(config)
    except (NumericalError, StepSizeError, DomainError, FloatingPointError, ValueError) as exc:
        _write_marker(out, f"{type(exc).__name__}: {exc}")
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    summary = write_outputs(result, config, out)
    print(json.dumps({"output": str(out), "scenario": summary["scenario"]}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
