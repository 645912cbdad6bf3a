"""Scenario configuration, execution and result emission."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .collision import CollisionBackend
from .euler import MeshSpec, Profile, build_spatial_grid, solve_euler
from .expansion import Expansion, ExpansionConfig, acoustic_gap, fit_slope
from .layer import LayerGridSpec, write_layer_csv
from .velocity import GridSpec

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_FATAL = 0, 2, 3

_POS = {"type": "number", "exclusiveMinimum": 0}
_NUM = {"type": "number"}

SCHEMA = {
    "type": "object",
    "required": ["schema_version", "name"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string", "minLength": 1},
        "output_dir": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "sweep": {
            "type": "object",
            "required": ["parameter", "values"],
            "additionalProperties": False,
            "properties": {"parameter": {"enum": ["epsilon", "delta"]}, "values": {"type": "array", "items": _POS, "minItems": 1}},
        },
        "expansion": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "N": {"type": "integer", "minimum": 1},
                "taylor_order": {"type": "integer", "minimum": 1},
                "epsilons": {"type": "array", "items": _POS, "minItems": 1},
                "delta": _POS,
                "horizon": _POS,
                "interior_init": _NUM,
                "layer_init": _NUM,
                "eval_fractions": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}, "minItems": 1},
                "collar": {"type": "integer", "minimum": 0},
                "tol_match": _POS,
                "profile": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"enum": ["generic", "pulse", "standing-wave", "zero"]},
                        "width": _POS,
                        "a_rho": _NUM,
                        "a_temp": _NUM,
                        "a_u1": _NUM,
                        "a_u2": _NUM,
                        "a_u3": _NUM,
                        "center": _NUM,
                        "wavenumber": _POS,
                    },
                },
                "mesh": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"x_max": _POS, "h_wall": _POS, "growth": {"type": "number", "minimum": 1}, "h_max": _POS},
                },
                "layer_mesh": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"y_max": {"type": "number", "minimum": 20}, "h_wall": _POS, "growth": {"type": "number", "minimum": 1}, "h_max": _POS},
                },
                "velocity": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"radius": _POS, "n_per_axis": {"type": "integer", "minimum": 4, "multipleOf": 2}, "scheme": {"enum": ["uniform-tensor", "gauss-tensor"]}},
                },
                "backend": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"enum": ["bgk-model", "hard-sphere-quad"]},
                        "nu_params": {"type": "object", "additionalProperties": False, "properties": {"nu_bar": _POS, "c0": _POS}},
                        "quad_params": {"type": "object", "additionalProperties": False, "properties": {"n_polar": {"type": "integer", "minimum": 2}, "n_azimuth": {"type": "integer", "minimum": 2}}},
                    },
                },
                "knudsen": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"eta_max": _POS, "eta_step": _POS, "method": {"enum": ["krylov", "none", "anderson"]}},
                },
            },
        },
    },
}


class ConfigError(ValueError):
    def __init__(self, diagnostics: list):
        super().__init__("; ".join(diagnostics))
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class Sweep:
    parameter: str
    values: tuple


@dataclass(frozen=True)
class Scenario:
    name: str
    config: ExpansionConfig
    sweep: Sweep | None
    output_dir: str
    seed: int = 0
    raw: dict = field(default_factory=dict, compare=False, repr=False)


@dataclass
class RunRecord:
    manifest: dict
    stages: dict
    files: dict
    exit_code: int = EXIT_OK

    def to_dict(self) -> dict:
        return {"manifest": self.manifest, "stages": self.stages, "files": self.files, "exit_code": self.exit_code}


def _field_path(err) -> str:
    return ".".join(str(p) for p in err.absolute_path) or "<root>"


def parse_config(text: str) -> dict:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"line {exc.lineno}, column {exc.colno}: {exc.msg}"]) from exc
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        raise ConfigError([f"{_field_path(e)}: {e.message}" for e in errors])
    return data


def scenario_from_dict(data: dict, out: str | None = None) -> Scenario:
    e = data.get("expansion", {})
    kn = e.get("knudsen", {})
    backend = CollisionBackend.from_dict(e["backend"]) if "backend" in e else CollisionBackend()
    sweep = data.get("sweep")
    try:
        cfg = ExpansionConfig(
            N=e.get("N", 2),
            taylor_order=e.get("taylor_order", 2),
            epsilons=tuple(e.get("epsilons", (0.1, 0.05, 0.025))),
            delta=e.get("delta", 0.1),
            horizon=e.get("horizon", 0.5),
            profile=Profile(**e.get("profile", {})),
            mesh=MeshSpec(**e.get("mesh", {})),
            layer_mesh=LayerGridSpec(**e.get("layer_mesh", {})),
            velocity=GridSpec(**e.get("velocity", {})),
            backend=backend,
            eta_max=kn.get("eta_max", 30.0),
            eta_step=kn.get("eta_step", 0.05),
            knudsen_method=kn.get("method", "krylov"),
            interior_init=e.get("interior_init", 0.0),
            layer_init=e.get("layer_init", 0.0),
            eval_fractions=tuple(e.get("eval_fractions", (0.25, 0.5, 0.75))),
            collar=e.get("collar", 2),
            tol_match=e.get("tol_match", 1e-6),
        )
        sw = None
        if sweep is not None:
            vals = tuple(float(v) for v in sweep["values"])
            if any(a <= b for a, b in zip(vals, vals[1:])):
                raise ValueError("sweep.values: must be sorted in strictly descending order")
            sw = Sweep(sweep["parameter"], vals)
            if sw.parameter == "epsilon":
                cfg = ExpansionConfig(**{**cfg.__dict__, "epsilons": vals})
    except (TypeError, ValueError) as exc:
        raise ConfigError([str(exc)]) from exc
    outdir = out or data.get("output_dir") or f"runs/{data['name']}"
    return Scenario(data["name"], cfg, sw, outdir, int(data.get("seed", 0)), data)


def load_scenario(path, out: str | None = None) -> Scenario:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read config {path}: {exc}"]) from exc
    return scenario_from_dict(parse_config(text), out)


def _clean(obj):
    """JSON-safe copy: arrays to lists, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(_clean(payload), indent=2, sort_keys=True) + "\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _composite_csv(path: Path, composite, vgrid, level):
    x, rho, u, T = composite.moments_profile(vgrid, level)
    rows = ["x3,rho,u1,u2,u3,T"]
    rows += [f"{a:.12g},{b:.15g},{c[0]:.15g},{c[1]:.15g},{c[2]:.15g},{d:.15g}" for a, b, c, d in zip(x, rho, u, T)]
    path.write_text("\n".join(rows) + "\n")


def resolve_threads(threads: int | None) -> int | None:
    if threads is not None:
        return threads
    env = os.environ.get("HILBEX_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError as exc:
            raise ConfigError([f"HILBEX_THREADS: expected an integer, got {env!r}"]) from exc
        if n < 1:
            raise ConfigError(["HILBEX_THREADS: must be at least 1"])
        return n
    return None


DEVIATIONS = [
    "truncation order N <= 2 and Taylor order 2 instead of the remainder-theorem requirements N >= 6, b >= 5",
    "slab reduction: fields depend on (t, x3) only",
    "collision model: bgk with constant frequency for the order-by-order pipeline",
]


def run_scenario(scenario: Scenario, threads: int | None = None) -> RunRecord:
    """Euler, orders 1..N, composite and reports; fatal numerical errors skip downstream stages."""
    out = Path(scenario.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    stages: dict = {}
    cfg = scenario.config
    exit_code = EXIT_OK
    written: list[Path] = []

    def emit(name, payload):
        p = out / name
        _write_json(p, payload)
        written.append(p)

    with threadpool_limits(limits=threads):
        try:
            sweep = scenario.sweep
            if sweep is not None and sweep.parameter == "delta":
                _run_delta_sweep(scenario, out, stages, emit, written)
            else:
                _run_expansion(scenario, out, stages, emit, written)
        except Exception as exc:  # recorded, downstream stages skipped
            log.error("fatal: %s", exc)
            failed = next((k for k, v in stages.items() if v == "running"), "setup")
            stages[failed] = f"failed: {type(exc).__name__}: {exc}"
            exit_code = EXIT_FATAL
    for k, v in list(stages.items()):
        if v == "running":
            stages[k] = "skipped"
    emit("stages.json", stages)
    files = {p.name: _sha256(p) for p in sorted(written)}
    manifest = {
        "tool": "hilbex",
        "version": __version__,
        "scenario": scenario.name,
        "config": scenario.raw or cfg.to_dict(),
        "resolved_config": cfg.to_dict(),
        "seed": scenario.seed,
        "deviations": DEVIATIONS,
        "started": started,
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "stages": stages,
        "files": files,
        "exit_code": exit_code,
    }
    _write_json(out / "manifest.json", manifest)
    return RunRecord(manifest, stages, files, exit_code)


def _run_expansion(scenario, out, stages, emit, written):
    cfg = scenario.config
    stages["euler"] = "running"
    ex = Expansion(cfg)
    ex.euler.to_csv(out / "euler.csv", stride=max(1, ex.nt // 20))
    written.append(out / "euler.csv")
    stages["euler"] = "ok"
    for k in range(1, cfg.N + 1):
        stages[f"order_{k}"] = "running"
    for k in range(1, cfg.N + 1):
        bundle = ex.build_order_1() if k == 1 else ex.build_order_k(k)
        ex.bundles.append(bundle)
        emit(f"order_{k}.json", bundle.summary())
        p = out / f"layer_order_{k}.csv"
        write_layer_csv(p, bundle.layer, stride=max(1, ex.nt // 20))
        written.append(p)
        stages[f"order_{k}"] = "ok"
    stages["composite"] = "running"
    reports = []
    mid = ex.eval_levels[len(ex.eval_levels) // 2]
    for eps in cfg.epsilons:
        comp = ex.assemble_composite(eps)
        p = out / f"composite_eps_{eps:g}.csv"
        _composite_csv(p, comp, ex.vgrid, mid)
        written.append(p)
        reports.append(ex.evaluate_defect(comp))
    stages["composite"] = "ok"
    stages["report"] = "running"
    emit("defect.json", {"reports": [r.to_dict() for r in reports]})
    if len(reports) >= 3:
        emit("slope_fit.json", {"parameter": "epsilon", "norm": "l2_monitored", **fit_slope(cfg.epsilons, [r.l2 for r in reports])})
    stages["report"] = "ok"


def _run_delta_sweep(scenario, out, stages, emit, written):
    cfg = scenario.config
    fluid, kinetic = [], []
    for d in scenario.sweep.values:
        tag = f"delta_{d:g}"
        stages[tag] = "running"
        sub = ExpansionConfig(**{**cfg.__dict__, "delta": d, "epsilons": (d * d,), "N": 1})
        euler = solve_euler(cfg.profile, d, cfg.horizon, build_spatial_grid(cfg.mesh))
        ex = Expansion(sub, euler)
        ex.build()
        comp = ex.assemble_composite(d * d, levels=ex.eval_levels)
        gap = acoustic_gap(euler, cfg.profile, d, comp, ex.vgrid)
        fluid.append(gap["fluid"]["sup"])
        kinetic.append(gap["kinetic"]["sup"])
        emit(f"gap_{tag}.json", {"delta": d, "epsilon": d * d, "fluid_sup": gap["fluid"]["sup"], "kinetic_sup": gap["kinetic"]["sup"], "kinetic_series": gap["kinetic"]["series"]})
        stages[tag] = "ok"
    stages["report"] = "running"
    payload = {"deltas": list(scenario.sweep.values), "fluid": fluid, "kinetic": kinetic}
    if len(fluid) >= 3:
        payload["fluid_fit"] = fit_slope(scenario.sweep.values, fluid)
        payload["kinetic_fit"] = fit_slope(scenario.sweep.values, kinetic)
    emit("acoustic_gap.json", payload)
    stages["report"] = "ok"
