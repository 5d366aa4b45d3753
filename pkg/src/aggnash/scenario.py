"""Scenario configs, presets and the run / check / sweep pipelines behind the CLI.

Exit-code contract:

    0  every configured check passed
    1  the run completed but a convergence check failed
    2  the config is invalid
    3  an assumption (or the nu(0) initial condition) is violated
    4  the trajectory diverged
"""

from __future__ import annotations

import copy
import csv
import hashlib
import itertools
import json
import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from . import _backend
from .analysis import Tolerances, delta_star, estimate_p, verify_theorem1
from .dynamics import (
    AlgorithmParams,
    SystemState,
    check_nu_sum,
    default_initial_state,
    integrate,
)
from .errors import AssumptionViolation, ConfigError, HorizonTooShort, InitialConditionError
from .game_model import GameConstants, GAME_PRESETS, estimate_constants, game_from_preset, solve_ne
from .switching_graph import (
    PartialCoverageWarning,
    SwitchingSchedule,
    complete_graph,
    generate_partition_schedule,
    is_jointly_connected,
    is_weight_balanced,
    static_schedule,
)

log = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_ASSUMPTION, EXIT_DIVERGED = 0, 1, 2, 3, 4
OUTPUT_ROOT_ENV = "AGGNASH_OUTPUT_ROOT"

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_VEC = {"type": "array", "items": _NUM}

SCHEMA = {
    "type": "object",
    "required": ["game", "schedule"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "game": {
            "type": "object",
            "required": ["preset"],
            "additionalProperties": False,
            "properties": {"preset": {"type": "string"}, "params": {"type": "object"}},
        },
        "schedule": {
            "oneOf": [
                {
                    "type": "object",
                    "required": ["generator"],
                    "additionalProperties": False,
                    "properties": {
                        "generator": {"const": "ring-partition"},
                        "N": {"type": "integer", "minimum": 3},
                        "n_parts": {"type": "integer", "minimum": 1},
                        "segment_len": _POS,
                    },
                },
                {
                    "type": "object",
                    "required": ["nodes", "graphs", "segments"],
                    "additionalProperties": False,
                    "properties": {
                        "nodes": {"type": "integer", "minimum": 1},
                        "graphs": {"type": "array", "minItems": 1},
                        "segments": {
                            "type": "array", "minItems": 1,
                            "items": {"type": "array", "minItems": 2, "maxItems": 2},
                        },
                        "repeat": {"type": "boolean"},
                        "dwell": _POS,
                    },
                },
            ]
        },
        "joint_T": _POS,
        "params": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "delta": {"oneOf": [_POS, {"const": "auto"}]},
                "alpha": _POS,
                "beta": _POS,
                "auto_factor": _POS,
            },
        },
        "initial": {
            "oneOf": [
                {"const": "default"},
                {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"x": _VEC, "s": _VEC, "nu": _VEC},
                },
            ]
        },
        "integration": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"h": _POS, "t_end": _POS, "record_dt": _POS},
        },
        "constants": {
            "type": "object",
            "required": ["mu", "theta", "theta_hat", "ell"],
            "additionalProperties": False,
            "properties": {"mu": _NUM, "theta": _NUM, "theta_hat": _NUM, "ell": _NUM},
        },
        "constants_box": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"low": {"oneOf": [_NUM, _VEC]}, "high": {"oneOf": [_NUM, _VEC]},
                           "n_samples": {"type": "integer", "minimum": 2}},
        },
        "analysis": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tolerances": {"type": "object"},
                "probe_times": _VEC,
                "horizon": _POS,
                "h": _POS,
                "Q_scale": _POS,
            },
        },
        "seed": {"type": "integer"},
        "output": {"type": "string"},
    },
}

DEFAULTS = {
    "name": "scenario",
    "params": {"delta": "auto", "alpha": 1.0, "beta": 1.0, "auto_factor": 0.5},
    "initial": "default",
    "integration": {"h": 1e-3, "t_end": 500.0, "record_dt": 0.05},
    "constants_box": {"low": -5.0, "high": 5.0, "n_samples": 10_000},
    "analysis": {"tolerances": {}, "horizon": 40.0, "h": 1e-3, "Q_scale": 1.0},
    "seed": 0,
}

_LQ5 = {"preset": "lq-game", "params": {"N": 5, "n": 1, "c": [1, 2, 3, 4, 5], "d": 0.1}}

PRESETS = {
    "lq-n5-partition2": {
        "name": "lq-n5-partition2",
        "game": _LQ5,
        "schedule": {"generator": "ring-partition", "N": 5, "n_parts": 2, "segment_len": 0.5},
        "joint_T": 1.0,
    },
    "lq-n5-complete": {
        "name": "lq-n5-complete",
        "game": _LQ5,
        "schedule": static_schedule(complete_graph(5)).to_dict(),
    },
    "lq-n2-static": {
        "name": "lq-n2-static",
        "game": {"preset": "lq-game", "params": {"N": 2, "n": 1, "c": [1, 2], "d": 0.1}},
        "schedule": static_schedule(complete_graph(2)).to_dict(),
        "integration": {"t_end": 200.0},
    },
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ScenarioConfig:
    """A validated scenario with defaults filled in."""

    data: dict

    @classmethod
    def from_dict(cls, raw: dict) -> "ScenarioConfig":
        try:
            jsonschema.validate(raw, SCHEMA)
        except jsonschema.ValidationError as exc:
            path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"{path}: {exc.message}") from None
        data = _merge(DEFAULTS, raw)
        if data["game"]["preset"] not in GAME_PRESETS:
            raise ConfigError(f"unknown game preset {data['game']['preset']!r}")
        try:
            Tolerances.from_dict(data["analysis"]["tolerances"])
        except TypeError as exc:
            raise ConfigError(f"analysis/tolerances: {exc}") from None
        return cls(data)

    @classmethod
    def load(cls, source) -> "ScenarioConfig":
        """Load from a JSON file path or a preset name."""
        if str(source) in PRESETS and not Path(source).exists():
            return cls.from_dict(PRESETS[str(source)])
        try:
            with open(source) as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"no config file or preset named {source!r}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{source}: invalid JSON ({exc})") from None
        return cls.from_dict(raw)

    @property
    def name(self) -> str:
        return self.data["name"]

    def scenario_hash(self) -> str:
        body = {k: v for k, v in self.data.items() if k != "output"}
        canon = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def schedule_id(self) -> str:
        sch = self.data["schedule"]
        if "generator" in sch:
            return (f"{sch['generator']}(N={sch.get('N')},n_parts={sch.get('n_parts')},"
                    f"segment_len={sch.get('segment_len')},seed={self.data['seed']})")
        canon = json.dumps(sch, sort_keys=True, separators=(",", ":"))
        return "inline:" + hashlib.sha256(canon.encode()).hexdigest()[:12]

    def output_dir(self, override=None) -> Path:
        if override is not None:
            return Path(override)
        rel = Path(self.data.get("output") or Path("runs") / self.name)
        root = os.environ.get(OUTPUT_ROOT_ENV)
        return rel if rel.is_absolute() or not root else Path(root) / rel

    def build_game(self):
        g = self.data["game"]
        try:
            return game_from_preset(g["preset"], g.get("params", {}))
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"game: {exc}") from None

    def build_schedule(self) -> SwitchingSchedule:
        sch = self.data["schedule"]
        try:
            if "generator" in sch:
                N = sch.get("N", self.data["game"].get("params", {}).get("N"))
                return generate_partition_schedule(int(N), int(sch.get("n_parts", 2)),
                                                   float(sch.get("segment_len", 0.5)),
                                                   self.data["seed"])
            return SwitchingSchedule.from_dict(sch)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"schedule: {exc}") from None

    def joint_window(self, schedule: SwitchingSchedule) -> float:
        if "joint_T" in self.data:
            return float(self.data["joint_T"])
        sch = self.data["schedule"]
        if "generator" in sch:
            return len(schedule.segments) * schedule.segments[0][1]
        return schedule.period

    def initial_state(self, game) -> SystemState:
        init = self.data["initial"]
        if init == "default":
            return default_initial_state(game)
        x = np.asarray(init.get("x", np.zeros(game.dim)), dtype=float)
        base = default_initial_state(game, x)
        s = np.asarray(init.get("s", base.s), dtype=float)
        nu = np.asarray(init.get("nu", base.nu), dtype=float)
        if not (x.shape == s.shape == nu.shape == (game.dim,)):
            raise ConfigError(f"initial vectors must all have length {game.dim}")
        return SystemState(x, s, nu)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass
class Outcome:
    exit_code: int
    message: str
    payload: dict = field(default_factory=dict)


def check_assumptions(cfg: ScenarioConfig, game=None, schedule=None):
    """Run every assumption gate; returns ``(record, constants, violation)``.

    ``violation`` is ``None`` or the label of the first failed assumption.
    """
    game = game or cfg.build_game()
    schedule = schedule or cfg.build_schedule()
    if schedule.n_nodes != game.n_players:
        raise ConfigError("schedule node count differs from the number of players")
    record: dict = {"scenario": cfg.name, "scenario_hash": cfg.scenario_hash(),
                    "schedule_id": cfg.schedule_id()}
    violation = None

    box = cfg.data["constants_box"]
    constants = None
    if "constants" in cfg.data:
        try:
            constants = GameConstants(**cfg.data["constants"])
            record["constants"] = {"source": "given", **constants.to_dict(), "passed": True}
        except ValueError as exc:
            record["constants"] = {"source": "given", "passed": False, "error": str(exc)}
            violation = "Assumptions 1-3"
    else:
        try:
            constants = estimate_constants(game, (box["low"], box["high"]),
                                           box["n_samples"], cfg.data["seed"])
            record["constants"] = {"source": "estimated", "box": box,
                                   **constants.to_dict(), "passed": True}
        except AssumptionViolation as exc:
            record["constants"] = {"source": "estimated", "box": box, "passed": False,
                                   "error": str(exc)}
            violation = exc.assumption

    balanced = [is_weight_balanced(g) for g in schedule.graphs]
    record["assumption_4_2_weight_balanced"] = {"per_graph": balanced, "passed": all(balanced)}
    if not all(balanced) and violation is None:
        violation = "Assumption 4.2"

    T = cfg.joint_window(schedule)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", PartialCoverageWarning)
        joint = is_jointly_connected(schedule, T)
    partial = any(issubclass(w.category, PartialCoverageWarning) for w in caught)
    record["assumption_4_1_joint_connectivity"] = {
        "T": T, "passed": joint, "coverage": "partial" if partial else "full"}
    if not joint and violation is None:
        violation = "Assumption 4.1"

    try:
        init = cfg.initial_state(game)
        nu_norm = float(np.linalg.norm(
            init.nu.reshape(game.n_players, game.action_dim).sum(axis=0)))
        check_nu_sum(game, init.nu)
        record["initial_nu_sum"] = {"norm": nu_norm, "passed": True}
    except InitialConditionError as exc:
        record["initial_nu_sum"] = {"norm": nu_norm, "passed": False, "error": str(exc)}
        if violation is None:
            violation = exc.assumption

    record["passed"] = violation is None
    record["violation"] = violation
    return record, constants, violation


def derive_delta_star(cfg: ScenarioConfig, game, schedule, constants):
    """Estimate p on the scenario's schedule and evaluate the gain bound."""
    prm = cfg.data["params"]
    an = cfg.data["analysis"]
    d = (2 * game.n_players - 1) * game.action_dim
    Q = an["Q_scale"] * np.eye(d)
    probe = AlgorithmParams(delta=1.0, alpha=prm["alpha"], beta=prm["beta"])
    est = estimate_p(schedule, probe, Q=Q, probe_times=an.get("probe_times"),
                     horizon=an["horizon"], h=an["h"], action_dim=game.action_dim)
    ds = delta_star(constants, est.p_hat, est.lambda_min_Q, prm["alpha"])
    M = 2 * est.p_hat * constants.ell * math.sqrt(prm["alpha"] ** 2 + 1)
    return ds, M, est


def check_scenario(cfg: ScenarioConfig, out_dir=None) -> Outcome:
    out = cfg.output_dir(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    record, _, violation = check_assumptions(cfg)
    write_json(out / "assumptions.json", record)
    if violation:
        return Outcome(EXIT_ASSUMPTION, f"{violation} violated", record)
    return Outcome(EXIT_OK, "all assumptions hold", record)


def delta_star_scenario(cfg: ScenarioConfig) -> Outcome:
    game, schedule = cfg.build_game(), cfg.build_schedule()
    record, constants, violation = check_assumptions(cfg, game, schedule)
    if violation:
        return Outcome(EXIT_ASSUMPTION, f"{violation} violated", record)
    try:
        ds, M, est = derive_delta_star(cfg, game, schedule, constants)
    except HorizonTooShort as exc:
        return Outcome(EXIT_ASSUMPTION, f"Lemma 1 decay not observed: {exc}", record)
    payload = {"delta_star": ds, "M": M, "alpha": cfg.data["params"]["alpha"],
               "constants": constants.to_dict(), "lyapunov": est.to_dict()}
    return Outcome(EXIT_OK, f"delta* = {ds:.6g}", payload)


def run_scenario(cfg: ScenarioConfig, out_dir=None) -> Outcome:
    """Gate on the assumptions, derive delta*, integrate, verify, write artifacts."""
    out = cfg.output_dir(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    game, schedule = cfg.build_game(), cfg.build_schedule()
    record, constants, violation = check_assumptions(cfg, game, schedule)
    write_json(out / "assumptions.json", record)
    if violation:
        return Outcome(EXIT_ASSUMPTION, f"{violation} violated", record)

    prm = cfg.data["params"]
    try:
        ds, M, est = derive_delta_star(cfg, game, schedule, constants)
    except HorizonTooShort as exc:
        return Outcome(EXIT_ASSUMPTION, f"Lemma 1 decay not observed: {exc}", record)
    delta = prm["auto_factor"] * ds if prm["delta"] == "auto" else float(prm["delta"])
    params = AlgorithmParams(delta=delta, alpha=prm["alpha"], beta=prm["beta"])
    x_star = solve_ne(game, constants)

    integ = cfg.data["integration"]
    h = integ["h"]
    stride = max(1, int(round(integ["record_dt"] / h)))
    traj = integrate(cfg.initial_state(game), game, schedule, params, integ["t_end"], h,
                     record_every=stride, raise_on_divergence=False)
    traj.to_csv(out / "trajectory.csv")
    tol = Tolerances.from_dict(cfg.data["analysis"]["tolerances"])
    conv = verify_theorem1(traj, game, x_star, params, tol)

    report = {
        "scenario": cfg.name,
        "scenario_hash": cfg.scenario_hash(),
        "schedule_id": cfg.schedule_id(),
        "backend": _backend.BACKEND,
        "params": {"delta": delta, "alpha": params.alpha, "beta": params.beta,
                   "delta_mode": prm["delta"] if prm["delta"] == "auto" else "fixed",
                   "auto_factor": prm["auto_factor"], "delta_over_delta_star": delta / ds},
        "delta_star": ds,
        "M": M,
        "constants": constants.to_dict(),
        "lyapunov": est.to_dict(),
        "x_star": x_star,
        "integration": {"h": h, "t_end": integ["t_end"], "record_every": stride},
        "seed": cfg.data["seed"],
        "convergence": conv.to_dict(),
        "pass": conv.passed,
    }
    write_json(out / "report.json", report)
    if traj.diverged_at is not None:
        return Outcome(EXIT_DIVERGED, f"diverged at t={traj.diverged_at:.6g}", report)
    if not conv.passed:
        failed = [k for k, ok in conv.checks.items() if not ok]
        return Outcome(EXIT_FAILED, "failed checks: " + ", ".join(failed), report)
    return Outcome(EXIT_OK, "pass", report)


GRID_KEYS = ("delta", "delta_factor", "alpha", "beta", "segment_len")


def _grid_points(grid: dict) -> list[dict]:
    unknown = set(grid) - set(GRID_KEYS)
    if unknown:
        raise ConfigError(f"unknown grid keys: {sorted(unknown)}")
    if "delta" in grid and "delta_factor" in grid:
        raise ConfigError("grid may set delta or delta_factor, not both")
    keys = [k for k in GRID_KEYS if k in grid]
    if not keys or any(len(grid[k]) == 0 for k in keys):
        return []
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def _point_config(template: dict, point: dict) -> dict:
    data = copy.deepcopy(template)
    prm = data.setdefault("params", {})
    for k in ("alpha", "beta"):
        if k in point:
            prm[k] = point[k]
    if "delta" in point:
        prm["delta"] = point["delta"]
    if "delta_factor" in point:
        prm["delta"] = "auto"
        prm["auto_factor"] = point["delta_factor"]
    if "segment_len" in point:
        if "generator" not in data["schedule"]:
            raise ConfigError("segment_len can only be swept on generated schedules")
        data["schedule"]["segment_len"] = point["segment_len"]
        data.pop("joint_T", None)
    return data


def _sweep_one(args):
    index, point, data, out = args
    try:
        cfg = ScenarioConfig.from_dict(data)
        res = run_scenario(cfg, out)
    except ConfigError as exc:
        res = Outcome(EXIT_CONFIG, str(exc))
    except Exception as exc:  # a failing point must not abort the sweep
        res = Outcome(EXIT_FAILED, f"{type(exc).__name__}: {exc}")
    conv = res.payload.get("convergence", {})
    term = conv.get("terminal_errors", {})
    decay = conv.get("decay", {})
    row = {"run": index, **{k: point.get(k, "") for k in GRID_KEYS},
           "delta_used": res.payload.get("params", {}).get("delta", ""),
           "delta_star": res.payload.get("delta_star", ""),
           "x_err": term.get("x", ""), "s_err": term.get("s", ""), "nu_err": term.get("nu", ""),
           "lambda_hat": decay.get("lambda_hat") if decay.get("lambda_hat") is not None else "",
           "r_squared": decay.get("r_squared") if decay.get("r_squared") is not None else "",
           "pass": res.exit_code == EXIT_OK, "exit_code": res.exit_code,
           "message": res.message}
    return row


SUMMARY_FIELDS = ["run", *GRID_KEYS, "delta_used", "delta_star", "x_err", "s_err",
                  "nu_err", "lambda_hat", "r_squared", "pass", "exit_code", "message"]


def sweep(cfg: ScenarioConfig, grid: dict, out_dir=None, jobs: int = 1) -> list[dict]:
    """One independent run per grid point; writes ``summary.csv`` in the output root."""
    out = cfg.output_dir(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    raw = {k: v for k, v in cfg.data.items()}
    tasks = [(i, pt, _point_config(raw, pt), out / f"run_{i:03d}")
             for i, pt in enumerate(_grid_points(grid))]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_one, tasks))
    else:
        rows = [_sweep_one(t) for t in tasks]
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return rows
