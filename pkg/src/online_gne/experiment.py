"""Config-driven experiments: build, run, persist and summarize."""
from __future__ import annotations

import copy
import hashlib
import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import __version__
from .bandit import RNG_ALGORITHM, BanditConfig, run_bandit
from .bregman import FeasibleSet, default_map
from .game import GameOracle, QuadraticGame, check_gradients, nash_cournot
from .graph import build_graph, named_graph
from .learner import AVERAGED, REGRET, TRACKING, StepSchedule, run
from .metrics import (
    EmptyComparatorSet, consensus_residual, dual_bound_ratio, regret_all, sublinearity_fit, tracking_error, violation,
)
from .trajectory import CSV_SCHEMA_VERSION, csv_columns, file_sha256, read_csv, write_csv

PRESET_DIR = Path(__file__).parent / "presets"
FIT_EPSILON = 1e-9


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    name: str
    game: dict
    graph: dict
    learner: str
    schedule: dict
    horizon: int
    seeds: list
    out: str
    init: str = "random"
    check_invariants: bool = True
    bandit: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    workers: int = 1

    def __post_init__(self):
        if self.learner not in ("full", "bandit"):
            raise ConfigError(f"learner must be 'full' or 'bandit', got {self.learner!r}")
        if not self.seeds:
            raise ConfigError("seeds must be a nonempty list")
        if int(self.horizon) < 1:
            raise ConfigError("horizon must be at least 1")
        if self.init not in ("zero", "random"):
            raise ConfigError(f"init must be 'zero' or 'random', got {self.init!r}")
        # exponents, game and graph are all checked at parse time
        self.build_schedule(None)
        game = self.build_game()
        self.build_graph(game.n_players)
        if self.learner == "bandit":
            self.build_bandit(game)

    # -- serialization ----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "experiment": {"name": self.name, "learner": self.learner, "horizon": int(self.horizon),
                           "seeds": [int(s) for s in self.seeds], "out": self.out,
                           "init": self.init, "check_invariants": bool(self.check_invariants),
                           "workers": int(self.workers)},
            "game": self.game, "graph": self.graph, "schedule": self.schedule,
            "bandit": self.bandit, "metrics": self.metrics,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = copy.deepcopy(d)
        try:
            exp = d["experiment"]
            return cls(name=exp.get("name", "experiment"), game=d["game"], graph=d.get("graph", {"kind": "ring"}),
                       learner=exp.get("learner", "full"), schedule=d["schedule"],
                       horizon=int(exp["horizon"]), seeds=list(exp.get("seeds", [0])),
                       out=exp.get("out", "runs/" + exp.get("name", "experiment")),
                       init=exp.get("init", "random"),
                       check_invariants=bool(exp.get("check_invariants", True)),
                       bandit=d.get("bandit", {}), metrics=d.get("metrics", {}),
                       workers=int(exp.get("workers", 1)))
        except KeyError as e:
            raise ConfigError(f"missing config key {e}") from None

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    # -- builders ---------------------------------------------------------
    def build_game(self) -> GameOracle:
        g = self.game
        name = g.get("name")
        Lambda = float(g.get("Lambda", 1.0))
        if name == "nash-cournot":
            kw = {}
            if self.learner == "bandit":
                kw = dict(interior_point=float(self.bandit.get("interior_point", 3.0)),
                          interior_radius=float(self.bandit.get("interior_radius", 1.5)))
            try:
                return nash_cournot(g.get("variant", "oscillating"), int(g.get("n_players", 20)),
                                    Lambda=Lambda, **kw)
            except ValueError as e:
                raise ConfigError(str(e)) from None
        if name == "quadratic":
            return _quadratic_from_config(g, Lambda)
        raise ConfigError(f"unknown game {name!r}")

    def build_graph(self, n: int):
        kind = self.graph.get("kind", "ring")
        if kind == "explicit":
            W = np.array(self.graph["weights"], dtype=float)
            if W.shape != (n, n):
                raise ConfigError(f"explicit weights must be {n}x{n}")
            return build_graph(W)
        return named_graph(kind, n)

    def build_schedule(self, horizon: Optional[int], gap_rates=None) -> StepSchedule:
        s = self.schedule
        if self.learner == "bandit":
            return StepSchedule(float(s["d1"]), float(s["d2"]), REGRET, horizon=horizon)
        mode = s.get("mode", REGRET)
        try:
            if mode == REGRET:
                return StepSchedule(float(s["a1"]), float(s["a2"]), REGRET, horizon=horizon)
            if mode in (TRACKING, AVERAGED):
                return StepSchedule(float(s["b1"]), float(s["b2"]), mode, gap_rates=gap_rates,
                                    horizon=horizon)
        except KeyError as e:
            raise ConfigError(f"schedule mode {mode!r} needs exponent {e}") from None
        raise ConfigError(f"unknown schedule mode {mode!r}")

    def build_bandit(self, game: GameOracle) -> BanditConfig:
        s = self.schedule
        try:
            return BanditConfig.for_sets(game.feasible_sets, float(s["d1"]), float(s["d2"]),
                                         float(s["d3"]), delta_scale=self.bandit.get("delta_scale"))
        except KeyError as e:
            raise ConfigError(f"bandit schedule needs exponent {e}") from None

    def build_maps(self, game: GameOracle):
        kind = self.game.get("mirror_map", "squared-norm")
        return tuple(default_map(kind, s) for s in game.feasible_sets)

    def horizon_grid(self) -> np.ndarray:
        T = int(self.horizon)
        m = self.metrics
        if "horizons" in m:
            h = np.array(sorted({int(v) for v in m["horizons"] if 1 <= int(v) <= T}))
        else:
            grid = m.get("grid", {})
            start = int(grid.get("start", max(1, T // 50)))
            num = int(grid.get("num", 50))
            stop = int(grid.get("stop", T))
            if grid.get("spacing", "linear") == "geom":
                h = np.unique(np.round(np.geomspace(start, stop, num)).astype(int))
            else:
                h = np.unique(np.round(np.linspace(start, stop, num)).astype(int))
        if h.size == 0 or h[-1] != T:
            h = np.append(h[h < T], T)
        return h


def _parse_set(d: dict) -> FeasibleSet:
    kind = d.get("kind", "box")
    if kind == "box":
        return FeasibleSet.box(d["lower"], d["upper"], d.get("interior_point"), d.get("interior_radius"))
    if kind == "ball":
        return FeasibleSet.ball(d["center"], float(d["radius"]))
    if kind == "simplex":
        return FeasibleSet.simplex(int(d["dimension"]), float(d.get("scale", 1.0)))
    raise ConfigError(f"unknown feasible set kind {kind!r}")


def _quadratic_from_config(g: dict, Lambda: float) -> QuadraticGame:
    try:
        dims = [int(v) for v in g["dims"]]
        if "sets" in g:
            sets = [_parse_set(s) for s in g["sets"]]
        else:
            sets = [_parse_set(g["set"])] * len(dims)
        return QuadraticGame(dims, g["Q"], g["q0"], g.get("q1", np.zeros(sum(dims))), g["G"],
                             g["b0"], g.get("b1", np.zeros_like(np.array(g["b0"], dtype=float))),
                             sets, profile=g.get("profile", "none"),
                             period=float(g.get("period", 12.0)), Lambda=Lambda)
    except KeyError as e:
        raise ConfigError(f"quadratic game needs key {e}") from None
    except ValueError as e:
        raise ConfigError(str(e)) from None


def load_config(path, seed=None, horizon=None, out=None, no_invariant_checks=False,
                workers=None) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    exp = raw.setdefault("experiment", {})
    if seed is not None:
        exp["seeds"] = [int(seed)]
    if horizon is not None:
        exp["horizon"] = int(horizon)
    if out is not None:
        exp["out"] = str(out)
    if no_invariant_checks:
        exp["check_invariants"] = False
    if workers is not None:
        exp["workers"] = int(workers)
    return ExperimentConfig.from_dict(raw)


def preset_path(name: str) -> Path:
    p = PRESET_DIR / f"{name}.toml"
    if not p.exists():
        raise ConfigError(f"no preset named {name!r}")
    return p


def list_presets() -> list:
    return sorted(p.stem for p in PRESET_DIR.glob("*.toml"))


# ---------------------------------------------------------------------------
# running


@dataclass
class Built:
    game: GameOracle
    graph: object
    schedule: StepSchedule
    maps: tuple
    bandit: Optional[BanditConfig] = None


def build(cfg: ExperimentConfig) -> Built:
    game = cfg.build_game()
    graph = cfg.build_graph(game.n_players)
    schedule = cfg.build_schedule(int(cfg.horizon), getattr(game, "gap_rates", None))
    bandit = cfg.build_bandit(game) if cfg.learner == "bandit" else None
    return Built(game, graph, schedule, cfg.build_maps(game), bandit)


def run_seed(cfg: ExperimentConfig, b: Built, seed: int, executor=None):
    T = int(cfg.horizon)
    if cfg.learner == "bandit":
        bc = BanditConfig(b.bandit.d1, b.bandit.d2, b.bandit.d3, b.bandit.interior_points,
                          b.bandit.interior_radii, b.bandit.delta_scale, rng_seed=int(seed))
        return run_bandit(b.game, b.graph, b.schedule, bc, b.maps, horizon=T, seed=int(seed),
                          init=cfg.init, check_invariants=cfg.check_invariants, executor=executor)
    return run(b.game, b.graph, b.schedule, b.maps, horizon=T, seed=int(seed), init=cfg.init,
               check_invariants=cfg.check_invariants, executor=executor)


def _fit(h, v, window=None):
    try:
        return sublinearity_fit(h, v, window=window)
    except ValueError:
        try:
            return sublinearity_fit(h, v, window=window, epsilon=FIT_EPSILON)
        except ValueError:
            return None


def summarize(cfg: ExperimentConfig, b: Built, logs: dict):
    """Metrics summary (JSON-ready) and tidy curve rows for every seed."""
    H = cfg.horizon_grid()
    rows = []
    per_seed = {}
    max_reg_avg, viol_avg = [], []
    limit = b.game.limit_game()
    for seed, log in logs.items():
        with warnings.catch_warnings():
            # fallbacks are counted in the summary instead
            warnings.simplefilter("ignore", EmptyComparatorSet)
            reps = regret_all(log, b.game, H)
        reg = np.array([r.regret for r in reps])  # (N, H)
        vio = violation(log, b.game, H)
        resid, bound = consensus_residual(log, b.graph, b.game.bounds)
        mx = reg.max(axis=0)
        max_reg_avg.append(mx / H)
        viol_avg.append(vio.averaged)
        fit_r = _fit(H, mx)
        fit_v = _fit(H, vio.R_g)
        info = {
            "final_regret_avg": [float(v) for v in reg[:, -1] / H[-1]],
            "final_max_regret_avg": float(mx[-1] / H[-1]),
            "final_violation_avg": float(vio.averaged[-1]),
            "regret_slope": None if fit_r is None else fit_r.slope,
            "regret_r2": None if fit_r is None else fit_r.r2,
            "violation_slope": None if fit_v is None else fit_v.slope,
            "violation_fit_epsilon": None if fit_v is None else fit_v.epsilon,
            "comparator_fallback_fraction": float(np.mean([r.empty.mean() for r in reps])),
            "max_consensus_ratio": float(np.max(resid / bound)),
            "max_dual_bound_ratio": float(np.max(dual_bound_ratio(log, b.game.bounds))),
        }
        for k, T in enumerate(H):
            for i in range(log.n_players):
                rows.append((str(seed), "regret", i, int(T), float(reg[i, k])))
            rows.append((str(seed), "violation", -1, int(T), float(vio.R_g[k])))
        if limit is not None and limit.gne is not None:
            err = tracking_error(log, limit)
            avg = tracking_error(log, limit, averaged=True)
            info["final_tracking_error"] = float(err[-1])
            info["final_averaged_error"] = float(avg[-1])
            fa = _fit(H, avg[H - 1])
            info["averaged_error_slope"] = None if fa is None else fa.slope
            for T in H:
                rows.append((str(seed), "tracking_error", -1, int(T), float(err[T - 1])))
                rows.append((str(seed), "averaged_error", -1, int(T), float(avg[T - 1])))
        per_seed[str(seed)] = info
    mean_reg = np.mean(max_reg_avg, axis=0)
    mean_vio = np.mean(viol_avg, axis=0)
    for k, T in enumerate(H):
        rows.append(("mean", "max_regret_avg", -1, int(T), float(mean_reg[k])))
        rows.append(("mean", "violation_avg", -1, int(T), float(mean_vio[k])))
    summary = {
        "horizons": [int(v) for v in H],
        "n_seeds": len(logs),
        "seeds": per_seed,
        "mean_final_max_regret_avg": float(mean_reg[-1]),
        "mean_final_violation_avg": float(mean_vio[-1]),
    }
    return summary, rows


def write_curves(rows, path):
    with open(path, "w") as fh:
        fh.write("seed,metric,player,T,value\n")
        for r in rows:
            fh.write(f"{r[0]},{r[1]},{r[2]},{r[3]},{r[4]!r}\n")


def manifest_for(cfg: ExperimentConfig, b: Built, files: dict, logs: dict, invariants: str):
    any_log = next(iter(logs.values()))
    bounds = b.game.bounds
    man = {
        "library": "online_gne",
        "version": __version__,
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "seeds": [int(s) for s in cfg.seeds],
        "sigma": b.graph.sigma,
        "bounds": {"L": bounds.L, "M": bounds.M, "mu_limit": bounds.mu_limit, "Lambda": bounds.Lambda},
        "csv_schema": {"version": CSV_SCHEMA_VERSION, "columns": csv_columns(any_log)},
        "files": files,
        "invariants": invariants,
    }
    if b.bandit is not None:
        man["rng"] = RNG_ALGORITHM
        man["delta_rule"] = "delta_{i,t} = min(0.99 r_i, c_i t^-d3), c_i = delta_scale or 0.99 r_i"
    return man


def _dump(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def execute(cfg: ExperimentConfig, out_dir=None):
    """Run every seed, write logs, manifest and reports; return the summary."""
    out = Path(out_dir or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    b = build(cfg)
    logs, files = {}, {}
    executor = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        for seed in cfg.seeds:
            log = run_seed(cfg, b, int(seed), executor)
            name = f"trajectory_seed{int(seed)}.csv"
            files[name] = write_csv(log, out / name)
            logs[int(seed)] = log
    finally:
        if executor is not None:
            executor.shutdown()
    summary, rows = summarize(cfg, b, logs)
    status = "held" if cfg.check_invariants else "not checked"
    summary["invariants"] = status
    _dump(manifest_for(cfg, b, files, logs, status), out / "manifest.json")
    _dump(summary, out / "report.json")
    write_curves(rows, out / "curves.csv")
    return summary


class CorruptRun(ValueError):
    pass


def load_run(run_dir):
    """Verify hashes and reload (manifest, config, built objects, logs) from a run directory."""
    run_dir = Path(run_dir)
    mpath = run_dir / "manifest.json"
    if not mpath.exists():
        raise CorruptRun(f"{run_dir}: no manifest.json")
    with open(mpath) as fh:
        man = json.load(fh)
    cfg = ExperimentConfig.from_dict(man["config"])
    if cfg.config_hash() != man.get("config_hash"):
        raise CorruptRun("manifest config hash mismatch")
    logs = {}
    for name, digest in man["files"].items():
        p = run_dir / name
        if not p.exists():
            raise CorruptRun(f"missing trajectory log {name}")
        if file_sha256(p) != digest:
            raise CorruptRun(f"hash mismatch for {name}: log was modified")
        seed = int(name.removeprefix("trajectory_seed").removesuffix(".csv"))
        logs[seed] = read_csv(p)
    return man, cfg, build(cfg), logs


def report(run_dir):
    man, cfg, b, logs = load_run(run_dir)
    summary, rows = summarize(cfg, b, logs)
    summary["invariants"] = man.get("invariants", "unknown")
    write_curves(rows, Path(run_dir) / "report_curves.csv")
    return summary


def validate(cfg: ExperimentConfig, n_probes: int = 10):
    """Dry-run checks; returns a list of (check, detail) that passed."""
    done = []
    b = build(cfg)
    done.append(("graph", f"sigma = {b.graph.sigma:.6f}"))
    done.append(("schedule", f"dual chain holds up to T = {cfg.horizon}"))
    if b.bandit is not None:
        done.append(("bandit", f"d = ({b.bandit.d1}, {b.bandit.d2}, {b.bandit.d3})"))
    worst = check_gradients(b.game, np.random.default_rng(0), n_probes=n_probes)
    done.append(("oracle", f"finite-difference discrepancy {worst:.2e}"))
    return done
