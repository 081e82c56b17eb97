"""Command-line front end: grasp estimation, model fitting, simulated opening,
prior-store management and the posterior-evolution experiments.

Exit codes: 0 success; 1 input/output, parse, configuration or runtime error;
2 no result (no grasp pose produced, or too few observations to fit).
"""
from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from .cloud import read_boxes, read_opc, write_boxes, write_opc
from .doorsim import (DoorSpec, SceneConfig, generate_scene, generate_trajectory, prismatic_door,
                      revolute_door, run_opening)
from .geometry import ParseError, handle_transform
from .grasp import GraspConfig, estimate_grasp_poses
from .kinfit import FitConfig, TooFewObservations, read_traj, write_traj
from .modelsel import select_model
from .priors import PROVENANCES, PriorStore, StoreError, select_with_priors, traj_filename

DEFAULT_STORE = "doorkin_store"
STORE_ENV = "DOORKIN_STORE"
EXIT_OK, EXIT_ERROR, EXIT_NO_RESULT = 0, 1, 2


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- run config

def _positive(v):
    return v > 0


def _nonneg(v):
    return v >= 0


def _unit_interval(v):
    return 0.0 <= v <= 1.0


@dataclass(frozen=True)
class RunConfig:
    """Every tunable of the command-line tools; text form is ``key = value`` lines."""

    seed: int = 0
    workers: int = 1
    noise_sigma: float = 0.005
    outlier_rate: float = 0.0
    model_sigma: float = 0.005
    mlesac_iters: int = 200
    em_steps: int = 10
    max_radius: float = 1.5
    nu_volume: float = 0.0  # 0 selects the trajectory-extent default
    min_gamma: float = 0.05
    plane_threshold: float = 0.01
    ransac_iters: int = 500
    k_neighbors: int = 20
    alpha: float = 1.0
    leaf: float = 0.01
    grasp_offset_x: float = -0.05
    step: float = 0.03
    open_iters: int = 40
    use_priors: bool = False
    store: str = ""  # empty: $DOORKIN_STORE, else ./doorkin_store

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            check = _RANGES.get(f.name)
            if check is not None and not check[0](v):
                raise ConfigError(f"{f.name} = {v!r} outside {check[1]}")

    def fit_config(self) -> FitConfig:
        return FitConfig(iters=self.mlesac_iters, sigma=self.model_sigma,
                         nu_volume=self.nu_volume or None, em_steps=self.em_steps,
                         seed=self.seed, max_radius=self.max_radius, min_gamma=self.min_gamma)

    def grasp_config(self) -> GraspConfig:
        return GraspConfig(k_neighbors=self.k_neighbors, alpha=self.alpha, leaf=self.leaf,
                           plane_threshold=self.plane_threshold, max_iters=self.ransac_iters,
                           seed=self.seed, offset_x=self.grasp_offset_x)

    def store_path(self) -> Path:
        return Path(self.store or os.environ.get(STORE_ENV) or DEFAULT_STORE)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_format_value(getattr(self, f.name))}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text: str, path=None, base: RunConfig | None = None) -> RunConfig:
        values, seen = {}, set()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep:
                raise ParseError("expected 'key = value'", path, lineno)
            if key in seen:
                raise ParseError(f"duplicate key {key!r}", path, lineno)
            seen.add(key)
            try:
                values[key] = _parse_value(key, value.strip())
            except ConfigError as exc:
                raise ParseError(str(exc), path, lineno) from None
        try:
            return replace(base or cls(), **values)
        except ConfigError as exc:
            raise ParseError(str(exc), path) from None

    def with_overrides(self, pairs) -> RunConfig:
        values = {}
        for pair in pairs:
            key, sep, value = pair.partition("=")
            if not sep:
                raise ConfigError(f"expected KEY=VALUE, got {pair!r}")
            values[key.strip()] = _parse_value(key.strip(), value.strip())
        return replace(self, **values)


_RANGES = {
    "seed": (_nonneg, "[0, inf)"),
    "workers": (_positive, "[1, inf)"),
    "noise_sigma": (_nonneg, "[0, inf)"),
    "outlier_rate": (_unit_interval, "[0, 1]"),
    "model_sigma": (_positive, "(0, inf)"),
    "mlesac_iters": (_positive, "[1, inf)"),
    "em_steps": (_nonneg, "[0, inf)"),
    "max_radius": (_positive, "(0, inf)"),
    "nu_volume": (_nonneg, "[0, inf)"),
    "min_gamma": (_unit_interval, "[0, 1]"),
    "plane_threshold": (_positive, "(0, inf)"),
    "ransac_iters": (_positive, "[1, inf)"),
    "k_neighbors": (_positive, "[1, inf)"),
    "alpha": (_nonneg, "[0, inf)"),
    "leaf": (_positive, "(0, inf)"),
    "step": (_positive, "(0, inf)"),
    "open_iters": (_positive, "[1, inf)"),
}
_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(key: str, text: str):
    if key not in _TYPES:
        raise ConfigError(f"unknown key {key!r}")
    kind = _TYPES[key]
    try:
        if kind == "bool":
            if text not in ("true", "false"):
                raise ValueError
            return text == "true"
        if kind == "int":
            return int(text)
        if kind == "float":
            v = float(text)
            if not math.isfinite(v):
                raise ValueError
            return v
        return text
    except ValueError:
        raise ConfigError(f"bad {kind} value {text!r} for {key}") from None


# ---------------------------------------------------------------- door specs

def parse_doorspec(text: str, path=None) -> DoorSpec:
    """Door description in ``key = value`` form.

    Required: ``kind`` (prismatic|revolute), ``normal`` and ``position`` (door
    normal toward the robot and handle centre; the handle frame is built from
    them), and ``radius`` for revolute doors. Optional: ``hinge_side`` (+1/-1),
    ``direction`` (prismatic), ``travel_limit``, ``noise_sigma``, ``outlier_rate``,
    ``outlier_min``, ``outlier_max``, ``door_class``.
    """
    vec_keys = {"normal", "position", "direction", "outlier_min", "outlier_max"}
    num_keys = {"radius", "hinge_side", "travel_limit", "noise_sigma", "outlier_rate"}
    str_keys = {"kind", "door_class"}
    vals, lines = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (s.strip() for s in line.partition("="))
        if not sep:
            raise ParseError("expected 'key = value'", path, lineno)
        if key in vals:
            raise ParseError(f"duplicate key {key!r}", path, lineno)
        try:
            if key in vec_keys:
                v = [float(x) for x in value.split()]
                if len(v) != 3:
                    raise ValueError(f"{key} needs 3 numbers")
                vals[key] = np.array(v)
            elif key in num_keys:
                vals[key] = float(value)
            elif key in str_keys:
                vals[key] = value
            else:
                raise ValueError(f"unknown key {key!r}")
        except ValueError as exc:
            raise ParseError(str(exc), path, lineno) from None
        lines[key] = lineno
    for key in ("kind", "normal", "position"):
        if key not in vals:
            raise ParseError(f"missing key {key!r}", path)
    kind = vals.pop("kind")
    if kind not in ("prismatic", "revolute"):
        raise ParseError(f"unknown kind {kind!r}", path, lines["kind"])
    try:
        a = vals.pop("normal")
        h = handle_transform(a / np.linalg.norm(a), vals.pop("position"))
        kw = {k: vals.pop(k) for k in ("noise_sigma", "outlier_rate", "door_class") if k in vals}
        if "outlier_min" in vals or "outlier_max" in vals:
            lo = vals.pop("outlier_min", h.translation - 0.5)
            hi = vals.pop("outlier_max", h.translation + 0.5)
            kw["outlier_volume"] = (tuple(lo), tuple(hi))
        if "travel_limit" in vals:
            kw["travel_limit"] = vals.pop("travel_limit")
        if kind == "prismatic":
            door = prismatic_door(h, vals.pop("direction", None), **kw)
        else:
            if "radius" not in vals:
                raise ValueError("revolute door needs 'radius'")
            door = revolute_door(h, vals.pop("radius"), vals.pop("hinge_side", 1.0), **kw)
    except ValueError as exc:
        raise ParseError(str(exc), path) from None
    if vals:
        raise ParseError(f"keys not used by a {kind} door: {sorted(vals)}", path)
    return door


def read_doorspec(path) -> DoorSpec:
    return parse_doorspec(Path(path).read_text(), path)


# ---------------------------------------------------------------- experiments

EXPERIMENTS = ("fig13a", "fig13b")
DOOR_KINDS = ("prismatic", "revolute")
REGIMES = {"none": (0, 0), "revolute": (3, 1), "prismatic": (1, 3), "balanced": (2, 2)}
PRIOR_LENGTH = 30


def experiment_door(kind: str, cfg: RunConfig, travel: float | None = None) -> DoorSpec:
    """Fixed test door: handle 1.9 m ahead of the robot, door normal facing it."""
    h = handle_transform([-1.0, 0.0, 0.0], [1.9, 0.3, 1.0])
    kw = dict(noise_sigma=cfg.noise_sigma, outlier_rate=cfg.outlier_rate,
              outlier_volume=((0.5, -1.0, 0.5), (2.5, 1.5, 1.5)))
    if kind == "prismatic":
        return prismatic_door(h, travel_limit=travel or 1.5, **kw)
    return revolute_door(h, 0.8, travel_limit=travel or 2.0, **kw)


@lru_cache(maxsize=None)
def regime_store(regime: str, cfg_text: str) -> PriorStore:
    """Prior store for a regime: full openings of the test doors, same handle start.

    Each stored trajectory covers the travel of a default-length opening run.
    """
    cfg = RunConfig.from_text(cfg_text)
    n_rev, n_pri = REGIMES[regime]
    span = cfg.step * cfg.open_iters
    store = PriorStore()
    doors = [("revolute", n_rev, span / 0.8), ("prismatic", n_pri, span)]
    for kind, count, travel in doors:
        door = replace(experiment_door(kind, cfg, travel), outlier_rate=0.0)
        for i in range(count):
            seed = 100_000 + cfg.seed + 1000 * DOOR_KINDS.index(kind) + i
            store.add(generate_trajectory(door, PRIOR_LENGTH, seed=seed))
    return store


def iterations_to(series, level: float = 0.9, n_obs=None) -> float:
    """Observation count at the first posterior >= ``level`` (inf if never)."""
    idx = np.flatnonzero(np.asarray(series) >= level)
    if idx.size == 0:
        return math.inf
    return float(n_obs[idx[0]] if n_obs is not None else idx[0] + 1)


def _experiment_run(job):
    door_kind, regime, seed, cfg_text = job
    cfg = RunConfig.from_text(cfg_text)
    door = experiment_door(door_kind, cfg)
    store = regime_store(regime, cfg_text) if regime != "none" else None
    log = run_opening(door, seed=seed, step=cfg.step, iters=cfg.open_iters,
                      use_priors=store is not None, store=store, fit=cfg.fit_config())
    return log.to_csv(), [r.n_obs for r in log.records], [
        (r.posterior["prismatic"], r.posterior["revolute"]) for r in log.records]


def _aggregate(results, iters: int) -> str:
    lines = ["n_obs,runs,mean_prismatic,std_prismatic,mean_revolute,std_revolute"]
    for n in range(1, iters + 1):
        vals = np.array([p[i] for _, ns, p in results for i, m in enumerate(ns) if m == n])
        if len(vals) == 0:
            continue
        mean, std = vals.mean(axis=0), vals.std(axis=0)
        lines.append(f"{n},{len(vals)},{float(mean[0])!r},{float(std[0])!r},"
                     f"{float(mean[1])!r},{float(std[1])!r}")
    return "\n".join(lines) + "\n"


def run_experiment(name: str, seeds: int, out_dir, cfg: RunConfig) -> dict:
    """Seeded batches of simulated openings; writes per-run logs and aggregate CSVs.

    Returns ``{(door_kind, regime): [per-run (csv, n_obs, posteriors)]}``. Runs
    use seeds ``cfg.seed .. cfg.seed + seeds - 1`` and are merged in seed order,
    so the output does not depend on ``cfg.workers``.
    """
    if name not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {name!r}")
    if seeds < 1:
        raise ValueError("seeds must be >= 1")
    out = Path(out_dir)
    (out / "runs").mkdir(parents=True, exist_ok=True)
    regimes = ["none"] if name == "fig13a" else list(REGIMES)
    cfg_text = cfg.to_text()
    groups = [(k, r) for k in DOOR_KINDS for r in regimes]
    jobs = [(k, r, cfg.seed + i, cfg_text) for k, r in groups for i in range(seeds)]
    if cfg.workers == 1:
        flat = [_experiment_run(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            flat = list(pool.map(_experiment_run, jobs, chunksize=1))
    results = {}
    for g, (kind, regime) in enumerate(groups):
        results[(kind, regime)] = flat[g * seeds:(g + 1) * seeds]

    summary = ["door,regime,runs,mean_true_final,final_true_winner_rate,median_obs_to_0.9"]
    for (kind, regime), res in results.items():
        stem = f"{name}_{kind}_door" + ("" if name == "fig13a" else f"_{regime}_prior")
        for i, (csv, _, _) in enumerate(res):
            (out / "runs" / f"{stem}_seed{cfg.seed + i}.csv").write_text(csv)
        (out / f"{stem}.csv").write_text(_aggregate(res, cfg.open_iters))
        j = DOOR_KINDS.index(kind)
        finals = np.array([p[-1][j] for _, _, p in res])
        hits = [iterations_to([q[j] for q in p], 0.9, ns) for _, ns, p in res]
        summary.append(f"{kind},{regime},{len(res)},{float(finals.mean())!r},"
                       f"{float(np.mean(finals > 0.5))!r},{float(np.median(hits))!r}")
    (out / f"{name}_summary.csv").write_text("\n".join(summary) + "\n")
    return results


# ---------------------------------------------------------------- commands

def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def cmd_grasp(args, cfg: RunConfig) -> int:
    try:
        cloud = read_opc(args.cloud)
        boxes = read_boxes(args.boxes, cloud.width, cloud.height)
    except (OSError, ValueError) as exc:
        _err(str(exc))
        return EXIT_ERROR
    result = estimate_grasp_poses(cloud, boxes, cfg.grasp_config())
    for g in result.grasps:
        print(g.to_line())
    for f in result.failures:
        print(f.to_line(), file=sys.stderr)
    return EXIT_OK if result.grasps else EXIT_NO_RESULT


def _model_lines(kind: str, fit) -> list[str]:
    vals = " ".join(f"{k} " + " ".join(repr(float(x)) for x in np.atleast_1d(v))
                    for k, v in fit.model.params().items())
    return [f"model {kind} {vals} gamma {fit.gamma!r} inliers {int(fit.inlier_flags.sum())}"]


def cmd_fit(args, cfg: RunConfig) -> int:
    try:
        traj = read_traj(args.traj)
    except (OSError, ValueError) as exc:
        _err(str(exc))
        return EXIT_ERROR
    try:
        sel = select_model(traj, cfg.fit_config())
    except TooFewObservations as exc:
        _err(str(exc))
        return EXIT_NO_RESULT
    except ValueError as exc:
        _err(str(exc))
        return EXIT_ERROR
    sys.stdout.write(sel.report())
    for c in sel.candidates:
        print("\n".join(_model_lines(c.kind, c.fit)))
    for kind, exc in sel.errors.items():
        print(f"failed {kind} {type(exc).__name__}")
    return EXIT_OK


def _load_store(cfg: RunConfig) -> PriorStore:
    return PriorStore.load(cfg.store_path())


def parameter_errors(true_model, model) -> dict:
    """Axis angle (deg) and, for matching revolute models, centre and radius errors (m)."""
    if model.kind == "prismatic":
        axis = model.e
    else:
        axis = model.n
    true_axis = true_model.e if true_model.kind == "prismatic" else true_model.n
    out = {"axis_error_deg": math.degrees(math.acos(min(1.0, abs(float(axis @ true_axis)))))}
    if model.kind == true_model.kind == "revolute":
        d = model.c - true_model.c
        d -= (d @ true_model.n) * true_model.n  # centre is free along the axis
        out["centre_error_m"] = float(np.linalg.norm(d))
        out["radius_error_m"] = abs(model.r - true_model.r)
    return out


def cmd_open(args, cfg: RunConfig) -> int:
    try:
        door = read_doorspec(args.doorspec)
        store = _load_store(cfg) if cfg.use_priors else None
    except (OSError, ValueError) as exc:
        _err(str(exc))
        return EXIT_ERROR
    code = EXIT_OK
    try:
        log = run_opening(door, seed=cfg.seed, step=cfg.step, iters=cfg.open_iters,
                          use_priors=cfg.use_priors, store=store, fit=cfg.fit_config())
    except Exception as exc:  # keep the partial log
        log = getattr(exc, "log", None)
        _err(f"{type(exc).__name__}: {exc}")
        code = EXIT_ERROR
        if log is None:
            return code
    Path(args.out).write_text(log.to_csv())
    print(f"stop_reason {log.stop_reason or 'iterations'}")
    print(f"n_obs {len(log.observations)}")
    if log.records:
        last = log.records[-1]
        print(f"winner {last.winner}")
        print(f"posterior_true {last.posterior[door.kind]!r}")
        print(f"obs_to_0.9 {iterations_to(log.posterior_series(door.kind), 0.9, [r.n_obs for r in log.records])!r}")
    if log.final_fit is not None:
        for k, v in parameter_errors(door.true_model, log.final_fit.best.fit.model).items():
            print(f"{k} {v!r}")
    return code


def cmd_priors(args, cfg: RunConfig) -> int:
    path = cfg.store_path()
    try:
        store = PriorStore.load(path)
    except (StoreError, OSError) as exc:
        _err(f"prior store {path}: {exc}")
        return EXIT_ERROR
    if args.action == "list":
        sys.stdout.write(store.manifest_text())
        return EXIT_OK
    try:
        traj = read_traj(args.traj)
    except (OSError, ValueError) as exc:
        _err(str(exc))
        return EXIT_ERROR
    if args.action == "add":
        store.add(traj, args.provenance or "human_demonstration")
        store.save(path)
        print(f"added {traj_filename(traj)} {traj.door_class} {store.entries[-1].provenance}")
        return EXIT_OK
    try:
        res = select_with_priors(traj, store, cfg.fit_config(),
                                 provenance=args.provenance or "robot_experience")
    except TooFewObservations as exc:
        _err(str(exc))
        return EXIT_NO_RESULT
    except ValueError as exc:
        _err(str(exc))
        return EXIT_ERROR
    res.store.save(path)
    sys.stdout.write(res.selection.report())
    if res.merged_index is not None:
        print(f"merged {res.merged_index} {traj_filename(res.store.entries[res.merged_index].trajectory)}")
    else:
        print(f"stored {traj_filename(traj)}")
    print(f"store_size {len(res.store)}")
    return EXIT_OK


def cmd_experiment(args, cfg: RunConfig) -> int:
    try:
        run_experiment(args.name, args.seeds, args.out, cfg)
    except (OSError, ValueError) as exc:
        _err(str(exc))
        return EXIT_ERROR
    sys.stdout.write((Path(args.out) / f"{args.name}_summary.csv").read_text())
    return EXIT_OK


def cmd_generate(args, cfg: RunConfig) -> int:
    try:
        door = read_doorspec(args.doorspec)
        if args.what == "traj":
            write_traj(generate_trajectory(door, args.n, seed=cfg.seed), args.out)
        else:
            scene_cfg = SceneConfig(depth_sigma=args.depth_sigma)
            cloud, boxes = generate_scene(door, seed=cfg.seed, config=scene_cfg)
            write_opc(cloud, args.out)
            write_boxes(boxes, args.boxes)
    except (OSError, ValueError) as exc:
        _err(str(exc))
        return EXIT_ERROR
    return EXIT_OK


def cmd_config(args, cfg: RunConfig) -> int:
    sys.stdout.write(cfg.to_text())
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration value")
    common.add_argument("--seed", type=int)
    common.add_argument("--store", help=f"prior store directory (default ${STORE_ENV} or ./{DEFAULT_STORE})")

    p = argparse.ArgumentParser(prog="doorkin", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("grasp", parents=[common], help="grasp poses from a cloud and boxes")
    s.add_argument("cloud")
    s.add_argument("boxes")
    s.set_defaults(func=cmd_grasp)

    s = sub.add_parser("fit", parents=[common], help="fit and rank models for a trajectory")
    s.add_argument("traj")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("open", parents=[common], help="simulate an opening from a door spec")
    s.add_argument("doorspec")
    s.add_argument("--out", required=True, help="opening log CSV")
    s.add_argument("--use-priors", action="store_true")
    s.set_defaults(func=cmd_open)

    s = sub.add_parser("priors", help="manage the prior store")
    psub = s.add_subparsers(dest="action", required=True)
    t = psub.add_parser("list", parents=[common])
    t.set_defaults(func=cmd_priors)
    for action in ("add", "run"):
        t = psub.add_parser(action, parents=[common])
        t.add_argument("traj")
        t.add_argument("--provenance", choices=PROVENANCES)
        t.set_defaults(func=cmd_priors)

    s = sub.add_parser("experiment", parents=[common], help="posterior-evolution experiments")
    s.add_argument("name", choices=EXPERIMENTS)
    s.add_argument("--seeds", type=int, default=10)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("generate", parents=[common], help="synthetic trajectory or scene files")
    s.add_argument("what", choices=("traj", "scene"))
    s.add_argument("doorspec")
    s.add_argument("--out", required=True, help=".traj or .opc output")
    s.add_argument("--boxes", help=".boxes output (scene)")
    s.add_argument("-n", type=int, default=40, help="observations (traj)")
    s.add_argument("--depth-sigma", type=float, default=0.002)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("config", parents=[common], help="print the effective configuration")
    s.set_defaults(func=cmd_config)
    return p


def load_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg = RunConfig.from_text(Path(args.config).read_text(), args.config)
    cfg = cfg.with_overrides(args.set)
    flags = {}
    if args.seed is not None:
        flags["seed"] = args.seed
    if args.store is not None:
        flags["store"] = args.store
    if getattr(args, "workers", None) is not None:
        flags["workers"] = args.workers
    if getattr(args, "use_priors", False):
        flags["use_priors"] = True
    return replace(cfg, **flags)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "experiment" and args.seed is None:
        parser.error("experiment requires --seed")
    if args.command == "generate" and args.what == "scene" and not args.boxes:
        parser.error("generate scene requires --boxes")
    try:
        cfg = load_config(args)
    except (OSError, ValueError) as exc:
        _err(str(exc))
        return EXIT_ERROR
    return args.func(args, cfg)


if __name__ == "__main__":
    sys.exit(main())
