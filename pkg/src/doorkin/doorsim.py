"""Ground-truth door simulator: noisy trajectories, synthetic scenes and the opening loop."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .cloud import BoundingBox, PointCloud
from .geometry import Pose, rotation_about
from .kinfit import (FitConfig, PrismaticModel, RevoluteModel, Trajectory, TRAJ_CLASSES,
                     residual)


class LimitReached(RuntimeError):
    """The door hit its travel limit; ``pose`` is the clamped final pose."""

    def __init__(self, msg: str, pose: Pose | None = None, advance: float = 0.0):
        super().__init__(msg)
        self.pose = pose
        self.advance = advance


@dataclass(frozen=True, eq=False)
class DoorSpec:
    """A simulated door.

    ``travel_limit`` is in metres for prismatic doors and radians for revolute ones.
    The opening direction is ``+e`` (prismatic) or positive rotation about ``n``
    (revolute). ``handle_start`` must lie on the model's path.
    """

    true_model: object
    handle_start: Pose
    travel_limit: float
    noise_sigma: float = 0.005
    outlier_rate: float = 0.0
    outlier_volume: tuple = ((-0.5, -0.5, -0.5), (0.5, 0.5, 0.5))
    door_class: str = "door"
    pull_direction: tuple | None = None  # None: handle frame x axis

    def __post_init__(self):
        if not 0.0 <= self.outlier_rate <= 1.0:
            raise ValueError("outlier_rate must be in [0, 1]")
        if not self.travel_limit > 0:
            raise ValueError("travel_limit must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.door_class not in TRAJ_CLASSES:
            raise ValueError(f"unknown door class {self.door_class!r}")
        lo, hi = (np.asarray(v, dtype=float) for v in self.outlier_volume)
        if np.any(lo > hi):
            raise ValueError("outlier_volume corners out of order")
        off = float(residual(self.true_model, self.handle_start))
        if off > 1e-9:
            raise ValueError(f"handle_start is {off:.3g} m off the door's path")

    @property
    def kind(self) -> str:
        return self.true_model.kind

    @property
    def pull(self) -> np.ndarray:
        if self.pull_direction is not None:
            v = np.asarray(self.pull_direction, dtype=float)
            return v / np.linalg.norm(v)
        return self.handle_start.rotation[:, 0].copy()

    def pose_at(self, q: float) -> Pose:
        """Handle pose after opening by ``q`` (metres or radians) from the start."""
        m, h = self.true_model, self.handle_start
        if m.kind == "prismatic":
            return Pose(h.rotation, h.translation + q * m.e)
        rot = rotation_about(m.n, q)
        return Pose(rot @ h.rotation, m.c + rot @ (h.translation - m.c))

    def arc_length(self, q: float) -> float:
        return q if self.kind == "prismatic" else q * self.true_model.r


def _project(model, p: np.ndarray) -> np.ndarray:
    if model.kind == "prismatic":
        return model.a + ((p - model.a) @ model.e) * model.e
    v = p - model.c
    v = v - (v @ model.n) * model.n
    return model.c + model.r * v / np.linalg.norm(v)


def prismatic_door(handle_start: Pose, direction=None, travel_limit: float = 1.5, **kw) -> DoorSpec:
    """Drawer-like door moving along ``direction`` (default: handle frame x)."""
    e = handle_start.rotation[:, 0] if direction is None else np.asarray(direction, dtype=float)
    return DoorSpec(PrismaticModel(handle_start.translation, e), handle_start, travel_limit, **kw)


def revolute_door(handle_start: Pose, radius: float, hinge_side: float = 1.0,
                  travel_limit: float = math.pi / 2, **kw) -> DoorSpec:
    """Hinged door whose handle starts moving along the handle frame x axis.

    The hinge axis is the handle frame z axis; ``hinge_side`` (+1/-1) puts the hinge
    on the handle frame's +y or -y side.
    """
    x, y, z = handle_start.rotation.T
    c = handle_start.translation + hinge_side * radius * y
    # opening rotation moves the handle along +x
    n = np.cross(handle_start.translation - c, x)
    return DoorSpec(RevoluteModel(c, n, radius), handle_start, travel_limit, **kw)


def generate_trajectory(spec: DoorSpec, n: int, seed: int = 0, return_labels: bool = False):
    """``n`` observations at evenly spaced opening parameters in ``[0, travel_limit]``.

    Translations get isotropic Gaussian noise; each observation is independently
    replaced, with probability ``outlier_rate``, by a uniform draw from ``outlier_volume``.
    With ``return_labels`` also return the boolean outlier mask.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    qs = np.linspace(0.0, spec.travel_limit, n)
    noise = rng.normal(0.0, 1.0, size=(n, 3)) * spec.noise_sigma
    is_out = rng.random(n) < spec.outlier_rate
    lo, hi = (np.asarray(v, dtype=float) for v in spec.outlier_volume)
    uniform = lo + rng.random((n, 3)) * (hi - lo)
    poses = []
    for i, q in enumerate(qs):
        p = spec.pose_at(q)
        t = uniform[i] if is_out[i] else p.translation + noise[i]
        poses.append(Pose(p.rotation, t))
    traj = Trajectory(poses, spec.door_class)
    return (traj, is_out) if return_labels else traj


def observe(spec: DoorSpec, pose: Pose, rng: np.random.Generator) -> Pose:
    """One noisy forward-kinematics reading of the true handle pose."""
    noise = rng.normal(0.0, 1.0, size=3) * spec.noise_sigma
    lo, hi = (np.asarray(v, dtype=float) for v in spec.outlier_volume)
    uniform = lo + rng.random(3) * (hi - lo)
    if rng.random() < spec.outlier_rate:
        return Pose(pose.rotation, uniform)
    return Pose(pose.rotation, pose.translation + noise)


def compliant_step(true_model, current: Pose, commanded_delta, max_step: float,
                   travel_left: float | None = None, travel_done: float | None = None) -> Pose:
    """Advance the door along its own path by the tangential part of the command.

    The commanded Cartesian displacement is projected onto the true path's tangent
    at ``current``; the resulting advance (arc length, clamped to ``+-max_step``)
    is applied on the path, so the returned pose is exactly on the manifold.
    ``travel_left`` (same units as the door's travel limit) raises
    :class:`LimitReached` when exceeded, carrying the pose clamped at the limit.
    ``travel_done`` bounds closing motions: the door stops at its closed position.
    """
    delta = np.asarray(commanded_delta, dtype=float)
    p = _project(true_model, current.translation)
    if true_model.kind == "prismatic":
        tangent = true_model.e
        s = float(np.clip(delta @ tangent, -max_step, max_step))
        q = s
    else:
        v = p - true_model.c
        tangent = np.cross(true_model.n, v) / true_model.r
        s = float(np.clip(delta @ tangent, -max_step, max_step))
        q = s / true_model.r
    if travel_done is not None:
        q = max(q, -travel_done)
    hit = travel_left is not None and q > travel_left
    if hit:
        q = travel_left
    if true_model.kind == "prismatic":
        pose = Pose(current.rotation, p + q * true_model.e)
    else:
        rot = rotation_about(true_model.n, q)
        pose = Pose(rot @ current.rotation, true_model.c + rot @ (p - true_model.c))
    if hit:
        raise LimitReached("door reached its travel limit", pose, q)
    return pose


@dataclass
class OpeningRecord:
    iteration: int
    n_obs: int
    posterior: dict
    winner: str
    command: np.ndarray
    achieved: Pose
    residual: float  # commanded target vs the true path
    merged: bool = False


@dataclass
class OpeningLog:
    records: list = field(default_factory=list)
    stop_reason: str | None = None
    final_fit: object = None
    observations: list = field(default_factory=list)

    def posterior_series(self, kind: str) -> np.ndarray:
        return np.array([r.posterior[kind] for r in self.records])

    def to_csv(self) -> str:
        lines = ["iter,n_obs,posterior_prismatic,posterior_revolute,winner,residual"]
        for r in self.records:
            lines.append(f"{r.iteration},{r.n_obs},{r.posterior['prismatic']!r},"
                         f"{r.posterior['revolute']!r},{r.winner},{r.residual!r}")
        return "\n".join(lines) + "\n"


@dataclass
class OpeningConfig:
    step: float = 0.03
    iters: int = 40
    use_priors: bool = False
    store: object = None
    seed: int = 0
    fit: FitConfig = field(default_factory=FitConfig)


def _command(model, current: Pose, step: float, grasp: Pose) -> tuple[np.ndarray, np.ndarray]:
    """Cartesian displacement the TSR for ``model`` prescribes for one increment."""
    from .tsr import tsr_from_prismatic, tsr_from_revolute, tsr_sample

    if model.kind == "prismatic":
        spec = tsr_from_prismatic(model, step, grasp)
        target = tsr_sample(spec, [0, 0, -step, 0, 0, 0])
    else:
        spec = tsr_from_revolute(model, step / model.r, grasp)
        target = tsr_sample(spec, [0, 0, 0, -step / model.r, 0, 0])
    return target.translation - current.translation, target.translation


def run_opening(door: DoorSpec, config: OpeningConfig | None = None, **overrides) -> OpeningLog:
    """Iterative compliant opening with model re-estimation after every step.

    Each iteration commands one increment along the current model estimate
    (prismatic along the pull direction while fewer than 3 observations exist),
    lets the door move compliantly, records a noisy observation and re-runs model
    selection (with the prior store if ``use_priors``). With fewer than 3
    observations the logged posterior is the uniform prior.
    """
    from .modelsel import select_model
    from .priors import select_with_priors

    cfg = replace(config or OpeningConfig(), **overrides)
    if cfg.iters < 1:
        raise ValueError("iters must be >= 1")
    rng = np.random.default_rng(cfg.seed)
    log = OpeningLog()
    current = door.handle_start
    q_total = 0.0
    obs: list[Pose] = []
    estimate = PrismaticModel(current.translation, door.pull)
    fit_cfg = replace(cfg.fit, seed=cfg.seed)
    for it in range(1, cfg.iters + 1):
        delta, target = _command(estimate, current, cfg.step, current)
        try:
            current = compliant_step(door.true_model, current, delta, cfg.step,
                                     travel_left=door.travel_limit - q_total,
                                     travel_done=q_total)
        except LimitReached as exc:
            log.stop_reason = "LimitReached"
            if exc.pose is not None and exc.advance > 0:
                current = exc.pose
            break
        q_total = _param_of(door, current)
        obs.append(observe(door, current, rng))
        traj = Trajectory(obs, door.door_class)
        merged = False
        try:
            if len(obs) < 3:
                post = {"prismatic": 0.5, "revolute": 0.5}
                winner = "prismatic"
            elif cfg.use_priors and cfg.store is not None:
                res = select_with_priors(traj, cfg.store, fit_cfg)
                sel = res.selection
                merged = res.merged_index is not None
                post = {k: sel.posterior(k) for k in ("prismatic", "revolute")}
                winner = sel.winner
                estimate = sel.best.fit.model
                log.final_fit = sel
            else:
                sel = select_model(traj, fit_cfg)
                post = {k: sel.posterior(k) for k in ("prismatic", "revolute")}
                winner = sel.winner
                estimate = sel.best.fit.model
                log.final_fit = sel
        except Exception as exc:
            exc.log = log
            raise
        res_cmd = float(residual(door.true_model, target))
        log.records.append(OpeningRecord(it, len(obs), post, winner, delta, current, res_cmd, merged))
    log.observations = obs
    return log


def _param_of(door: DoorSpec, pose: Pose) -> float:
    m, h = door.true_model, door.handle_start
    if m.kind == "prismatic":
        return float((pose.translation - h.translation) @ m.e)
    v0 = h.translation - m.c
    v1 = pose.translation - m.c
    return math.atan2(np.cross(v0, v1) @ m.n, v0 @ v1)


@dataclass(frozen=True)
class SceneConfig:
    """Synthetic depth camera and scene layout.

    The camera sits at the world origin and looks at the mean handle position
    with world z up. Doors are ``door_size`` (width, height) rectangles in the
    plane behind each handle; the handle is a flat plate of ``handle_size``
    (long, short) whose long side runs along the handle frame y axis, or z when
    ``vertical_handle``.
    """

    focal: float = 262.5
    depth_sigma: float = 0.002
    door_size: tuple = (0.8, 1.2)
    handle_size: tuple = (0.14, 0.035)
    handle_margin: float = 0.1  # handle centre to the door's free edge
    vertical_handle: bool = False
    handle_pad: int = 8
    door_pad: int = 2


@dataclass
class SceneTruth:
    door_normals: np.ndarray    # (k, 3), pointing toward the camera
    door_offsets: np.ndarray    # (k,), n . p + d = 0
    handle_centroids: np.ndarray  # (k, 3)
    labels: np.ndarray          # per pixel: -1 empty, 2i door i, 2i+1 handle i


def _look_at(target) -> np.ndarray:
    """Camera-to-world rotation; camera z forward, x right, y down."""
    fwd = np.asarray(target, dtype=float)
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross(fwd, [0.0, 0.0, 1.0])
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    return np.column_stack([right, down, fwd])


def _hit_rect(dirs, centre, normal, ax_u, ax_v, half_u, half_v):
    """Ray parameters of camera rays hitting an oriented rectangle (inf on a miss)."""
    denom = dirs @ normal
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (centre @ normal) / denom
    p = t[:, None] * dirs - centre
    inside = (np.abs(p @ ax_u) <= half_u) & (np.abs(p @ ax_v) <= half_v) & (t > 0)
    return np.where(inside, t, np.inf)


def _box(cam_rot, focal, cx, cy, corners, pad, width, height):
    c = corners @ cam_rot
    u = focal * c[:, 0] / c[:, 2] + cx
    v = focal * c[:, 1] / c[:, 2] + cy
    x0 = int(np.clip(np.floor(u.min()) - pad, 0, width - 1))
    x1 = int(np.clip(np.ceil(u.max()) + pad, 0, width - 1))
    y0 = int(np.clip(np.floor(v.min()) - pad, 0, height - 1))
    y1 = int(np.clip(np.ceil(v.max()) + pad, 0, height - 1))
    return x0, y0, x1, y1


def generate_scene(doors, handle_offset=(0.04, 0.0, 0.0), image_dims=(320, 240), seed: int = 0,
                   config: SceneConfig | None = None, return_truth: bool = False):
    """Organized depth cloud and detection boxes for one or more closed doors.

    ``handle_offset`` is the handle plate centre relative to the door surface
    point behind it, in the handle frame (x is the door normal toward the robot),
    so each door plane passes through ``handle_start.t - R @ handle_offset``.
    Depth noise is Gaussian along each camera ray. Boxes are listed door then
    handle for every door, in input order.
    """
    cfg = config or SceneConfig()
    if isinstance(doors, DoorSpec):
        doors = [doors]
    width, height = (int(v) for v in image_dims)
    if width <= 0 or height <= 0:
        raise ValueError("image dimensions must be positive")
    if not doors:
        raise ValueError("need at least one door")
    rng = np.random.default_rng(seed)
    offset = np.asarray(handle_offset, dtype=float)

    cam_rot = _look_at(np.mean([d.handle_start.translation for d in doors], axis=0))
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    xs, ys = np.meshgrid(np.arange(width), np.arange(height))
    rays = np.stack([(xs.ravel() - cx) / cfg.focal, (ys.ravel() - cy) / cfg.focal,
                     np.ones(width * height)], axis=1) @ cam_rot.T
    rays /= np.linalg.norm(rays, axis=1, keepdims=True)

    depth = np.full(width * height, np.inf)
    labels = np.full(width * height, -1)
    boxes, normals, offsets, centres = [], [], [], []
    for i, door in enumerate(doors):
        rot = door.handle_start.rotation
        ax, ay, az = rot.T
        h = door.handle_start.translation
        surface = h - rot @ offset
        # door extends from its free edge (near the handle) toward the hinge side
        side = 1.0
        if door.kind == "revolute":
            side = 1.0 if (door.true_model.c - h) @ ay >= 0 else -1.0
        dw, dh = cfg.door_size
        door_c = surface + side * (dw / 2 - cfg.handle_margin) * ay
        long_ax, short_ax = (az, ay) if cfg.vertical_handle else (ay, az)
        hl, hs = cfg.handle_size[0] / 2, cfg.handle_size[1] / 2
        for lab, (ctr, ua, va, hu, hv) in ((2 * i, (door_c, ay, az, dw / 2, dh / 2)),
                                           (2 * i + 1, (h, long_ax, short_ax, hl, hs))):
            t = _hit_rect(rays, ctr, ax, ua, va, hu, hv)
            closer = t < depth
            depth[closer] = t[closer]
            labels[closer] = lab
        door_corners = np.array([door_c + su * dw / 2 * ay + sv * dh / 2 * az
                                 for su in (-1, 1) for sv in (-1, 1)])
        handle_corners = np.array([h + su * hl * long_ax + sv * hs * short_ax
                                   for su in (-1, 1) for sv in (-1, 1)])
        boxes.append(BoundingBox(door.door_class, *_box(cam_rot, cfg.focal, cx, cy, door_corners,
                                                         cfg.door_pad, width, height)))
        boxes.append(BoundingBox("handle", *_box(cam_rot, cfg.focal, cx, cy, handle_corners,
                                                  cfg.handle_pad, width, height)))
        normals.append(ax)
        offsets.append(-float(ax @ surface))
        centres.append(h)

    noise = rng.normal(0.0, cfg.depth_sigma, size=width * height)
    hit = np.isfinite(depth)
    points = np.full((width * height, 3), np.nan)
    points[hit] = rays[hit] * (depth[hit] + noise[hit])[:, None]
    cloud = PointCloud(width, height, points)
    if not return_truth:
        return cloud, boxes
    truth = SceneTruth(np.array(normals), np.array(offsets), np.array(centres), labels)
    return cloud, boxes, truth
