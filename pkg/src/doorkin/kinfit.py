"""Prismatic/revolute link models and MLESAC fitting of observed handle trajectories.

Only the translation part of each observation enters the fit. Hypotheses are
scored with the Gaussian-inlier / uniform-outlier mixture log-likelihood, the
mixing weight being estimated per hypothesis by a few EM steps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from itertools import combinations
from pathlib import Path

import numpy as np

from scipy.spatial.distance import pdist
from scipy.spatial.transform import Rotation

from .geometry import ParseError, Pose, rotation_about, rotation_angle

TRAJ_CLASSES = ("door", "cabinet_door", "refrigerator_door")
KINDS = ("prismatic", "revolute")


class CoincidentPoints(ValueError):
    pass


class CollinearPoints(ValueError):
    pass


class DegenerateInliers(ValueError):
    pass


class TooFewObservations(ValueError):
    pass


class AllOutliers(ValueError):
    pass


class NoValidHypothesis(ValueError):
    """Every minimal sample was degenerate or outside the radius bound."""


@dataclass(frozen=True, eq=False)
class Trajectory:
    observations: tuple
    door_class: str = "door"

    def __post_init__(self):
        object.__setattr__(self, "observations", tuple(self.observations))
        if not self.observations:
            raise ValueError("trajectory needs at least one observation")
        if self.door_class not in TRAJ_CLASSES:
            raise ValueError(f"unknown door class {self.door_class!r}")

    def __len__(self) -> int:
        return len(self.observations)

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.observations])

    def __add__(self, other: Trajectory) -> Trajectory:
        return Trajectory(self.observations + other.observations, self.door_class)

    def head(self, n: int) -> Trajectory:
        return Trajectory(self.observations[:n], self.door_class)

    def to_text(self) -> str:
        lines = [f"TRAJ {self.door_class} {len(self)}"]
        lines += [p.to_line() for p in self.observations]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, path=None) -> Trajectory:
        lines = text.splitlines()
        head = lines[0].split() if lines else []
        if len(head) != 3 or head[0] != "TRAJ":
            raise ParseError("expected header 'TRAJ <door_class> <N>'", path, 1)
        if head[1] not in TRAJ_CLASSES:
            raise ParseError(f"unknown door class {head[1]!r}", path, 1)
        try:
            n = int(head[2])
        except ValueError:
            raise ParseError("non-integer observation count", path, 1) from None
        poses = []
        for lineno, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            try:
                poses.append(Pose.from_line(line))
            except ValueError as exc:
                raise ParseError(str(exc), path, lineno) from None
        if len(poses) != n or n < 1:
            raise ParseError(f"header announces {n} poses, found {len(poses)}", path, len(lines))
        return cls(poses, head[1])


def read_traj(path) -> Trajectory:
    return Trajectory.from_text(Path(path).read_text(), path)


def write_traj(traj: Trajectory, path) -> None:
    Path(path).write_text(traj.to_text())


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


@dataclass(frozen=True, eq=False)
class PrismaticModel:
    a: np.ndarray
    e: np.ndarray
    kind = "prismatic"
    k = 6
    sample_size = 2

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float).copy())
        object.__setattr__(self, "e", _unit(self.e))

    def params(self) -> dict:
        return {"a": self.a, "e": self.e}

    def transformed(self, t: Pose) -> PrismaticModel:
        return PrismaticModel(t.apply(self.a), t.rotation @ self.e)


@dataclass(frozen=True, eq=False)
class RevoluteModel:
    c: np.ndarray
    n: np.ndarray
    r: float
    kind = "revolute"
    k = 7
    sample_size = 3

    def __post_init__(self):
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float).copy())
        object.__setattr__(self, "n", _unit(self.n))
        object.__setattr__(self, "r", float(self.r))
        if not self.r > 0:
            raise ValueError("radius must be positive")

    def params(self) -> dict:
        return {"c": self.c, "n": self.n, "r": self.r}

    def transformed(self, t: Pose) -> RevoluteModel:
        return RevoluteModel(t.apply(self.c), t.rotation @ self.n, self.r)


def _points(d) -> np.ndarray:
    if isinstance(d, Pose):
        return d.translation
    if isinstance(d, Trajectory):
        return d.positions
    if isinstance(d, (list, tuple)) and d and isinstance(d[0], Pose):
        return np.array([p.translation for p in d])
    return np.asarray(d, dtype=float)


def residual(model, d):
    """Distance of an observation (or ``(n, 3)`` positions) from the model's path."""
    p = _points(d)
    if model.kind == "prismatic":
        v = p - model.a
        perp = v - np.multiply.outer(v @ model.e, model.e)
        return np.linalg.norm(perp, axis=-1)
    v = p - model.c
    h = v @ model.n
    rho = np.linalg.norm(v - np.multiply.outer(h, model.n), axis=-1)
    return np.sqrt(h * h + (rho - model.r) ** 2)


def fit_minimal_prismatic(p1, p2) -> PrismaticModel:
    p1, p2 = np.asarray(p1, dtype=float), np.asarray(p2, dtype=float)
    span = np.linalg.norm(p2 - p1)
    if span <= 1e-12 * max(1.0, np.linalg.norm(p1)):
        raise CoincidentPoints("prismatic sample points coincide")
    return PrismaticModel(p1, (p2 - p1) / span)


def fit_minimal_revolute(p1, p2, p3) -> RevoluteModel:
    """Circumcircle; the normal follows the traversal ``p1 -> p2 -> p3``."""
    p1, p2, p3 = (np.asarray(p, dtype=float) for p in (p1, p2, p3))
    u, v = p2 - p1, p3 - p1
    w = np.cross(u, v)
    w2 = w @ w
    scale = max(u @ u, v @ v)
    if w2 <= 1e-24 * scale * scale or scale == 0:
        raise CollinearPoints("revolute sample points are collinear")
    center = p1 + (np.cross(w, u) * (v @ v) + np.cross(v, w) * (u @ u)) / (2.0 * w2)
    return RevoluteModel(center, w / np.sqrt(w2), np.linalg.norm(p1 - center))


def _plane_basis(n):
    ref = np.eye(3)[int(np.argmin(np.abs(n)))]
    b1 = _unit(ref - (ref @ n) * n)
    return b1, np.cross(n, b1)


def _refine_prismatic(model: PrismaticModel, pts: np.ndarray) -> PrismaticModel:
    c = pts.mean(axis=0)
    _, s, vt = np.linalg.svd(pts - c, full_matrices=False)
    if s[0] <= 1e-12:
        raise DegenerateInliers("inliers coincide")
    e = vt[0] if vt[0] @ model.e >= 0 else -vt[0]
    return PrismaticModel(c, e)


def _refine_revolute(model: RevoluteModel, pts: np.ndarray) -> RevoluteModel:
    c0 = pts.mean(axis=0)
    _, s, vt = np.linalg.svd(pts - c0, full_matrices=False)
    if s[1] <= 1e-12 * max(s[0], 1e-300):
        raise DegenerateInliers("inliers are collinear")
    n = vt[2] if vt[2] @ model.n >= 0 else -vt[2]
    b1, b2 = _plane_basis(n)
    q = np.column_stack([(pts - c0) @ b1, (pts - c0) @ b2])
    # algebraic (Kasa) circle: x^2 + y^2 = 2 cx x + 2 cy y + k
    A = np.column_stack([2 * q, np.ones(len(q))])
    sol, *_ = np.linalg.lstsq(A, (q * q).sum(axis=1), rcond=None)
    cx, cy = sol[:2]
    r = math.sqrt(max(sol[2] + cx * cx + cy * cy, 0.0))
    if r == 0.0:
        raise DegenerateInliers("degenerate circle")
    # one Gauss-Newton step on the geometric residual |q - c| - r
    diff = q - [cx, cy]
    dist = np.linalg.norm(diff, axis=1)
    if np.all(dist > 0):
        J = np.column_stack([-diff / dist[:, None], -np.ones(len(q))])
        step, *_ = np.linalg.lstsq(J, -(dist - r), rcond=None)
        cand = np.array([cx, cy, r]) + step
        if cand[2] > 0 and np.sum((np.linalg.norm(q - cand[:2], axis=1) - cand[2]) ** 2) <= np.sum((dist - r) ** 2):
            cx, cy, r = cand
    return RevoluteModel(c0 + cx * b1 + cy * b2, n, r)


def refine_on_inliers(model, inlier_points, max_radius: float = math.inf):
    """Least-squares polish on the consensus set; never increases the squared residual sum.

    Prismatic: centroid plus principal direction. Revolute: total-least-squares plane,
    algebraic circle of the in-plane projections, one Gauss-Newton step.
    """
    pts = _points(inlier_points).reshape(-1, 3)
    if len(pts) < model.sample_size:
        raise DegenerateInliers(f"{len(pts)} inliers, need {model.sample_size}")
    if model.kind == "prismatic":
        new = _refine_prismatic(model, pts)
    else:
        new = _refine_revolute(model, pts)
        if new.r > max_radius:
            return model
    if np.sum(residual(new, pts) ** 2) <= np.sum(residual(model, pts) ** 2):
        return new
    return model


@dataclass
class FitConfig:
    iters: int = 200
    sigma: float = 0.005
    nu_volume: float | None = None  # None: derived from the trajectory extent
    em_steps: int = 10
    seed: int = 0
    max_radius: float = 1.5
    reestimate_sigma: bool = False
    min_gamma: float = 0.05


@dataclass(eq=False)
class FitResult:
    model: object
    log_likelihood: float
    gamma: float
    inlier_flags: np.ndarray
    sigma: float
    nu: float
    em_trace: list = field(default_factory=list)
    rotation_residuals: np.ndarray | None = None

    @property
    def kind(self) -> str:
        return self.model.kind


GAMMA_CLAMP = (1e-3, 1.0 - 1e-3)
NU_FLOOR = 0.1


def default_nu(points) -> float:
    """Outlier residual range: the trajectory's diameter, floored at 0.1 m.

    The diameter (largest pairwise distance) is unchanged by rigid motions, so
    the likelihood does not depend on the reference frame.
    """
    pts = np.asarray(points, dtype=float)
    diameter = float(pdist(pts).max()) if len(pts) > 1 else 0.0
    return max(diameter, NU_FLOOR)


def gaussian_pdf(e, sigma: float):
    return np.exp(-0.5 * (e / sigma) ** 2) / (math.sqrt(2.0 * math.pi) * sigma)


def mixture_log_likelihood(errors, gamma, sigma: float, nu: float):
    """``sum_j log(gamma N(e_j; 0, sigma) + (1 - gamma) / nu)``; broadcasts over rows."""
    errors = np.asarray(errors, dtype=float)
    gamma = np.asarray(gamma, dtype=float)[..., None]
    return np.log(gamma * gaussian_pdf(errors, sigma) + (1.0 - gamma) / nu).sum(axis=-1)


def em_gamma(errors, sigma: float, nu: float, steps: int, gamma0: float = 0.5,
             trace: bool = True):
    """EM on the mixing weight only. ``errors`` is ``(n,)`` or ``(h, n)``.

    Returns the final gamma (per row) and the log-likelihood after each update
    (``steps + 1`` entries, the first at ``gamma0``). With ``trace=False`` only
    the final log-likelihood is computed and the list has one entry.
    """
    errors = np.asarray(errors, dtype=float)
    phi = gaussian_pdf(errors, sigma)
    out = 1.0 / nu
    gamma = np.full(errors.shape[:-1], gamma0)
    lo, hi = GAMMA_CLAMP

    def loglik(g):
        return np.log(g[..., None] * phi + (1.0 - g[..., None]) * out).sum(axis=-1)

    lls = [loglik(gamma)] if trace else []
    for _ in range(steps):
        g = gamma[..., None]
        gp = g * phi
        gamma = np.clip((gp / (gp + (1.0 - g) * out)).mean(axis=-1), lo, hi)
        if trace:
            lls.append(loglik(gamma))
    if not trace:
        lls.append(loglik(gamma))
    return gamma, lls


def _draw_samples(n: int, m: int, count: int, rng: np.random.Generator) -> np.ndarray:
    # m distinct indices per row, sorted so each sample follows observation order
    keys = rng.random((count, n))
    return np.sort(np.argpartition(keys, m - 1, axis=1)[:, :m], axis=1)


def _minimal_fits(kind: str, pts: np.ndarray, samples: np.ndarray, max_radius: float):
    if kind == "prismatic":
        p1, p2 = pts[samples[:, 0]], pts[samples[:, 1]]
        scale = max(float(np.ptp(pts, axis=0).max()), 1e-300)
        d = p2 - p1
        ln = np.linalg.norm(d, axis=1)
        ok = ln > 1e-12 * scale
        e = d / np.where(ok, ln, 1.0)[:, None]
        return (p1, e), ok
    p1, p2, p3 = pts[samples[:, 0]], pts[samples[:, 1]], pts[samples[:, 2]]
    u, v = p2 - p1, p3 - p1
    w = np.cross(u, v)
    w2 = np.einsum("ij,ij->i", w, w)
    uu = np.einsum("ij,ij->i", u, u)
    vv = np.einsum("ij,ij->i", v, v)
    ok = w2 > 1e-24 * np.maximum(uu, vv) ** 2
    safe = np.where(ok, w2, 1.0)
    c = p1 + (np.cross(w, u) * vv[:, None] + np.cross(v, w) * uu[:, None]) / (2.0 * safe[:, None])
    n = w / np.sqrt(safe)[:, None]
    r = np.linalg.norm(p1 - c, axis=1)
    ok &= (r > 0) & (r <= max_radius)
    return (c, n, r), ok


def _hypotheses(kind: str, pts: np.ndarray, cfg: FitConfig, rng):
    """Valid minimal-sample hypotheses, in draw order.

    When the number of distinct samples does not exceed the budget they are all
    enumerated. Otherwise samples are drawn until ``iters`` valid ones are found;
    degenerate or over-radius samples do not use up budget, but drawing stops
    after ``10 * iters`` attempts.
    """
    m = 2 if kind == "prismatic" else 3
    n = len(pts)
    if math.comb(n, m) <= cfg.iters:
        samples = np.array(list(combinations(range(n), m)), dtype=int)
        params, ok = _minimal_fits(kind, pts, samples, cfg.max_radius)
        return tuple(p[ok] for p in params)
    chunks, found, drawn = [], 0, 0
    while found < cfg.iters and drawn < 10 * cfg.iters:
        count = cfg.iters if drawn == 0 else max(cfg.iters - found, 16)
        samples = _draw_samples(n, m, count, rng)
        drawn += count
        params, ok = _minimal_fits(kind, pts, samples, cfg.max_radius)
        take = tuple(p[ok][: cfg.iters - found] for p in params)
        chunks.append(take)
        found += len(take[0])
    return tuple(np.concatenate([c[i] for c in chunks]) for i in range(len(chunks[0])))


def _batch_residuals(kind: str, params, pts: np.ndarray) -> np.ndarray:
    if kind == "prismatic":
        a, e = params
        v = pts[None, :, :] - a[:, None, :]
        along = np.einsum("hnk,hk->hn", v, e)
        perp = v - along[..., None] * e[:, None, :]
        return np.linalg.norm(perp, axis=-1)
    c, n, r = params
    v = pts[None, :, :] - c[:, None, :]
    h = np.einsum("hnk,hk->hn", v, n)
    rho = np.linalg.norm(v - h[..., None] * n[:, None, :], axis=-1)
    return np.sqrt(h * h + (rho - r[:, None]) ** 2)


def _orient_with_motion(model, pts: np.ndarray):
    """Point ``e`` / ``n`` along the direction the observations were traversed in."""
    if len(pts) < 2:
        return model
    if model.kind == "prismatic":
        s = pts @ model.e
        return model if s[-1] - s[0] >= 0 else PrismaticModel(model.a, -model.e)
    v = pts - model.c
    turn = np.sum(np.cross(v[:-1], v[1:]) @ model.n)
    return model if turn >= 0 else RevoluteModel(model.c, -model.n, model.r)


def rotation_residuals(model, traj: Trajectory) -> np.ndarray:
    """Diagnostic: angle between each observed rotation change and the model's prediction."""
    obs = traj.observations
    r0 = obs[0].rotation
    rots = np.array([p.rotation for p in obs])
    if model.kind == "prismatic":
        pred = np.broadcast_to(r0, rots.shape)
    else:
        v = traj.positions - model.c
        v -= np.outer(v @ model.n, model.n)
        ang = np.arctan2(np.cross(v[0], v) @ model.n, v @ v[0])
        pred = Rotation.from_rotvec(np.outer(ang, model.n)).as_matrix() @ r0
    # angle of pred^T R from its trace
    tr = np.einsum("hij,hij->h", pred, rots)
    sin_half = np.linalg.norm(rots - pred, axis=(1, 2)) / (2.0 * math.sqrt(2.0))
    return 2.0 * np.arctan2(sin_half, np.sqrt(np.maximum((1.0 + tr) / 4.0, 0.0)))


def mlesac_fit(traj, model_kind: str, config: FitConfig | None = None, **overrides) -> FitResult:
    """Robustly fit one candidate model to a trajectory.

    Every minimal-sample hypothesis is scored by its mixture log-likelihood after
    ``em_steps`` EM updates of the inlier ratio. The best hypothesis (lowest index
    on ties) is refined on the points with inlier responsibility above 0.5 and the
    likelihood is re-evaluated at the refined parameters.
    """
    cfg = replace(config or FitConfig(), **overrides)
    if model_kind not in KINDS:
        raise ValueError(f"unknown model kind {model_kind!r}")
    pts = _points(traj).reshape(-1, 3)
    m = 2 if model_kind == "prismatic" else 3
    if len(pts) < m:
        raise TooFewObservations(f"{model_kind} needs {m} observations, got {len(pts)}")
    nu = cfg.nu_volume if cfg.nu_volume is not None else default_nu(pts)
    sigma = cfg.sigma
    rng = np.random.default_rng(cfg.seed)

    params = _hypotheses(model_kind, pts, cfg, rng)
    if len(params[0]) == 0:
        raise NoValidHypothesis(f"no valid {model_kind} hypothesis")
    errs = _batch_residuals(model_kind, params, pts)
    gamma, trace = em_gamma(errs, sigma, nu, cfg.em_steps, trace=False)
    best = int(np.argmax(trace[-1]))

    if model_kind == "prismatic":
        model = PrismaticModel(params[0][best], params[1][best])
    else:
        model = RevoluteModel(params[0][best], params[1][best], params[2][best])
    g = gamma[best]
    phi = gaussian_pdf(errs[best], sigma)
    w = g * phi / (g * phi + (1.0 - g) / nu)
    inliers = w > 0.5
    if inliers.sum() >= m:
        try:
            cand = refine_on_inliers(model, pts[inliers], cfg.max_radius)
        except DegenerateInliers:
            cand = model
        cand_gamma, cand_trace = em_gamma(residual(cand, pts), sigma, nu, cfg.em_steps, trace=False)
        if cand_trace[-1] >= trace[-1][best]:
            model = cand

    e = residual(model, pts)
    if cfg.reestimate_sigma:
        g0, _ = em_gamma(e, sigma, nu, cfg.em_steps)
        phi = gaussian_pdf(e, sigma)
        w = g0 * phi / (g0 * phi + (1.0 - g0) / nu)
        if (w > 0.5).sum() >= m:
            mad = np.median(np.abs(e[w > 0.5]))
            sigma = max(1.4826 * mad, 1e-4)
    final_gamma, final_trace = em_gamma(e, sigma, nu, cfg.em_steps)
    final_gamma = float(final_gamma)
    if final_gamma < cfg.min_gamma:
        raise AllOutliers(f"inlier ratio {final_gamma:.3g} below {cfg.min_gamma}")
    phi = gaussian_pdf(e, sigma)
    w = final_gamma * phi / (final_gamma * phi + (1.0 - final_gamma) / nu)
    model = _orient_with_motion(model, pts[w > 0.5] if (w > 0.5).sum() >= 2 else pts)
    rot_res = rotation_residuals(model, traj) if isinstance(traj, Trajectory) else None
    return FitResult(
        model=model,
        log_likelihood=float(final_trace[-1]),
        gamma=final_gamma,
        inlier_flags=w > 0.5,
        sigma=sigma,
        nu=nu,
        em_trace=[float(t) for t in final_trace],
        rotation_residuals=rot_res,
    )
