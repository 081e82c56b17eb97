"""Organized point clouds, ROI cropping, filtering and RANSAC plane extraction."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .geometry import ParseError

BOX_CLASSES = ("door", "cabinet_door", "refrigerator_door", "handle")
DOOR_CLASSES = BOX_CLASSES[:3]


class EmptyROI(ValueError):
    pass


class TooFewPoints(ValueError):
    pass


class DegenerateInput(ValueError):
    pass


class NoOutliers(ValueError):
    pass


class EmptyInput(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Row-major organized cloud; invalid pixels hold NaN coordinates."""

    width: int
    height: int
    points: np.ndarray  # (width * height, 3)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("cloud dimensions must be positive")
        pts = np.array(self.points, dtype=float).reshape(-1, 3)
        if len(pts) != self.width * self.height:
            raise ValueError(f"expected {self.width * self.height} points, got {len(pts)}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def valid(self) -> np.ndarray:
        return np.all(np.isfinite(self.points), axis=1)

    def index(self, x: int, y: int) -> int:
        if not (0 <= x < self.width and 0 <= y < self.height):
            raise IndexError(f"pixel ({x}, {y}) outside {self.width}x{self.height}")
        return self.width * y + x


@dataclass(frozen=True)
class BoundingBox:
    class_label: str
    x_min: int
    y_min: int
    x_max: int
    y_max: int
    confidence: float = 1.0

    def __post_init__(self):
        if self.class_label not in BOX_CLASSES:
            raise ValueError(f"unknown class {self.class_label!r}")
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError("box corners out of order")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence outside [0, 1]")

    @property
    def width(self) -> int:
        return self.x_max - self.x_min

    @property
    def height(self) -> int:
        return self.y_max - self.y_min

    def to_line(self) -> str:
        return (f"{self.class_label} {self.x_min} {self.y_min} {self.x_max} {self.y_max} "
                f"{self.confidence!r}")


@dataclass(frozen=True, eq=False)
class PlaneModel:
    """Plane ``normal . p + d = 0`` with the RANSAC inlier/outlier split."""

    normal: np.ndarray
    d: float
    inlier_indices: np.ndarray
    outlier_indices: np.ndarray

    def distance(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.normal + self.d


def _finite(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    return pts[np.all(np.isfinite(pts), axis=1)]


def roi_segment(cloud: PointCloud, box: BoundingBox) -> np.ndarray:
    """Indices ``j = width * y + x`` of the valid points inside ``box`` (inclusive corners)."""
    if box.x_max >= cloud.width or box.y_max >= cloud.height or box.x_min < 0 or box.y_min < 0:
        raise ValueError(f"box {box} exceeds {cloud.width}x{cloud.height} cloud")
    xs = np.arange(box.x_min, box.x_max + 1)
    ys = np.arange(box.y_min, box.y_max + 1)
    idx = (cloud.width * ys[:, None] + xs[None, :]).ravel()
    idx = idx[cloud.valid[idx]]
    if idx.size == 0:
        raise EmptyROI(f"no valid depth inside {box}")
    return idx


def mean_neighbor_distances(points, k_neighbors: int) -> np.ndarray:
    """Mean distance from each point to its ``k`` nearest neighbours (self excluded)."""
    pts = np.asarray(points, dtype=float)
    dist, _ = cKDTree(pts).query(pts, k=k_neighbors + 1)
    # column 0 is the point itself (distance 0), or an exact duplicate of it
    return dist[:, 1:].mean(axis=1)


def statistical_inlier_mask(points, k_neighbors: int = 20, alpha: float = 1.0) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if k_neighbors < 1:
        raise ValueError("k_neighbors must be >= 1")
    if len(pts) <= k_neighbors:
        raise TooFewPoints(f"{len(pts)} points, need more than k={k_neighbors}")
    r = mean_neighbor_distances(pts, k_neighbors)
    mu = r.mean()
    sd = r.std(ddof=1)
    # slack for the rounding in mu when all r_j are equal
    slack = 1e-12 * max(1.0, abs(mu))
    return np.abs(r - mu) <= alpha * sd + slack


def remove_statistical_outliers(points, k_neighbors: int = 20, alpha: float = 1.0) -> np.ndarray:
    """Keep points whose mean k-NN distance lies in ``mu_r +- alpha * sigma_r``."""
    pts = _finite(points)
    return pts[statistical_inlier_mask(pts, k_neighbors, alpha)]


def voxel_downsample(points, leaf: float, return_counts: bool = False):
    """Replace the points of each occupied ``leaf``-sized voxel by their centroid."""
    if leaf <= 0:
        raise ValueError("leaf must be positive")
    pts = _finite(points)
    if len(pts) == 0:
        out = np.empty((0, 3))
        return (out, np.empty(0, dtype=int)) if return_counts else out
    keys = np.floor(pts / leaf).astype(np.int64)
    keys -= keys.min(axis=0)
    span = keys.max(axis=0) + 1
    if np.prod(span.astype(float)) < 2.0 ** 62:
        # lexicographic voxel order as one integer key; much faster than unique rows
        flat = (keys[:, 0] * span[1] + keys[:, 1]) * span[2] + keys[:, 2]
        _, inverse, counts = np.unique(flat, return_inverse=True, return_counts=True)
    else:
        _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    sums = np.zeros((len(counts), 3))
    np.add.at(sums, inverse, pts)
    out = sums / counts[:, None]
    return (out, counts) if return_counts else out


def centroid(points) -> np.ndarray:
    pts = _finite(points)
    if len(pts) == 0:
        raise EmptyInput("centroid of an empty point set")
    return pts.mean(axis=0)


def _draw_triples(rng: np.random.Generator, n: int, count: int) -> np.ndarray:
    idx = rng.integers(0, n, size=(count, 3))
    while True:
        bad = (idx[:, 0] == idx[:, 1]) | (idx[:, 0] == idx[:, 2]) | (idx[:, 1] == idx[:, 2])
        if not bad.any():
            return idx
        idx[bad] = rng.integers(0, n, size=(int(bad.sum()), 3))


def _orient(normal, d, origin):
    # sensor origin on the non-negative side
    if normal @ origin + d < 0:
        return -normal, -d
    return normal, d


def ransac_plane(points, dist_threshold: float = 0.01, max_iters: int = 500, seed: int = 0,
                 origin=(0.0, 0.0, 0.0), early_exit: float = 0.9, batch: int = 50) -> PlaneModel:
    """Inlier-count RANSAC plane fit followed by a least-squares polish on the consensus set.

    Hypotheses are drawn in a fixed order from ``seed`` and scored in batches; the
    first hypothesis reaching the maximum count wins. Scoring stops at the first
    hypothesis whose inlier ratio exceeds ``early_exit``; both rules follow hypothesis
    index order, so ``batch`` only affects speed.
    """
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    if n < 3:
        raise DegenerateInput(f"need at least 3 points, got {n}")
    origin = np.asarray(origin, dtype=float)
    rng = np.random.default_rng(seed)
    triples = _draw_triples(rng, n, max_iters)

    scale = np.ptp(pts, axis=0).max() or 1.0
    best_count, best = -1, None
    for start in range(0, max_iters, batch):
        tri = triples[start:start + batch]
        p0, p1, p2 = pts[tri[:, 0]], pts[tri[:, 1]], pts[tri[:, 2]]
        nrm = np.cross(p1 - p0, p2 - p0)
        length = np.linalg.norm(nrm, axis=1)
        ok = length > 1e-12 * scale * scale
        nrm[ok] /= length[ok, None]
        d = -np.einsum("ij,ij->i", nrm, p0)
        counts = (np.abs(pts @ nrm.T + d) <= dist_threshold).sum(axis=0)
        counts[~ok] = -1
        hit = np.flatnonzero(counts > early_exit * n)
        stop = hit.size > 0
        if stop:
            counts = counts[:hit[0] + 1]
        i = int(np.argmax(counts))
        if counts[i] > best_count:
            best_count, best = int(counts[i]), (nrm[i].copy(), float(d[i]))
        if stop:
            break
    if best is None or best_count < 0:
        raise DegenerateInput("all sampled triples are collinear")

    normal, d = best
    inl = np.abs(pts @ normal + d) <= dist_threshold
    if inl.sum() >= 3:
        c = pts[inl].mean(axis=0)
        _, s, vt = np.linalg.svd(pts[inl] - c, full_matrices=False)
        if s[1] > 1e-12 * scale:
            ref = vt[2] if vt[2] @ normal >= 0 else -vt[2]
            ref_d = -float(ref @ c)
            ref_inl = np.abs(pts @ ref + ref_d) <= dist_threshold
            if ref_inl.sum() >= inl.sum():
                normal, d, inl = ref, ref_d, ref_inl
    normal, d = _orient(normal, d, origin)
    return PlaneModel(normal=normal, d=d, inlier_indices=np.flatnonzero(inl),
                      outlier_indices=np.flatnonzero(~inl))


def split_handle_from_background(roi_points, dist_threshold: float = 0.01, seed: int = 0,
                                 max_iters: int = 500) -> np.ndarray:
    """Points of the handle ROI that do not belong to the door plane behind it."""
    pts = _finite(roi_points)
    plane = ransac_plane(pts, dist_threshold, max_iters=max_iters, seed=seed)
    if plane.outlier_indices.size == 0:
        raise NoOutliers("handle points are indistinguishable from the door plane")
    return pts[plane.outlier_indices]


def write_opc(cloud: PointCloud, path) -> None:
    lines = [f"OPC {cloud.width} {cloud.height}"]
    for p in cloud.points:
        if np.all(np.isfinite(p)):
            lines.append(" ".join(repr(float(v)) for v in p))
        else:
            lines.append("nan nan nan")
    Path(path).write_text("\n".join(lines) + "\n")


def read_opc(path) -> PointCloud:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().split()
        if len(header) != 3 or header[0] != "OPC":
            raise ParseError("expected header 'OPC <width> <height>'", path, 1)
        try:
            width, height = int(header[1]), int(header[2])
        except ValueError:
            raise ParseError("non-integer cloud dimensions", path, 1) from None
        if width <= 0 or height <= 0:
            raise ParseError("cloud dimensions must be positive", path, 1)
        pts = np.empty((width * height, 3))
        count = 0
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            if count >= len(pts):
                raise ParseError("more points than width*height", path, lineno)
            fields = line.split()
            if len(fields) != 3:
                raise ParseError("expected 'x y z'", path, lineno)
            try:
                pts[count] = [float(v) for v in fields]
            except ValueError:
                raise ParseError(f"bad number in {line.strip()!r}", path, lineno) from None
            count += 1
    if count != len(pts):
        raise ParseError(f"expected {len(pts)} points, found {count}", path, count + 2)
    return PointCloud(width, height, pts)


def write_boxes(boxes, path) -> None:
    Path(path).write_text("".join(b.to_line() + "\n" for b in boxes))


def read_boxes(path, width: int | None = None, height: int | None = None) -> list[BoundingBox]:
    path = Path(path)
    boxes = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        f = line.split()
        if len(f) != 6:
            raise ParseError("expected 'class x_min y_min x_max y_max confidence'", path, lineno)
        try:
            box = BoundingBox(f[0], int(f[1]), int(f[2]), int(f[3]), int(f[4]), float(f[5]))
        except ValueError as exc:
            raise ParseError(str(exc), path, lineno) from None
        if width is not None and (box.x_max >= width or box.x_min < 0):
            raise ParseError("box exceeds cloud width", path, lineno)
        if height is not None and (box.y_max >= height or box.y_min < 0):
            raise ParseError("box exceeds cloud height", path, lineno)
        boxes.append(box)
    return boxes
