"""Grasp pose estimation from an organized cloud and detection boxes.

Per door box: ROI -> statistical filter -> voxel grid -> RANSAC plane. Per handle
box: ROI -> plane/protrusion split -> centroid -> closest door -> handle frame ->
grasp offset. Boxes are processed independently with the same seed, so one box's
result never depends on the others being present.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cloud import (DOOR_CLASSES, BoundingBox, DegenerateInput, EmptyInput, EmptyROI, NoOutliers,
                    PointCloud, TooFewPoints, centroid, ransac_plane, remove_statistical_outliers,
                    roi_segment, split_handle_from_background, voxel_downsample)
from .geometry import DegenerateNormal, Pose, handle_transform

ORIENTATIONS = ("horizontal", "vertical")
SOFT_ERRORS = (EmptyROI, NoOutliers, DegenerateNormal, TooFewPoints, DegenerateInput, EmptyInput)


class NoDoors(ValueError):
    pass


@dataclass(frozen=True)
class GraspConfig:
    k_neighbors: int = 20
    alpha: float = 1.0
    leaf: float = 0.01
    plane_threshold: float = 0.01
    max_iters: int = 500
    seed: int = 0
    offset_x: float = -0.05  # along the handle frame x
    vertical_roll: float = math.pi / 2
    origin: tuple = (0.0, 0.0, 0.0)  # sensor position, sets the normal sign

    def grasp_offset(self, orientation: str) -> Pose:
        roll = self.vertical_roll if orientation == "vertical" else 0.0
        return Pose.from_rotvec([roll, 0.0, 0.0], [self.offset_x, 0.0, 0.0])


@dataclass
class DoorPlane:
    box_index: int
    normal: np.ndarray
    d: float
    centroid: np.ndarray


@dataclass
class HandleDetection:
    orientation: str
    centroid: np.ndarray
    source_box: BoundingBox
    assigned_door: int | None = None


@dataclass
class GraspPose:
    pose: Pose
    handle_pose: Pose
    door_index: int   # index of the door box in the input list
    handle_index: int  # index of the handle box in the input list
    detection: HandleDetection | None = None

    def to_line(self) -> str:
        return f"{self.handle_index} {self.door_index} {self.pose.to_line()}"


@dataclass
class Failure:
    box_index: int
    error: Exception

    def to_line(self) -> str:
        return f"failure {self.box_index} {type(self.error).__name__} {self.error}"


@dataclass
class GraspResult:
    grasps: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    doors: list = field(default_factory=list)

    def __iter__(self):
        # unpacks as (grasps, failures)
        return iter((self.grasps, self.failures))


def classify_orientation(box: BoundingBox) -> str:
    """Vertical iff the box is taller than wide; squares count as horizontal."""
    return "vertical" if box.height > box.width else "horizontal"


def assign_closest_door(handle_centroid, doors) -> int:
    """Index of the door plane closest to the point; ``doors`` holds (normal, d) pairs."""
    if len(doors) == 0:
        raise NoDoors("no door planes to assign the handle to")
    o = np.asarray(handle_centroid, dtype=float)
    dist = [abs(float(np.asarray(n, dtype=float) @ o) + float(d)) for n, d in doors]
    return int(np.argmin(dist))  # argmin keeps the lowest index on ties


def door_plane(cloud: PointCloud, box: BoundingBox, cfg: GraspConfig, box_index: int = 0) -> DoorPlane:
    pts = cloud.points[roi_segment(cloud, box)]
    filtered = remove_statistical_outliers(pts, cfg.k_neighbors, cfg.alpha)
    down = voxel_downsample(filtered, cfg.leaf)
    plane = ransac_plane(down, cfg.plane_threshold, cfg.max_iters, cfg.seed, origin=cfg.origin)
    return DoorPlane(box_index, plane.normal, plane.d, centroid(down[plane.inlier_indices]))


def detect_handle(cloud: PointCloud, box: BoundingBox, cfg: GraspConfig) -> HandleDetection:
    raw = cloud.points[roi_segment(cloud, box)]
    handle_pts = split_handle_from_background(raw, cfg.plane_threshold, cfg.seed, cfg.max_iters)
    return HandleDetection(classify_orientation(box), centroid(handle_pts), box)


def estimate_grasp_poses(cloud: PointCloud, boxes, config: GraspConfig | None = None) -> GraspResult:
    """Grasp poses for every handle box that makes it through the pipeline.

    Failures (empty ROI, no protrusion, vertical normal, no usable door) are
    collected per box and do not stop the other boxes. Results follow input order.
    """
    cfg = config or GraspConfig()
    result = GraspResult()
    for i, box in enumerate(boxes):
        if box.class_label in DOOR_CLASSES:
            try:
                result.doors.append(door_plane(cloud, box, cfg, i))
            except SOFT_ERRORS as exc:
                result.failures.append(Failure(i, exc))
    planes = [(p.normal, p.d) for p in result.doors]
    for i, box in enumerate(boxes):
        if box.class_label in DOOR_CLASSES:
            continue
        try:
            det = detect_handle(cloud, box, cfg)
            k = assign_closest_door(det.centroid, planes)
            det.assigned_door = result.doors[k].box_index
            handle_pose = handle_transform(result.doors[k].normal, det.centroid)
        except (NoDoors,) + SOFT_ERRORS as exc:
            result.failures.append(Failure(i, exc))
            continue
        grasp = handle_pose @ cfg.grasp_offset(det.orientation)
        result.grasps.append(GraspPose(grasp, handle_pose, det.assigned_door, i, det))
    result.failures.sort(key=lambda f: f.box_index)
    return result
