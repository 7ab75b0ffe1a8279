"""Needle arc geometry, pinhole stereo projection and synthetic detections."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCameraError
from .se3 import HomogeneousTransform, Pose

MIN_DEPTH = 1e-6


@dataclass(frozen=True)
class CameraModel:
    fx: float = 256.0
    fy: float = 256.0
    cx: float = 128.0
    cy: float = 128.0
    width: int = 256
    height: int = 256
    extrinsic: HomogeneousTransform = field(default_factory=HomogeneousTransform.identity)

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (self.width > 0 and self.height > 0):
            raise ValueError("image size must be positive")

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        """Rig-frame points into this camera's frame."""
        return (np.asarray(points, dtype=float) - self.extrinsic.t) @ self.extrinsic.R

    def projection_matrix(self) -> np.ndarray:
        K = np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])
        inv = self.extrinsic.inverse()
        return K @ np.hstack([inv.R, inv.t[:, None]])

    def in_image(self, uv: np.ndarray) -> np.ndarray:
        uv = np.asarray(uv)
        return (uv[..., 0] >= 0) & (uv[..., 0] < self.width) & (uv[..., 1] >= 0) & (uv[..., 1] < self.height)


@dataclass(frozen=True)
class StereoRig:
    left: CameraModel
    right: CameraModel

    @classmethod
    def from_params(cls, fx=256.0, fy=256.0, cx=128.0, cy=128.0, width=256, height=256,
                    baseline_mm=5.0) -> StereoRig:
        if not baseline_mm > 0:
            raise ValueError("baseline must be positive")
        left = CameraModel(fx, fy, cx, cy, width, height)
        right = CameraModel(fx, fy, cx, cy, width, height,
                            HomogeneousTransform(np.eye(3), [baseline_mm, 0.0, 0.0]))
        return cls(left, right)

    @property
    def cameras(self) -> tuple[CameraModel, CameraModel]:
        return (self.left, self.right)

    @property
    def baseline(self) -> float:
        return float(np.linalg.norm(self.right.extrinsic.t - self.left.extrinsic.t))


@dataclass
class DetectionFrame:
    """Keypoints seen at one timestep plus the measured end-effector pose.

    ``points[c]`` is an (k, 2) array of pixel coordinates for camera ``c``
    (0 = left, 1 = right).
    """

    t: int
    points: list[np.ndarray]
    ee_pose: Pose

    @property
    def n_points(self) -> int:
        return sum(len(p) for p in self.points)


def arc_template(radius: float, k: int, span: float = np.pi) -> np.ndarray:
    """Needle-frame points evenly spaced in angle over ``[0, span]``."""
    if k < 2:
        raise ValueError("need at least two arc points")
    a = np.linspace(0.0, span, k)
    return radius * np.stack([np.cos(a), np.sin(a), np.zeros_like(a)], axis=-1)


def detection_template(radius: float, m: int, span: float = np.pi) -> np.ndarray:
    """Keypoint locations: evenly spaced including both tips, or the midpoint if m == 1."""
    if m == 1:
        a = np.array([span / 2])
        return radius * np.stack([np.cos(a), np.sin(a), np.zeros(1)], axis=-1)
    return arc_template(radius, m, span)


def needle_arc_points(needle_pose_cam: Pose, radius: float, k: int, span: float = np.pi) -> np.ndarray:
    return needle_pose_cam.to_transform().apply(arc_template(radius, k, span))


def project(p3, cam: CameraModel) -> np.ndarray:
    pc = cam.to_camera(p3)
    if pc[2] <= MIN_DEPTH:
        raise BehindCameraError(f"point depth {pc[2]:.3g} is not in front of the camera")
    return np.array([cam.fx * pc[0] / pc[2] + cam.cx, cam.fy * pc[1] / pc[2] + cam.cy])


def project_points(points: np.ndarray, cam: CameraModel):
    """Vectorised projection; returns (uv, in_front) with NaN where behind."""
    pc = cam.to_camera(points)
    z = pc[..., 2]
    front = z > MIN_DEPTH
    zs = np.where(front, z, np.nan)
    uv = np.stack([cam.fx * pc[..., 0] / zs + cam.cx, cam.fy * pc[..., 1] / zs + cam.cy], axis=-1)
    return uv, front


def generate_detections(gt_needle_pose: Pose, rig: StereoRig, m: int, sigma_n: float, rng,
                        radius: float = 5.4, span: float = np.pi, t: int = 0,
                        ee_pose: Pose | None = None) -> DetectionFrame:
    """Noisy keypoints of ``m`` evenly spaced arc points in both cameras.

    Points behind a camera or outside its image are dropped.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    if sigma_n < 0:
        raise ValueError("sigma_n must be nonnegative")
    rng = np.random.default_rng(rng)
    arc = gt_needle_pose.to_transform().apply(detection_template(radius, m, span))
    pts = []
    for cam in rig.cameras:
        uv, front = project_points(arc, cam)
        # noise is drawn for every point so streams stay aligned across cameras
        noise = rng.normal(0.0, 1.0, uv.shape) * sigma_n
        uv = uv + noise
        keep = front & cam.in_image(np.nan_to_num(uv, nan=-1.0))
        pts.append(uv[keep])
    return DetectionFrame(t, pts, ee_pose if ee_pose is not None else Pose.identity())


# --- detection CSV -----------------------------------------------------------
# Point rows have 4 fields (t, camera_id, u, v); end-effector rows have 7
# (t, bx, by, bz, qx, qy, qz).  Lines starting with '#' are comments.

DETECTION_HEADER = "# t,camera_id,u,v | t,bx,by,bz,qx,qy,qz"


class DetectionFormatError(ValueError):
    def __init__(self, message, row=None):
        super().__init__(f"row {row}: {message}" if row is not None else message)
        self.row = row


def write_detections(frames, fh) -> None:
    fh.write(DETECTION_HEADER + "\n")
    w = csv.writer(fh, lineterminator="\n")
    for f in frames:
        w.writerow([f.t, *map(repr, map(float, f.ee_pose.b)), *map(repr, map(float, f.ee_pose.q))])
        for cam_id, pts in enumerate(f.points):
            for u, v in pts:
                w.writerow([f.t, cam_id, repr(float(u)), repr(float(v))])


def read_detections(fh, n_cameras: int = 2) -> list[DetectionFrame]:
    """Parse the detection CSV; raises DetectionFormatError with a row number."""
    poses: dict[int, Pose] = {}
    pts: dict[int, list[list]] = {}
    order: list[int] = []
    for lineno, row in enumerate(csv.reader(fh), start=1):
        if not row or (row[0].lstrip().startswith("#")):
            continue
        try:
            t = int(row[0])
            if len(row) == 7:
                vals = [float(x) for x in row[1:]]
                if t in poses:
                    raise DetectionFormatError(f"duplicate end-effector pose for t={t}", lineno)
                poses[t] = Pose(vals[:3], vals[3:])
            elif len(row) == 4:
                cam = int(row[1])
                if not 0 <= cam < n_cameras:
                    raise DetectionFormatError(f"unknown camera id {cam}", lineno)
                uv = [float(row[2]), float(row[3])]
                if not np.all(np.isfinite(uv)):
                    raise DetectionFormatError("non-finite pixel coordinate", lineno)
                pts.setdefault(t, [[] for _ in range(n_cameras)])[cam].append(uv)
            else:
                raise DetectionFormatError(f"expected 4 or 7 columns, got {len(row)}", lineno)
        except DetectionFormatError:
            raise
        except ValueError as exc:
            raise DetectionFormatError(str(exc), lineno) from None
        if t not in order:
            order.append(t)
    if not order:
        raise DetectionFormatError("no frames")
    frames = []
    for t in sorted(order):
        if t not in poses:
            raise DetectionFormatError(f"frame t={t} has detections but no end-effector pose")
        cams = pts.get(t, [[] for _ in range(n_cameras)])
        frames.append(DetectionFrame(t, [np.asarray(c, dtype=float).reshape(-1, 2) for c in cams], poses[t]))
    return frames


def detections_to_string(frames) -> str:
    buf = io.StringIO()
    write_detections(frames, buf)
    return buf.getvalue()
