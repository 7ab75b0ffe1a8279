"""Point-to-projected-arc observation likelihood.

Each candidate needle pose is drawn as a dense set of arc points, projected
into every camera, and each detected keypoint is scored by its squared pixel
distance to the nearest projected arc point.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .camera import DetectionFrame, StereoRig, arc_template
from .ensemble import WeightedEnsemble
from .grasp import NeedleSpec
from .se3 import Pose


@dataclass(frozen=True)
class ObservationParams:
    sigma_o: float = 6.0
    curve_samples: int = 64
    floor_miss_px: float = 50.0
    outlier_weight: float = 0.0

    def __post_init__(self):
        if not self.sigma_o > 0:
            raise ValueError("sigma_o must be positive")
        if self.curve_samples < 8:
            raise ValueError("curve_samples must be at least 8")
        if not 0.0 <= self.outlier_weight < 1.0:
            raise ValueError("outlier_weight must lie in [0, 1)")


def _pack_cameras(rig: StereoRig) -> np.ndarray:
    rows = []
    for cam in rig.cameras:
        rows.append(np.concatenate([[cam.fx, cam.fy, cam.cx, cam.cy],
                                    cam.extrinsic.R.T.ravel(), cam.extrinsic.t]))
    return np.ascontiguousarray(rows, dtype=float)


class ObservationModel:
    """Scores needle poses against a :class:`DetectionFrame`."""

    def __init__(self, rig: StereoRig, needle: NeedleSpec, params: ObservationParams | None = None):
        self.rig = rig
        self.needle = needle
        self.params = params or ObservationParams()
        self._arc = np.ascontiguousarray(
            arc_template(needle.radius, self.params.curve_samples, needle.arc_span))
        self._cams = _pack_cameras(rig)
        p = self.params
        self._inv2s2 = 1.0 / (2.0 * p.sigma_o**2)
        self._floor = p.floor_miss_px**2 * self._inv2s2
        cam = rig.left
        # uniform-outlier density relative to the Gaussian peak
        self._outlier_c = 2.0 * np.pi * p.sigma_o**2 / (cam.width * cam.height)

    def _detections(self, frame: DetectionFrame):
        uv = [np.asarray(p, dtype=float).reshape(-1, 2) for p in frame.points]
        cam_ids = np.concatenate([np.full(len(p), c, dtype=np.intc) for c, p in enumerate(uv)]) \
            if uv else np.zeros(0, dtype=np.intc)
        det = np.ascontiguousarray(np.vstack(uv) if uv else np.zeros((0, 2)))
        return det, np.ascontiguousarray(cam_ids, dtype=np.intc)

    def batch(self, R: np.ndarray, t: np.ndarray, frame: DetectionFrame):
        """Log-likelihoods (n,) and a flag marking candidates that only scored the floor."""
        det, cam_ids = self._detections(frame)
        p = self.params
        return _kernels.loglik_batch(
            np.ascontiguousarray(R, dtype=float).reshape(-1, 3, 3),
            np.ascontiguousarray(t, dtype=float).reshape(-1, 3),
            self._arc, self._cams, det, cam_ids,
            self._inv2s2, self._floor, p.outlier_weight, self._outlier_c,
        )

    def log_likelihood(self, pose: Pose, frame: DetectionFrame) -> float:
        ll, _ = self.batch(pose.rotation[None], pose.b[None], frame)
        return float(ll[0])

    def weight_update(self, weights: np.ndarray, R: np.ndarray, t: np.ndarray,
                      frame: DetectionFrame) -> np.ndarray:
        ll, floored = self.batch(R, t, frame)
        return reweight(weights, ll, floored)


def reweight(weights: np.ndarray, ll: np.ndarray, floored: np.ndarray | None = None) -> np.ndarray:
    """Multiply weights by exp(ll) in the log domain and renormalize.

    Weights are returned unchanged when every candidate scored the floor or
    when no candidate with positive weight has a finite likelihood.
    """
    weights = np.asarray(weights, dtype=float)
    if floored is not None and np.all(floored):
        return weights.copy()
    with np.errstate(divide="ignore"):
        logw = np.log(weights) + ll
    top = np.max(logw)
    if not np.isfinite(top):
        return weights.copy()
    w = np.exp(logw - top)
    return w / w.sum()


def log_likelihood(candidate_pose: Pose, frame: DetectionFrame, rig: StereoRig, needle: NeedleSpec,
                   params: ObservationParams | None = None) -> float:
    return ObservationModel(rig, needle, params).log_likelihood(candidate_pose, frame)


def weight_update(ensemble, R, t, frame: DetectionFrame, model: ObservationModel):
    """Return a new ensemble with observation-updated weights; states are shared."""
    return WeightedEnsemble(ensemble.states, model.weight_update(ensemble.weights, R, t, frame))
