"""In-hand suture needle pose tracking with grasp-state particle and histogram filters."""
from ._kernels import BACKEND
from .camera import CameraModel, DetectionFrame, StereoRig
from .config import TrialConfig, expand_sweep, parse_config
from .ensemble import WeightedEnsemble, effective_particles, stratified_resample
from .errors import (
    BehindCameraError,
    ConfigError,
    DegenerateGeometryError,
    InfeasibleStateError,
    InsufficientSamplesError,
)
from .filters import CHFrj, CHFrp, CPFrj, CPFrp, FilterConfig, PoseBox, PosePF, make_filter
from .grasp import GraspBounds, GraspState, NeedleSpec, is_feasible, pose_to_state, state_to_pose
from .harness import run_benchmark, run_trial
from .observation import ObservationModel, ObservationParams
from .se3 import HomogeneousTransform, Pose

__version__ = "0.1.0"
