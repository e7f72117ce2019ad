"""Action-conditioned 3D human motion generation on a Lie-algebra pose representation."""
from .kinematics import (JointPose, LiePose, Skeleton, exp_so3, forward_kinematics,
                         inverse_kinematics, log_so3, scale_skeleton, skew, unskew)

__version__ = "0.1.0"
