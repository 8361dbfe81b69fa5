"""portalio: wearable LiDAR-inertial odometry with a deterministic simulator.

The toolkit couples an error-state iterated Kalman filter (IMU prediction,
point-to-plane LiDAR updates, optional external relative-pose updates) and a
dual-pipeline mode where two non-rigidly mounted devices share one voxel map.
A synthetic world generator provides scenes, trajectories, scan patterns and
IMU/relative-pose streams for end-to-end evaluation against ground truth.
"""

from portalio.geometry import Pose, Rotation, interpolate, so3_exp, so3_log

__all__ = ["Pose", "Rotation", "interpolate", "so3_exp", "so3_log"]
__version__ = "0.1.0"
