"""Pinhole camera model, SE(3) kinematics, and their analytic Jacobians.

Conventions (stated once, enforced by tests):
  - pixel (i, j) = (row, col); u runs along columns, v along rows
  - camera frame: x right, y down, z forward (meters)
  - rotations are axis-angle vectors r in R^3 (radians), applied via
    Rodrigues' formula
  - a pose (r, t) maps points as p' = R(r) p + t

All functions are pure and operate on float64 numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import InvalidInputError

Z_EPS = 1e-6  # meters; projections with z below this are invalid, not errors

_SMALL_ANGLE = 1e-7


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics shared by all frames of a pair."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidInputError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")
        if not (0 <= self.cx < self.width) or not (0 <= self.cy < self.height):
            raise InvalidInputError(
                f"principal point ({self.cx}, {self.cy}) outside image {self.width}x{self.height}"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


@lru_cache(maxsize=32)
def ray_grid(cam: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel ray slope grids (gx, gy): ray(i, j) = (gx*z, gy*z, z)."""
    jj = np.arange(cam.width, dtype=np.float64)
    ii = np.arange(cam.height, dtype=np.float64)
    gx = np.broadcast_to((jj - cam.cx) / cam.fx, (cam.height, cam.width)).copy()
    gy = np.broadcast_to(((ii - cam.cy) / cam.fy)[:, None], (cam.height, cam.width)).copy()
    return gx, gy


def skew(w: np.ndarray) -> np.ndarray:
    """Cross-product matrix: skew(w) @ v == w x v."""
    w = np.asarray(w, dtype=np.float64)
    return np.array(
        [
            [0.0, -w[2], w[1]],
            [w[2], 0.0, -w[0]],
            [-w[1], w[0], 0.0],
        ]
    )


def rotation_matrix(r: np.ndarray) -> np.ndarray:
    """Rodrigues' formula, series-expanded near zero for stability."""
    r = np.asarray(r, dtype=np.float64)
    theta2 = float(r @ r)
    theta = np.sqrt(theta2)
    K = skew(r)
    if theta < 1e-4:
        # sin(t)/t and (1-cos(t))/t^2 by series; truncation error O(t^4)
        a = 1.0 - theta2 / 6.0
        b = 0.5 - theta2 / 24.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta2
    return np.eye(3) + a * K + b * (K @ K)


def so3_log(R: np.ndarray) -> np.ndarray:
    """Axis-angle vector of a rotation matrix, with |r| <= pi."""
    R = np.asarray(R, dtype=np.float64)
    cos_theta = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    vee = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-6:
        return vee * (1.0 + theta * theta / 6.0)
    if theta > np.pi - 1e-6:
        # near pi the skew part degenerates; recover axis from R + I
        A = 0.5 * (R + np.eye(3))
        axis = np.sqrt(np.clip(np.diag(A), 0.0, None))
        k = int(np.argmax(axis))
        axis = A[:, k] / axis[k]
        axis = axis / np.linalg.norm(axis)
        # sign chosen to agree with the skew part where it is nonzero
        if vee @ axis < 0:
            axis = -axis
        return theta * axis
    return vee * (theta / np.sin(theta))


def rotation_vjp_matrices(r: np.ndarray) -> np.ndarray:
    """Matrices A_i with d(R(r) p)/dr_i = A_i @ (R(r) p), stacked (3, 3, 3).

    Compact closed form for the derivative of a rotation in exponential
    coordinates; the small-angle limit is A_i = skew(e_i).
    """
    r = np.asarray(r, dtype=np.float64)
    theta2 = float(r @ r)
    if theta2 < _SMALL_ANGLE**2:
        return np.stack([skew(e) for e in np.eye(3)])
    R = rotation_matrix(r)
    ImR = np.eye(3) - R
    A = np.empty((3, 3, 3))
    for i in range(3):
        w = np.cross(r, ImR[:, i])
        A[i] = (r[i] * skew(r) + skew(w)) / theta2
    return A


@dataclass(frozen=True)
class PoseSE3:
    """Rigid transform p' = R(r) p + t with axis-angle r (|r| < pi)."""

    r: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "r", np.asarray(self.r, dtype=np.float64).reshape(3))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64).reshape(3))
        if np.linalg.norm(self.r) >= np.pi:
            raise InvalidInputError(f"rotation magnitude {np.linalg.norm(self.r):.6f} not below pi")

    @property
    def R(self) -> np.ndarray:
        return rotation_matrix(self.r)

    def inverse(self) -> "PoseSE3":
        Rinv = rotation_matrix(-self.r)
        return PoseSE3(-self.r, -(Rinv @ self.t))

    def compose(self, other: "PoseSE3") -> "PoseSE3":
        """self after other: (self.compose(other))(p) = self(other(p))."""
        R = self.R @ other.R
        return PoseSE3(so3_log(R), self.R @ other.t + self.t)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.r, self.t])

    @staticmethod
    def from_vector(v: np.ndarray) -> "PoseSE3":
        v = np.asarray(v, dtype=np.float64).reshape(6)
        return PoseSE3(v[:3], v[3:])

    @staticmethod
    def identity() -> "PoseSE3":
        return PoseSE3()


@dataclass(frozen=True)
class PointCloud:
    """Grid-aligned per-pixel 3D points with an explicit validity flag."""

    xyz: np.ndarray  # (H, W, 3)
    valid: np.ndarray  # (H, W) bool

    @property
    def shape(self) -> tuple[int, int]:
        return self.xyz.shape[:2]


@dataclass(frozen=True)
class Projection:
    """Result of projecting a point cloud: sample coordinates plus depth."""

    u: np.ndarray  # (H, W) column coordinate
    v: np.ndarray  # (H, W) row coordinate
    z: np.ndarray  # (H, W) depth in the projecting camera
    valid: np.ndarray  # (H, W) bool, False where z <= Z_EPS or input invalid


def backproject(depth: np.ndarray, cam: CameraModel, valid: np.ndarray | None = None) -> PointCloud:
    """Lift a depth map to camera-frame points ((j-cx)/fx*d, (i-cy)/fy*d, d)."""
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != cam.shape:
        raise InvalidInputError(f"depth shape {depth.shape} != camera shape {cam.shape}")
    if valid is None:
        valid = np.ones(depth.shape, dtype=bool)
    bad = valid & ~(depth > 0)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise InvalidInputError(f"non-positive depth {depth[i, j]} at valid pixel ({i}, {j})")
    gx, gy = ray_grid(cam)
    xyz = np.stack([gx * depth, gy * depth, depth], axis=-1)
    return PointCloud(xyz, valid.copy())


def backproject_vjp(g_xyz: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Pull a gradient w.r.t. backprojected points back to the depth map."""
    gx, gy = ray_grid(cam)
    return g_xyz[..., 0] * gx + g_xyz[..., 1] * gy + g_xyz[..., 2]


def transform(
    points: PointCloud, pose: PoseSE3, motion: np.ndarray | None = None
) -> PointCloud:
    """Apply p' = R(r) p + t + T_motion(i, j); total on valid inputs."""
    xyz = points.xyz @ pose.R.T + pose.t
    if motion is not None:
        if motion.shape != points.xyz.shape:
            raise InvalidInputError(f"motion shape {motion.shape} != points shape {points.xyz.shape}")
        xyz = xyz + motion
    return PointCloud(xyz, points.valid)


def transform_inverse(
    points: PointCloud, pose: PoseSE3, motion: np.ndarray | None = None
) -> PointCloud:
    """Apply the inverse rigid map p' = R(-r) (p - t) + T_motion(i, j)."""
    Rm = rotation_matrix(-pose.r)
    xyz = (points.xyz - pose.t) @ Rm.T
    if motion is not None:
        if motion.shape != points.xyz.shape:
            raise InvalidInputError(f"motion shape {motion.shape} != points shape {points.xyz.shape}")
        xyz = xyz + motion
    return PointCloud(xyz, points.valid)


def transform_vjp(
    g_out: np.ndarray,
    rotated_xyz: np.ndarray,
    pose: PoseSE3,
    weight: np.ndarray | None = None,
):
    """Backward pass of :func:`transform`.

    ``g_out`` holds dL/dp' per point; ``rotated_xyz`` must be R(r) p, i.e.
    the output minus t and motion. Returns (g_points, g_r, g_t, g_motion).
    ``weight`` optionally masks the reductions (invalid pixels contribute
    zero).
    """
    if weight is not None:
        g_out = g_out * weight[..., None]
    R = pose.R
    g_points = g_out @ R
    g_t = g_out.reshape(-1, 3).sum(axis=0)
    A = rotation_vjp_matrices(pose.r)
    g_r = np.array([np.sum(g_out * (rotated_xyz @ A[i].T)) for i in range(3)])
    return g_points, g_r, g_t, g_out.copy()


def transform_inverse_vjp(
    g_out: np.ndarray,
    rotated_xyz: np.ndarray,
    pose: PoseSE3,
    weight: np.ndarray | None = None,
):
    """Backward pass of :func:`transform_inverse`.

    ``rotated_xyz`` must be R(-r)(p - t), i.e. the output minus motion.
    Returns (g_points, g_r, g_t, g_motion).
    """
    if weight is not None:
        g_out = g_out * weight[..., None]
    Rm = rotation_matrix(-pose.r)
    g_points = g_out @ Rm
    g_sum = g_out.reshape(-1, 3).sum(axis=0)
    g_t = -(Rm.T @ g_sum)
    A = rotation_vjp_matrices(-pose.r)
    g_r = -np.array([np.sum(g_out * (rotated_xyz @ A[i].T)) for i in range(3)])
    return g_points, g_r, g_t, g_out.copy()


def pose_jacobians(points: PointCloud, pose: PoseSE3):
    """Per-point Jacobians of p' = R p + t + T w.r.t. (r, t, T_motion).

    Returns (J_r, J_t, J_motion) where J_r has shape points + (3, 3) with
    J_r[..., a, i] = d p'_a / d r_i, and J_t = J_motion = identity.
    """
    q = points.xyz @ pose.R.T
    A = rotation_vjp_matrices(pose.r)
    J_r = np.stack([q @ A[i].T for i in range(3)], axis=-1)
    eye = np.broadcast_to(np.eye(3), points.xyz.shape[:-1] + (3, 3))
    return J_r, eye, eye


def project(points: PointCloud, cam: CameraModel) -> Projection:
    """Pinhole projection; near-zero or negative depth flags invalidity."""
    xyz = points.xyz
    z = xyz[..., 2]
    valid = points.valid & (z > Z_EPS)
    safe_z = np.where(valid, z, 1.0)
    u = cam.fx * xyz[..., 0] / safe_z + cam.cx
    v = cam.fy * xyz[..., 1] / safe_z + cam.cy
    return Projection(u, v, z.copy(), valid)


def project_vjp(
    g_u: np.ndarray,
    g_v: np.ndarray,
    g_z: np.ndarray | None,
    proj: Projection,
    points: PointCloud,
    cam: CameraModel,
) -> np.ndarray:
    """Gradient w.r.t. points of (u, v, z); invalid pixels contribute zero."""
    xyz = points.xyz
    z = np.where(proj.valid, xyz[..., 2], 1.0)
    gu = np.where(proj.valid, g_u, 0.0)
    gv = np.where(proj.valid, g_v, 0.0)
    g_xyz = np.zeros_like(xyz)
    g_xyz[..., 0] = cam.fx * gu / z
    g_xyz[..., 1] = cam.fy * gv / z
    g_xyz[..., 2] = -(cam.fx * xyz[..., 0] * gu + cam.fy * xyz[..., 1] * gv) / (z * z)
    if g_z is not None:
        g_xyz[..., 2] += g_z
    return g_xyz
