"""Inverse-warp view synthesis with differentiable bilinear sampling.

A warp reconstructs the target frame by backprojecting the target depth,
moving the points through the frame pair's rigid transform (optionally plus
a per-pixel motion field), projecting into the source camera, and sampling
the source image. Sampling is bilinear with zero padding; an explicit
validity mask marks in-view, positive-depth pixels and is what losses must
respect.

The same machinery serves depth reprojection: the sampled source depth and
the transformed target depth (both living on the target grid, both expressed
in the source camera) feed the occlusion gate, while the sampled source
points pulled back into the target frame provide the reconstructed depth map
for depth-error weighting.

``forward=True`` applies the pair pose as given (use for warping frame 1
towards frame 2); ``forward=False`` applies its inverse without requiring a
chain rule through pose inversion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .geometry import (
    CameraModel,
    PointCloud,
    PoseSE3,
    Projection,
    backproject,
    backproject_vjp,
    project,
    project_vjp,
    ray_grid,
    rotation_matrix,
    transform_inverse_vjp,
    transform_vjp,
)


class BilinearPlan:
    """Shared corner geometry for sampling several maps at the same coords."""

    def __init__(self, u: np.ndarray, v: np.ndarray, shape: tuple[int, int]):
        H, W = shape
        self.shape = shape
        x0 = np.floor(u)
        y0 = np.floor(v)
        self.fx = u - x0
        self.fy = v - y0
        x0 = x0.astype(np.int64)
        y0 = y0.astype(np.int64)
        self.corners = []
        for dy in (0, 1):
            for dx in (0, 1):
                xi = x0 + dx
                yi = y0 + dy
                ok = (xi >= 0) & (xi < W) & (yi >= 0) & (yi < H)
                self.corners.append((np.clip(yi, 0, H - 1), np.clip(xi, 0, W - 1), ok))

    def weights(self):
        fx, fy = self.fx, self.fy
        return ((1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx)

    def sample(self, img: np.ndarray):
        """Returns (values, corner_values); out-of-range corners read zero."""
        vals = tuple(np.where(ok, img[yc, xc], 0.0) for (yc, xc, ok) in self.corners)
        w = self.weights()
        out = w[0] * vals[0] + w[1] * vals[1] + w[2] * vals[2] + w[3] * vals[3]
        return out, vals

    def vjp_coords(self, g: np.ndarray, corner_values) -> tuple[np.ndarray, np.ndarray]:
        v00, v01, v10, v11 = corner_values
        g_u = g * ((1 - self.fy) * (v01 - v00) + self.fy * (v11 - v10))
        g_v = g * ((1 - self.fx) * (v10 - v00) + self.fx * (v11 - v01))
        return g_u, g_v

    def vjp_image(self, g: np.ndarray) -> np.ndarray:
        out = np.zeros(self.shape)
        for w, (yc, xc, ok) in zip(self.weights(), self.corners):
            contrib = w * g
            np.add.at(out, (yc[ok], xc[ok]), contrib[ok])
        return out


@dataclass
class WarpResult:
    """Reconstruction plus everything the losses need alongside it."""

    image: np.ndarray  # sampled source image on the target grid
    mask: np.ndarray  # bool; in-view and z > Z_EPS
    u: np.ndarray  # continuous sample coordinates in the source frame
    v: np.ndarray
    z: np.ndarray  # target points' depth in the source camera
    src_depth: np.ndarray | None  # sampled source depth map, if one was given
    depth_recon: np.ndarray | None  # sampled source points pulled back to the target frame (z)


class WarpCache:
    __slots__ = (
        "cam", "pose", "forward", "points", "rotated", "q", "proj", "mask",
        "plan", "img_corners", "depth_corners", "ray_s", "pullback_rot",
        "had_motion", "result",
    )


def synthesize(
    i_src: np.ndarray,
    d_tgt: np.ndarray,
    pose: PoseSE3,
    motion: np.ndarray | None,
    cam: CameraModel,
    d_src: np.ndarray | None = None,
    forward: bool = True,
    want_cache: bool = False,
):
    """Inverse-warp the source image onto the target grid.

    Returns a :class:`WarpResult`; with ``want_cache=True`` also returns the
    cache consumed by :func:`synthesize_vjp`.
    """
    i_src = np.asarray(i_src, dtype=np.float64)
    if i_src.shape != cam.shape:
        raise InvalidInputError(f"source image shape {i_src.shape} != camera shape {cam.shape}")
    points = backproject(d_tgt, cam)
    if forward:
        rotated = points.xyz @ pose.R.T
        q_xyz = rotated + pose.t
    else:
        Rm = rotation_matrix(-pose.r)
        rotated = (points.xyz - pose.t) @ Rm.T
        q_xyz = rotated
    if motion is not None:
        q_xyz = q_xyz + motion
    q = PointCloud(q_xyz, points.valid)
    proj = project(q, cam)
    W, H = cam.width, cam.height
    inb = (proj.u >= 0) & (proj.u <= W - 1) & (proj.v >= 0) & (proj.v <= H - 1)
    mask = proj.valid & inb
    plan = BilinearPlan(np.where(mask, proj.u, 0.0), np.where(mask, proj.v, 0.0), cam.shape)
    image, img_corners = plan.sample(i_src)
    image = np.where(mask, image, 0.0)

    src_depth = depth_recon = None
    depth_corners = ray_s = pullback_rot = None
    if d_src is not None:
        src_depth, depth_corners = plan.sample(np.asarray(d_src, dtype=np.float64))
        # source-frame ray through the sample point; its 3D point pulled back
        # into the target frame gives the reconstructed target depth
        ray_sx = (np.where(mask, proj.u, 0.0) - cam.cx) / cam.fx
        ray_sy = (np.where(mask, proj.v, 0.0) - cam.cy) / cam.fy
        ray_s = np.stack([ray_sx, ray_sy, np.ones_like(ray_sx)], axis=-1)
        p_s = ray_s * src_depth[..., None]
        if forward:
            Rm = rotation_matrix(-pose.r)
            pullback_rot = (p_s - pose.t) @ Rm.T
            depth_recon = pullback_rot[..., 2].copy()
        else:
            pullback_rot = p_s @ pose.R.T
            depth_recon = pullback_rot[..., 2] + pose.t[2]

    result = WarpResult(
        image=image, mask=mask, u=proj.u, v=proj.v, z=proj.z,
        src_depth=src_depth, depth_recon=depth_recon,
    )
    if not want_cache:
        return result
    c = WarpCache()
    c.cam, c.pose, c.forward = cam, pose, forward
    c.points, c.rotated, c.q, c.proj, c.mask = points, rotated, q, proj, mask
    c.plan, c.img_corners, c.depth_corners = plan, img_corners, depth_corners
    c.ray_s, c.pullback_rot = ray_s, pullback_rot
    c.had_motion = motion is not None
    c.result = result
    return result, c


def synthesize_vjp(
    c: WarpCache,
    g_image: np.ndarray | None = None,
    g_src_depth: np.ndarray | None = None,
    g_depth_recon: np.ndarray | None = None,
    g_z: np.ndarray | None = None,
) -> dict:
    """Backward pass of :func:`synthesize`.

    Accepts upstream gradients for any subset of the result fields and
    returns {"d_tgt", "r", "t", "motion", "d_src"}. Gradients at masked-out
    pixels are discarded: losses never read them.
    """
    cam, pose, mask = c.cam, c.pose, c.mask
    zero = np.zeros(cam.shape)
    g_u = zero.copy()
    g_v = zero.copy()
    g_dsamp = zero.copy()
    g_r = np.zeros(3)
    g_t = np.zeros(3)
    g_d_src = None

    if g_image is not None:
        gu, gv = c.plan.vjp_coords(np.where(mask, g_image, 0.0), c.img_corners)
        g_u += gu
        g_v += gv
    if g_depth_recon is not None:
        g_pull = np.where(mask, g_depth_recon, 0.0)
        # depth_recon = (pullback rotation of p_s)_z (+ t_z when inverse);
        # p_s = ray_s * src_depth with ray_s = ((u-cx)/fx, (v-cy)/fy, 1)
        g_ps = np.zeros(cam.shape + (3,))
        if c.forward:
            Rm = rotation_matrix(-pose.r)
            g_pull3 = g_pull[..., None] * Rm[2]  # d z'/d p_s = Rm[2, :]
            g_ps += g_pull3
            # pose dependence of the pullback map: z' = (Rm (p_s - t))_z
            g_out = np.zeros(cam.shape + (3,))
            g_out[..., 2] = g_pull
            _, gr_pull, gt_pull, _ = transform_inverse_vjp(g_out, c.pullback_rot, pose)
            g_r += gr_pull
            g_t += gt_pull
        else:
            g_ps += g_pull[..., None] * pose.R[2]
            g_out = np.zeros(cam.shape + (3,))
            g_out[..., 2] = g_pull
            _, gr_pull, gt_pull, _ = transform_vjp(g_out, c.pullback_rot, pose)
            g_r += gr_pull
            g_t += gt_pull
        # p_s -> (src_depth, u, v)
        g_dsamp += np.sum(g_ps * c.ray_s, axis=-1)
        sd = c.result.src_depth
        g_u += g_ps[..., 0] * sd / cam.fx
        g_v += g_ps[..., 1] * sd / cam.fy
    if g_src_depth is not None:
        g_dsamp += np.where(mask, g_src_depth, 0.0)
    if c.depth_corners is not None and np.any(g_dsamp):
        gu, gv = c.plan.vjp_coords(g_dsamp, c.depth_corners)
        g_u += gu
        g_v += gv
        g_d_src = c.plan.vjp_image(g_dsamp)

    gz = None if g_z is None else np.where(mask, g_z, 0.0)
    g_q = project_vjp(np.where(mask, g_u, 0.0), np.where(mask, g_v, 0.0), gz, c.proj, c.q, cam)
    if c.forward:
        g_points, gr, gt, g_motion = transform_vjp(g_q, c.rotated, pose)
    else:
        g_points, gr, gt, g_motion = transform_inverse_vjp(g_q, c.rotated, pose)
    g_r += gr
    g_t += gt
    if not c.had_motion:
        g_motion = None
    g_d_tgt = backproject_vjp(g_points, cam)
    return {"d_tgt": g_d_tgt, "r": g_r, "t": g_t, "motion": g_motion, "d_src": g_d_src}


def reproject_depth(
    d_src: np.ndarray,
    pose: PoseSE3,
    motion: np.ndarray | None,
    cam: CameraModel,
    d_tgt: np.ndarray,
    forward: bool = True,
) -> WarpResult:
    """Depth-only warp: transformed target depth, sampled source depth, and
    the source depth pulled back onto the target grid.

    ``result.z`` is the target surface's depth seen from the source camera
    and ``result.src_depth`` the source's own prediction at the landing
    point; the occlusion gate compares the two. ``result.depth_recon`` is
    the reconstructed target depth used by depth-error weighting.
    """
    zeros = np.zeros(cam.shape)
    return synthesize(zeros, d_tgt, pose, motion, cam, d_src=d_src, forward=forward)
