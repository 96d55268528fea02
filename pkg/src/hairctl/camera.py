"""Pinhole cameras, orbit trajectories and per-frame projection of hair and rig.

Camera space: x right, y down, z forward (depth). World-to-camera poses are
RigidTransforms whose rotation rows are the camera's right, down and forward
axes in world coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .hair import HumanRig
from .transforms import RigidTransform

NEAR = 1e-6
WORLD_UP = np.array([0.0, 1.0, 0.0])


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float = 550.0
    fy: float = 550.0
    cx: float = 416.0
    cy: float = 240.0
    width: int = 832
    height: int = 480

    @classmethod
    def centered(cls, width=832, height=480, fx=550.0, fy=550.0):
        return cls(fx, fy, width / 2.0, height / 2.0, width, height)

    def validate(self, prefix="camera"):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError(f"{prefix}.fx", "focal lengths must be > 0")
        if not isinstance(self.width, int) or not isinstance(self.height, int) \
                or self.width < 1 or self.height < 1:
            raise ValidationError("resolution", "width and height must be positive integers")
        if not 0 <= self.cx < self.width:
            raise ValidationError(f"{prefix}.cx", "principal point must lie inside the image")
        if not 0 <= self.cy < self.height:
            raise ValidationError(f"{prefix}.cy", "principal point must lie inside the image")
        return self


@dataclass(eq=False)
class CameraTrajectory:
    poses: list
    intrinsics: CameraIntrinsics
    azimuths: list | None = None  # degrees, when built by orbit_trajectory

    def __len__(self):
        return len(self.poses)

    def validate(self):
        if len(self.poses) < 1:
            raise ValidationError("camera", "trajectory needs at least one pose")
        for i, p in enumerate(self.poses):
            if np.abs(p.rotation @ p.rotation.T - np.eye(3)).max() > 1e-6:
                raise ValidationError(f"camera.poses[{i}]", "rotation is not orthonormal")
        self.intrinsics.validate()
        return self


def look_at(eye, target, up=WORLD_UP) -> RigidTransform:
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward = forward / np.linalg.norm(forward)
    right = np.cross(forward, up)
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward])
    return RigidTransform(rot, -(rot @ eye))


def camera_center(pose: RigidTransform):
    return -(pose.rotation.T @ pose.translation)


def orbit_eye(target, radius, elevation, azimuth):
    """Eye position; azimuth 0 views the subject's face (+z), positive moves to the subject's right (-x)."""
    az = np.radians(azimuth)
    el = np.radians(elevation)
    offset = np.array([-np.sin(az) * np.cos(el), np.sin(el), np.cos(az) * np.cos(el)])
    return np.asarray(target, dtype=np.float64) + radius * offset


def interpolate_keyframes(keyframes, frame):
    """Piecewise-linear value at ``frame`` from ``(frame, value)`` pairs, clamped at both ends."""
    if frame <= keyframes[0][0]:
        return float(keyframes[0][1])
    if frame >= keyframes[-1][0]:
        return float(keyframes[-1][1])
    for (f0, v0), (f1, v1) in zip(keyframes, keyframes[1:]):
        if f0 <= frame <= f1:
            if frame == f1:
                return float(v1)
            u = (frame - f0) / (f1 - f0)
            return float(v0 + u * (v1 - v0))
    raise AssertionError("unreachable")


def validate_keyframes(keyframes, name="camera.azimuth_keyframes"):
    if not keyframes:
        raise ValidationError(name, "need at least one keyframe")
    if keyframes[0][0] != 0:
        raise ValidationError(name, "first keyframe must be at frame 0")
    for i in range(1, len(keyframes)):
        if not keyframes[i][0] > keyframes[i - 1][0]:
            raise ValidationError(name, "keyframe frames must strictly increase")


def orbit_trajectory(target, radius, elevation, azimuth_keyframes, intrinsics: CameraIntrinsics,
                     frame_count: int) -> CameraTrajectory:
    if not radius > 0:
        raise ValidationError("camera.radius", "must be > 0")
    if not abs(elevation) < 89.0:
        raise ValidationError("camera.elevation", "must be within (-89, 89) degrees")
    validate_keyframes(azimuth_keyframes)
    azimuths = [interpolate_keyframes(azimuth_keyframes, f) for f in range(frame_count)]
    poses = [look_at(orbit_eye(target, radius, elevation, a), target) for a in azimuths]
    return CameraTrajectory(poses, intrinsics, azimuths).validate()


def project_point(pose: RigidTransform, intrinsics: CameraIntrinsics, p):
    """Return ``(pixel, depth, in_front)``; pixel is None for points behind the near plane."""
    q = pose.apply(p)
    if q[2] <= NEAR:
        return None, float(q[2]), False
    u = intrinsics.cx + intrinsics.fx * q[0] / q[2]
    v = intrinsics.cy + intrinsics.fy * q[1] / q[2]
    return np.array([u, v]), float(q[2]), True


def _pixels(q, intr):
    return np.stack([intr.cx + intr.fx * q[..., 0] / q[..., 2],
                     intr.cy + intr.fy * q[..., 1] / q[..., 2]], axis=-1)


@dataclass(eq=False)
class ProjectedFrame:
    """Projected geometry for one frame.

    ``segments`` rows are ``(x0, y0, z0, x1, y1, z1)`` in pixels and camera
    depth, ordered by (strand, segment); ``segment_ids`` holds those indices.
    ``skeleton`` rows are ``(x, y, depth, visible)``. Proxies stay in camera
    space so depth can be resolved exactly per pixel.
    """

    strand_count: int
    segments: np.ndarray
    segment_ids: np.ndarray
    skeleton: np.ndarray
    head_center: np.ndarray
    head_radius: float
    capsules: np.ndarray  # (k, 7): ax, ay, az, bx, by, bz, radius
    intrinsics: CameraIntrinsics

    def polylines(self):
        """Retained points per strand, root to tip; a clipped strand may hold several runs."""
        out = [[] for _ in range(self.strand_count)]
        last_end = {}
        for (sid, k), seg in zip(self.segment_ids, self.segments):
            sid = int(sid)
            if last_end.get(sid) != (k - 1, tuple(seg[:3])):
                out[sid].append(seg[:3])
            out[sid].append(seg[3:])
            last_end[sid] = (k, tuple(seg[3:]))
        return [np.array(p).reshape(-1, 3) for p in out]


def _clip_segments(a, b):
    """Clip camera-space segments to z >= NEAR; returns clipped endpoints and a keep mask."""
    za, zb = a[:, 2], b[:, 2]
    keep = (za > NEAR) | (zb > NEAR)
    a, b = a.copy(), b.copy()
    cut_a = keep & (za <= NEAR)
    cut_b = keep & (zb <= NEAR)
    if cut_a.any():
        s = (NEAR - za[cut_a]) / (zb[cut_a] - za[cut_a])
        a[cut_a] = a[cut_a] + s[:, None] * (b[cut_a] - a[cut_a])
        a[cut_a, 2] = NEAR
    if cut_b.any():
        s = (NEAR - zb[cut_b]) / (za[cut_b] - zb[cut_b])
        b[cut_b] = b[cut_b] + s[:, None] * (a[cut_b] - b[cut_b])
        b[cut_b, 2] = NEAR
    return a, b, keep


def _ray_hits_sphere_before(origin_dir, center, radius, depth):
    """Whether the camera ray toward a point at ``depth`` meets the sphere earlier."""
    d = origin_dir / origin_dir[2]
    a = d @ d
    b = -2.0 * (d @ center)
    c = center @ center - radius * radius
    disc = b * b - 4 * a * c
    if disc < 0:
        return False
    t = (-b - np.sqrt(disc)) / (2 * a)
    return 0 < t < depth - 0.01


def project_frame(positions, counts, rig: HumanRig, pose: RigidTransform,
                  intrinsics: CameraIntrinsics) -> ProjectedFrame:
    """Project one frame. ``rig`` must already carry the frame's head pose."""
    positions = np.asarray(positions, dtype=np.float64)
    counts = np.asarray(counts)
    n_strands = len(counts)
    if n_strands:
        q = pose.apply(positions.reshape(-1, 3)).reshape(positions.shape)
        vmax = positions.shape[1]
        seg_valid = np.arange(vmax - 1)[None, :] < (counts[:, None] - 1)
        sid, kid = np.nonzero(seg_valid)
        a, b, keep = _clip_segments(q[sid, kid], q[sid, kid + 1])
        a, b, sid, kid = a[keep], b[keep], sid[keep], kid[keep]
        segments = np.concatenate([_pixels(a, intrinsics), a[:, 2:3],
                                   _pixels(b, intrinsics), b[:, 2:3]], axis=1)
        ids = np.stack([sid, kid], axis=1)
    else:
        segments = np.zeros((0, 6))
        ids = np.zeros((0, 2), dtype=np.int64)

    sphere = rig.posed_head_sphere()
    head_c = pose.apply(sphere.center_array)
    joints = pose.apply(rig.posed_joints())
    skeleton = np.zeros((18, 4))
    skeleton[:, 2] = joints[:, 2]
    front = joints[:, 2] > NEAR
    skeleton[front, :2] = _pixels(joints[front], intrinsics)
    for i in np.nonzero(front)[0]:
        # face landmarks hidden behind the skull are not detectable
        occluded = i in (0, 14, 15, 16, 17) and _ray_hits_sphere_before(
            joints[i], head_c, sphere.radius, joints[i, 2])
        skeleton[i, 3] = 0.0 if occluded else 1.0

    posed = rig.posed_joints()
    caps = np.array([[*pose.apply(posed[i]), *pose.apply(posed[j]), r]
                     for (i, j), r in rig.body_capsules]).reshape(-1, 7)
    return ProjectedFrame(n_strands, segments, ids, skeleton, head_c, sphere.radius, caps, intrinsics)
