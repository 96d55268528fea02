"""Control-image rasterization: strand map, pose map, hair mask and their composite.

Pixel (i, j) is sampled at its center, which sits at integer coordinates
(x = i, y = j). Lines cover pixels whose signed distance to the segment's
center line lies in ``[-w/2, w/2)`` and whose projection falls on the
segment. No anti-aliasing, so every output is bit-reproducible.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from .camera import CameraTrajectory, ProjectedFrame, project_frame
from .errors import ValidationError
from .hair import BONES, HumanRig
from .physics import GeometrySequence

REFERENCE_SIZE = (832, 480)
STRAND_WIDTH = 2.0
BONE_WIDTH = 4.0
JOINT_RADIUS = 4.0

# OpenPose body palette; bone k and joint k both use entry k.
POSE_PALETTE = np.array([
    [255, 0, 0], [255, 85, 0], [255, 170, 0], [255, 255, 0], [170, 255, 0], [85, 255, 0],
    [0, 255, 0], [0, 255, 85], [0, 255, 170], [0, 255, 255], [0, 170, 255], [0, 85, 255],
    [0, 0, 255], [85, 0, 255], [170, 0, 255], [255, 0, 255], [255, 0, 170], [255, 0, 85],
], dtype=np.uint8)


@dataclass(eq=False)
class RasterImage:
    pixels: np.ndarray  # (height, width, 3) uint8

    @classmethod
    def black(cls, width, height):
        return cls(np.zeros((height, width, 3), dtype=np.uint8))

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def height(self):
        return self.pixels.shape[0]

    def __eq__(self, other):
        return isinstance(other, RasterImage) and self.pixels.shape == other.pixels.shape \
            and self.pixels.tobytes() == other.pixels.tobytes()


@dataclass(eq=False)
class HairMask:
    bits: np.ndarray  # (height, width) bool

    @property
    def width(self):
        return self.bits.shape[1]

    @property
    def height(self):
        return self.bits.shape[0]


@dataclass(eq=False)
class ControlFrame:
    image: RasterImage
    frame_index: int
    mask: HairMask | None = None


@dataclass(eq=False)
class ControlSequence:
    frames: list
    resolution: tuple
    fps: float

    def __len__(self):
        return len(self.frames)


def stroke_scale(width, height):
    return min(width / REFERENCE_SIZE[0], height / REFERENCE_SIZE[1])


def encode_direction(dx, dy):
    """Strand-map color for a unit image-space tangent (x right, y down)."""
    return (255, int(np.floor(255.0 * (dx + 1.0) / 2.0 + 0.5)),
            int(np.floor(255.0 * (dy + 1.0) / 2.0 + 0.5)))


@njit(cache=True, nogil=True)
def _bbox(x0, y0, x1, y1, pad, width, height):
    lo_x = max(0.0, min(min(x0, x1) - pad, width - 1.0))
    hi_x = max(0.0, min(max(x0, x1) + pad, width - 1.0))
    lo_y = max(0.0, min(min(y0, y1) - pad, height - 1.0))
    hi_y = max(0.0, min(max(y0, y1) + pad, height - 1.0))
    return int(np.floor(lo_x)), int(np.ceil(hi_x)), int(np.floor(lo_y)), int(np.ceil(hi_y))


@njit(cache=True, nogil=True)
def _draw_strands(segs, width, height, half_w, rgb, depth):
    for n in range(segs.shape[0]):
        x0, y0, z0 = segs[n, 0], segs[n, 1], segs[n, 2]
        x1, y1, z1 = segs[n, 3], segs[n, 4], segs[n, 5]
        dx, dy = x1 - x0, y1 - y0
        length = np.sqrt(dx * dx + dy * dy)
        if not length > 1e-12:
            continue
        ux, uy = dx / length, dy / length
        g = np.uint8(np.floor(255.0 * (ux + 1.0) / 2.0 + 0.5))
        b = np.uint8(np.floor(255.0 * (uy + 1.0) / 2.0 + 0.5))
        ia, ib, ja, jb = _bbox(x0, y0, x1, y1, half_w + 1.0, width, height)
        if min(x0, x1) - half_w > width or max(x0, x1) + half_w < -1.0:
            continue
        if min(y0, y1) - half_w > height or max(y0, y1) + half_w < -1.0:
            continue
        for py in range(ja, jb + 1):
            ry = py - y0
            for px in range(ia, ib + 1):
                rx = px - x0
                along = rx * ux + ry * uy
                if along < 0.0 or along > length:
                    continue
                perp = ry * ux - rx * uy
                if perp < -half_w or perp >= half_w:
                    continue
                t = along / length
                z = 1.0 / ((1.0 - t) / z0 + t / z1)
                if z < depth[py, px]:
                    depth[py, px] = z
                    rgb[py, px, 0] = 255
                    rgb[py, px, 1] = g
                    rgb[py, px, 2] = b


@njit(cache=True, nogil=True)
def _draw_line(x0, y0, x1, y1, half_w, color, rgb):
    dx, dy = x1 - x0, y1 - y0
    length = np.sqrt(dx * dx + dy * dy)
    if not length > 1e-12:
        return
    ux, uy = dx / length, dy / length
    width, height = rgb.shape[1], rgb.shape[0]
    ia, ib, ja, jb = _bbox(x0, y0, x1, y1, half_w + 1.0, width, height)
    for py in range(ja, jb + 1):
        for px in range(ia, ib + 1):
            rx, ry = px - x0, py - y0
            along = rx * ux + ry * uy
            if along < 0.0 or along > length:
                continue
            perp = ry * ux - rx * uy
            if perp < -half_w or perp >= half_w:
                continue
            rgb[py, px, 0] = color[0]
            rgb[py, px, 1] = color[1]
            rgb[py, px, 2] = color[2]


@njit(cache=True, nogil=True)
def _draw_disk(cx, cy, radius, color, rgb):
    width, height = rgb.shape[1], rgb.shape[0]
    ia, ib, ja, jb = _bbox(cx, cy, cx, cy, radius + 1.0, width, height)
    r2 = radius * radius
    for py in range(ja, jb + 1):
        for px in range(ia, ib + 1):
            if (px - cx) ** 2 + (py - cy) ** 2 <= r2:
                rgb[py, px, 0] = color[0]
                rgb[py, px, 1] = color[1]
                rgb[py, px, 2] = color[2]


@njit(cache=True, nogil=True)
def _sphere_hit(dx, dy, cx, cy, cz, r):
    """Depth of the first hit of the ray ``s * (dx, dy, 1)`` with a sphere, or inf."""
    a = dx * dx + dy * dy + 1.0
    b = -2.0 * (dx * cx + dy * cy + cz)
    c = cx * cx + cy * cy + cz * cz - r * r
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        return np.inf
    sq = np.sqrt(disc)
    s = (-b - sq) / (2.0 * a)
    if s > 0.0:
        return s
    s = (-b + sq) / (2.0 * a)
    return s if s > 0.0 else np.inf


@njit(cache=True, nogil=True)
def _capsule_hit(dx, dy, cap):
    ax, ay, az, bx, by, bz, r = cap[0], cap[1], cap[2], cap[3], cap[4], cap[5], cap[6]
    best = min(_sphere_hit(dx, dy, ax, ay, az, r), _sphere_hit(dx, dy, bx, by, bz, r))
    # cylinder body: |(s*d - a) x axis|^2 = r^2 with 0 <= (s*d - a).axis <= |axis|
    ex, ey, ez = bx - ax, by - ay, bz - az
    el = np.sqrt(ex * ex + ey * ey + ez * ez)
    if el < 1e-12:
        return best
    ex, ey, ez = ex / el, ey / el, ez / el
    dd = dx * ex + dy * ey + ez
    wx, wy, wz = dx - dd * ex, dy - dd * ey, 1.0 - dd * ez
    ad = ax * ex + ay * ey + az * ez
    vx, vy, vz = -ax + ad * ex, -ay + ad * ey, -az + ad * ez
    qa = wx * wx + wy * wy + wz * wz
    qb = 2.0 * (wx * vx + wy * vy + wz * vz)
    qc = vx * vx + vy * vy + vz * vz - r * r
    disc = qb * qb - 4.0 * qa * qc
    if qa < 1e-18 or disc < 0.0:
        return best
    sq = np.sqrt(disc)
    for s in ((-qb - sq) / (2.0 * qa), (-qb + sq) / (2.0 * qa)):
        if s > 0.0:
            h = (s * dx - ax) * ex + (s * dy - ay) * ey + (s - az) * ez
            if 0.0 <= h <= el and s < best:
                best = s
    return best


@njit(cache=True, nogil=True)
def _proxy_depth(px, py, fx, fy, cx, cy, head, head_r, caps):
    dx = (px - cx) / fx
    dy = (py - cy) / fy
    best = _sphere_hit(dx, dy, head[0], head[1], head[2], head_r)
    for k in range(caps.shape[0]):
        best = min(best, _capsule_hit(dx, dy, caps[k]))
    return best


@njit(cache=True, nogil=True)
def _mask_kernel(strand_depth, fx, fy, cx, cy, head, head_r, caps, bits):
    height, width = strand_depth.shape
    for py in range(height):
        for px in range(width):
            z = strand_depth[py, px]
            if z < np.inf:
                bits[py, px] = z < _proxy_depth(px, py, fx, fy, cx, cy, head, head_r, caps)


def proxy_depth_at(pf: ProjectedFrame, px, py):
    """Nearest body-proxy depth along the camera ray through a pixel center (inf if none)."""
    k = pf.intrinsics
    return float(_proxy_depth(float(px), float(py), k.fx, k.fy, k.cx, k.cy,
                              np.asarray(pf.head_center, dtype=np.float64), float(pf.head_radius),
                              np.ascontiguousarray(pf.capsules, dtype=np.float64)))


def rasterize_strand_map(pf: ProjectedFrame, dims):
    width, height = dims
    rgb = np.zeros((height, width, 3), dtype=np.uint8)
    depth = np.full((height, width), np.inf)
    half_w = STRAND_WIDTH * stroke_scale(width, height) / 2.0
    _draw_strands(np.ascontiguousarray(pf.segments, dtype=np.float64), width, height,
                  half_w, rgb, depth)
    return RasterImage(rgb), depth


def rasterize_pose_map(pf: ProjectedFrame, dims) -> RasterImage:
    width, height = dims
    rgb = np.zeros((height, width, 3), dtype=np.uint8)
    scale = stroke_scale(width, height)
    sk = pf.skeleton
    visible = (sk[:, 3] > 0) & (sk[:, 2] > 0)
    for k, (i, j) in enumerate(BONES):
        if visible[i] and visible[j]:
            _draw_line(sk[i, 0], sk[i, 1], sk[j, 0], sk[j, 1], BONE_WIDTH * scale / 2.0,
                       POSE_PALETTE[k], rgb)
    for i in range(18):
        if visible[i]:
            _draw_disk(sk[i, 0], sk[i, 1], JOINT_RADIUS * scale, POSE_PALETTE[i], rgb)
    return RasterImage(rgb)


def compute_hair_mask(strand_depth, pf: ProjectedFrame, dims) -> HairMask:
    width, height = dims
    if strand_depth.shape != (height, width):
        raise ValidationError("strand_depth", f"shape {strand_depth.shape} does not match {dims}")
    bits = np.zeros((height, width), dtype=np.bool_)
    k = pf.intrinsics
    _mask_kernel(strand_depth, k.fx, k.fy, k.cx, k.cy,
                 np.asarray(pf.head_center, dtype=np.float64), float(pf.head_radius),
                 np.ascontiguousarray(pf.capsules, dtype=np.float64), bits)
    return HairMask(bits)


def compose_control(strand: RasterImage, pose: RasterImage, mask: HairMask, frame_index=0) -> ControlFrame:
    """C = strand * B + pose * (1 - B); with a binary B this is a per-pixel selection."""
    if strand.pixels.shape != pose.pixels.shape or strand.pixels.shape[:2] != mask.bits.shape:
        raise ValidationError("control", "strand map, pose map and mask dimensions differ")
    return ControlFrame(RasterImage(np.where(mask.bits[..., None], strand.pixels, pose.pixels)),
                        frame_index, mask)


def render_frame(pf: ProjectedFrame, dims, frame_index=0) -> ControlFrame:
    strand, depth = rasterize_strand_map(pf, dims)
    pose = rasterize_pose_map(pf, dims)
    mask = compute_hair_mask(depth, pf, dims)
    return compose_control(strand, pose, mask, frame_index)


def extract_control_sequence(seq: GeometrySequence, rig: HumanRig, traj: CameraTrajectory,
                             fps=16.0, threads=1) -> ControlSequence:
    """Project and rasterize every frame; frames are independent and kept in order."""
    if len(traj) != len(seq):
        raise ValidationError("camera", f"trajectory has {len(traj)} poses for {len(seq)} frames")
    intr = traj.intrinsics
    dims = (intr.width, intr.height)

    def one(i):
        posed = rig.posed(seq.poses[i]) if seq.poses else rig
        pf = project_frame(seq.frames[i], seq.counts, posed, traj.poses[i], intr)
        return render_frame(pf, dims, i)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=int(threads)) as pool:
            frames = list(pool.map(one, range(len(seq))))
    else:
        frames = [one(i) for i in range(len(seq))]
    return ControlSequence(frames, dims, fps)
