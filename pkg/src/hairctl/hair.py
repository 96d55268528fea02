"""Hair geometry, the human rig, procedural wigs and the HSTR strand file format.

Units are meters; the world is y-up and right-handed. The rig stands at the
origin facing +z, so the subject's right hand is on the -x side.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import AttachmentError, FormatError, ValidationError
from .transforms import RigidTransform

JOINT_NAMES = (
    "nose", "neck",
    "right_shoulder", "right_elbow", "right_wrist",
    "left_shoulder", "left_elbow", "left_wrist",
    "right_hip", "right_knee", "right_ankle",
    "left_hip", "left_knee", "left_ankle",
    "right_eye", "left_eye", "right_ear", "left_ear",
)
# OpenPose limb order; the palette in raster.py is indexed by position here.
BONES = (
    (1, 2), (1, 5), (2, 3), (3, 4), (5, 6), (6, 7), (1, 8), (8, 9), (9, 10),
    (1, 11), (11, 12), (12, 13), (1, 0), (0, 14), (14, 16), (0, 15), (15, 17),
)
HEAD_JOINTS = (0, 14, 15, 16, 17)

# Groomed hair keeps this much clearance above the head sphere; the simulator
# collides against the same shell so a rest wig is an exact equilibrium.
SCALP_CLEARANCE = 0.002

_HANG_DIRECTION = np.array([0.0, -1.0, -0.25]) / np.linalg.norm([0.0, -1.0, -0.25])
_CROWN_TILT_DEG = 35.0  # hair cap axis leans back from +y, away from the face
_CURL_TURNS = 3.0


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float

    @property
    def center_array(self):
        return np.asarray(self.center, dtype=np.float64)


def _default_joints(head_center, head_radius):
    cx, cy, cz = head_center
    r = head_radius
    # offsets scaled from an adult of ~1.75 m with a 0.1 m head radius
    s = r / 0.1
    j = {
        "nose": (0.0, -0.02 * s, 1.05 * r),
        "neck": (0.0, -0.17 * s, 0.0),
        "right_shoulder": (-0.19 * s, -0.20 * s, 0.0),
        "right_elbow": (-0.24 * s, -0.47 * s, 0.0),
        "right_wrist": (-0.26 * s, -0.72 * s, 0.05 * s),
        "left_shoulder": (0.19 * s, -0.20 * s, 0.0),
        "left_elbow": (0.24 * s, -0.47 * s, 0.0),
        "left_wrist": (0.26 * s, -0.72 * s, 0.05 * s),
        "right_hip": (-0.10 * s, -0.67 * s, 0.0),
        "right_knee": (-0.10 * s, -1.10 * s, 0.0),
        "right_ankle": (-0.10 * s, -1.55 * s, 0.0),
        "left_hip": (0.10 * s, -0.67 * s, 0.0),
        "left_knee": (0.10 * s, -1.10 * s, 0.0),
        "left_ankle": (0.10 * s, -1.55 * s, 0.0),
        "right_eye": (-0.035 * s, 0.015 * s, 0.94 * r),
        "left_eye": (0.035 * s, 0.015 * s, 0.94 * r),
        "right_ear": (-1.0 * r, -0.01 * s, 0.0),
        "left_ear": (1.0 * r, -0.01 * s, 0.0),
    }
    return np.array([[cx + x, cy + y, cz + z] for x, y, z in (j[n] for n in JOINT_NAMES)])


def _default_capsules(head_radius):
    s = head_radius / 0.1
    return (
        ((1, 8), 0.13 * s), ((1, 11), 0.13 * s),    # torso halves
        ((0, 1), 0.055 * s),                          # neck
        ((2, 5), 0.07 * s),                           # shoulder girdle
        ((2, 3), 0.05 * s), ((3, 4), 0.04 * s),
        ((5, 6), 0.05 * s), ((6, 7), 0.04 * s),
        ((8, 9), 0.07 * s), ((9, 10), 0.05 * s),
        ((11, 12), 0.07 * s), ((12, 13), 0.05 * s),
    )


@dataclass(frozen=True, eq=False)
class HumanRig:
    """Skeleton at rest plus the current head pose.

    ``head_pose`` maps head-local points (origin at the rest head center) to
    world space relative to that center: ``world = R @ local + center + T``.
    Head joints follow the full pose; the body only follows its translation.
    """

    joints: np.ndarray
    head_sphere: Sphere
    bones: tuple = BONES
    body_capsules: tuple = ()
    head_pose: RigidTransform = field(default_factory=RigidTransform.identity)

    def __post_init__(self):
        joints = np.asarray(self.joints, dtype=np.float64)
        if joints.shape != (18, 3):
            raise ValidationError("rig.joints", f"expected shape (18, 3), got {joints.shape}")
        object.__setattr__(self, "joints", joints)
        for a, b in self.bones:
            if not (0 <= a < 18 and 0 <= b < 18):
                raise ValidationError("rig.bones", f"invalid joint index in ({a}, {b})")
        for (a, b), radius in self.body_capsules:
            if not (0 <= a < 18 and 0 <= b < 18):
                raise ValidationError("rig.body_capsules", f"invalid joint index in ({a}, {b})")
            if not radius > 0:
                raise ValidationError("rig.body_capsules", "capsule radius must be > 0")
        if not self.head_sphere.radius > 0:
            raise ValidationError("rig.head_radius", "must be > 0")

    @classmethod
    def default(cls, head_center=(0.0, 1.65, 0.0), head_radius=0.1):
        return cls(
            joints=_default_joints(head_center, head_radius),
            head_sphere=Sphere(tuple(float(c) for c in head_center), float(head_radius)),
            body_capsules=_default_capsules(head_radius),
        )

    def posed(self, head_pose: RigidTransform) -> HumanRig:
        return replace(self, head_pose=head_pose)

    def head_frame(self) -> RigidTransform:
        """Transform from head-local coordinates to world coordinates."""
        return RigidTransform(self.head_pose.rotation,
                              self.head_sphere.center_array + self.head_pose.translation)

    def posed_joints(self):
        out = self.joints + self.head_pose.translation
        head = list(HEAD_JOINTS)
        local = self.joints[head] - self.head_sphere.center_array
        out[head] = self.head_frame().apply(local)
        return out

    def posed_head_sphere(self) -> Sphere:
        c = self.head_sphere.center_array + self.head_pose.translation
        return Sphere(tuple(c), self.head_sphere.radius)


@dataclass(eq=False)
class Strand:
    vertices: np.ndarray
    rest_lengths: np.ndarray
    rest_local: np.ndarray | None = None  # rest shape in the head frame, set by attach_to_scalp

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.rest_lengths = np.asarray(self.rest_lengths, dtype=np.float64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3 or len(self.vertices) < 2:
            raise ValidationError("strand.vertices", "need at least 2 vertices of 3 coordinates")
        if self.rest_lengths.shape != (len(self.vertices) - 1,):
            raise ValidationError("strand.rest_lengths", "need exactly vertex_count - 1 entries")
        if not np.all(self.rest_lengths > 0):
            raise ValidationError("strand.rest_lengths", "all rest lengths must be > 0")

    @property
    def root_local(self):
        return None if self.rest_local is None else self.rest_local[0]

    def __len__(self):
        return len(self.vertices)


def _arrays_equal(a, b):
    if a is None or b is None:
        return a is None and b is None
    return a.shape == b.shape and a.tobytes() == b.tobytes()


@dataclass(eq=False)
class HairModel:
    strands: list
    scalp: Sphere

    def __post_init__(self):
        if len(self.strands) < 1:
            raise ValidationError("hair.strands", "a hair model needs at least one strand")

    def __eq__(self, other):
        if not isinstance(other, HairModel):
            return NotImplemented
        if self.scalp != other.scalp or len(self.strands) != len(other.strands):
            return False
        return all(
            _arrays_equal(a.vertices, b.vertices)
            and _arrays_equal(a.rest_lengths, b.rest_lengths)
            and _arrays_equal(a.rest_local, b.rest_local)
            for a, b in zip(self.strands, other.strands)
        )

    @property
    def attached(self):
        return all(s.rest_local is not None for s in self.strands)

    @cached_property
    def vertex_counts(self):
        return np.array([len(s) for s in self.strands], dtype=np.int64)

    def packed(self, which="vertices"):
        """Pad per-strand arrays to ``(strands, max_vertices, 3)``; padding repeats the tip."""
        vmax = int(self.vertex_counts.max())
        out = np.empty((len(self.strands), vmax, 3))
        for i, s in enumerate(self.strands):
            a = getattr(s, which)
            n = len(a)
            out[i, :n] = a
            out[i, n:] = a[-1]
        return out

    def packed_rest_lengths(self):
        vmax = int(self.vertex_counts.max())
        out = np.ones((len(self.strands), vmax - 1))
        for i, s in enumerate(self.strands):
            out[i, :len(s.rest_lengths)] = s.rest_lengths
        return out


@dataclass(frozen=True)
class WigSpec:
    strand_count: int = 10000
    segments_per_strand: int = 16
    length: float = 0.3
    curl: float = 0.0
    scalp_coverage: float = 75.0
    seed: int = 1

    def validate(self, prefix="wig"):
        if not isinstance(self.strand_count, int) or self.strand_count < 1:
            raise ValidationError(f"{prefix}.strand_count", "must be an integer >= 1")
        if not isinstance(self.segments_per_strand, int) or self.segments_per_strand < 1:
            raise ValidationError(f"{prefix}.segments_per_strand", "must be an integer >= 1")
        if not self.length > 0:
            raise ValidationError(f"{prefix}.length", "must be > 0")
        if not self.curl >= 0:
            raise ValidationError(f"{prefix}.curl", "must be >= 0")
        if not 0 < self.scalp_coverage <= 180:
            raise ValidationError(f"{prefix}.scalp_coverage", "must be in (0, 180] degrees")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ValidationError(f"{prefix}.seed", "must be an unsigned 64-bit integer")
        return self


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _perpendicular(v):
    """Some unit vector orthogonal to each row of ``v``."""
    helper = np.where(np.abs(v[:, 2:3]) < 0.9, [[0.0, 0.0, 1.0]], [[1.0, 0.0, 0.0]])
    return _unit(np.cross(v, helper))


def _cap_directions(n, coverage_deg, seed):
    rng = np.random.default_rng(seed)
    phase = rng.random() * 2.0 * np.pi
    golden = np.pi * (3.0 - np.sqrt(5.0))
    i = np.arange(n)
    z = 1.0 - (1.0 - np.cos(np.radians(coverage_deg))) * i / n
    rho = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    az = phase + golden * i
    # cap around +y, then lean the whole cap back (rotation about +x)
    local = np.stack([rho * np.cos(az), z, rho * np.sin(az)], axis=1)
    t = np.radians(_CROWN_TILT_DEG)
    rot = np.array([[1, 0, 0], [0, np.cos(t), np.sin(t)], [0, -np.sin(t), np.cos(t)]])
    return local @ rot.T, rng.random(n) * 2.0 * np.pi


def _groom(normals, curl_phase, spec, radius):
    """Rest shapes in the head frame: outward at the root, bending toward the hang direction."""
    n_strands = len(normals)
    segs = spec.segments_per_strand
    seg_len = spec.length / segs
    shell = radius + SCALP_CLEARANCE

    cos_t = np.clip(normals @ _HANG_DIRECTION, -1.0, 1.0)
    theta_target = np.arccos(cos_t)
    bend = _HANG_DIRECTION - cos_t[:, None] * normals
    norm = np.linalg.norm(bend, axis=1)
    degenerate = norm < 1e-9
    bend[~degenerate] /= norm[~degenerate, None]
    if degenerate.any():
        bend[degenerate] = _perpendicular(normals[degenerate])

    tilt = np.arctan(spec.curl)
    pts = np.empty((n_strands, segs + 1, 3))
    pts[:, 0] = radius * normals
    for i in range(segs):
        if i == 0:
            d = normals.copy()
        else:
            theta = theta_target * min(1.0, i / (0.5 * segs))
            d = np.cos(theta)[:, None] * normals + np.sin(theta)[:, None] * bend
            if tilt > 0:
                e1 = _perpendicular(d)
                e2 = np.cross(d, e1)
                phi = curl_phase + 2.0 * np.pi * _CURL_TURNS * i / segs
                swirl = np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2
                d = np.cos(tilt) * d + np.sin(tilt) * swirl
        p = pts[:, i]
        q = p + seg_len * d
        inside = np.linalg.norm(q, axis=1) < shell
        if inside.any() and i > 0:
            # slide along the tangent plane instead of entering the head
            r_hat = _unit(p[inside])
            di = d[inside]
            di = di - np.sum(di * r_hat, axis=1, keepdims=True) * r_hat
            small = np.linalg.norm(di, axis=1) < 1e-9
            if small.any():
                di[small] = _perpendicular(r_hat[small])
            q[inside] = p[inside] + seg_len * _unit(di)
        pts[:, i + 1] = q
    return pts


def generate_wig(spec: WigSpec, rig: HumanRig) -> HairModel:
    """Procedural wig on the rig's head sphere, deterministic in (spec, rig).

    Coordinates are rounded to float32 so the model survives an HSTR round trip
    unchanged; attach_to_scalp restores exact rest lengths in the head frame.
    """
    spec.validate()
    radius = rig.head_sphere.radius
    normals, curl_phase = _cap_directions(spec.strand_count, spec.scalp_coverage, spec.seed)
    local = _groom(normals, curl_phase, spec, radius)
    frame = rig.head_frame()
    world = frame.apply(local.reshape(-1, 3)).reshape(local.shape)
    # re-seat roots exactly on the sphere after the transform
    center = frame.translation
    roots = world[:, 0] - center
    world[:, 0] = center + radius * _unit(roots)
    world = world.astype(np.float32).astype(np.float64)
    rest = np.full(spec.segments_per_strand,
                   np.float32(spec.length / spec.segments_per_strand), dtype=np.float64)
    scalp = Sphere(tuple(float(np.float32(c)) for c in center), float(np.float32(radius)))
    strands = [Strand(world[i], rest.copy()) for i in range(spec.strand_count)]
    return HairModel(strands, scalp)


def _follow_the_leader(points, rest_lengths):
    """Re-space a polyline root->tip to exact rest lengths, keeping directions."""
    out = points.copy()
    for j in range(1, len(out)):
        d = out[j] - out[j - 1]
        n = np.linalg.norm(d)
        if n > 0:
            out[j] = out[j - 1] + d * (rest_lengths[j - 1] / n)
    return out


def attach_to_scalp(model: HairModel, rig: HumanRig, tolerance=1e-3) -> HairModel:
    """Express every strand's rest shape in the rig's current head frame.

    The stored rest offsets are re-spaced to the exact rest lengths, so the
    simulator's distance constraints and shape targets agree at rest.
    """
    frame = rig.head_frame()
    center = frame.translation
    radius = rig.head_sphere.radius
    roots = np.array([s.vertices[0] for s in model.strands])
    dist = np.abs(np.linalg.norm(roots - center, axis=1) - radius)
    bad = np.nonzero(dist > tolerance)[0]
    if len(bad):
        raise AttachmentError(bad.tolist(), f"root farther than {tolerance} m from the scalp")
    inv = frame.inverse()
    strands = []
    for s in model.strands:
        local = _follow_the_leader(inv.apply(s.vertices), s.rest_lengths)
        strands.append(Strand(s.vertices, s.rest_lengths, local))
    return HairModel(strands, model.scalp)


# --- HSTR v1 -----------------------------------------------------------------

_MAGIC = b"HSTR"


def save_strands(model: HairModel, path) -> None:
    chunks = [_MAGIC, struct.pack("<II", 1, len(model.strands)),
              np.asarray([*model.scalp.center, model.scalp.radius], dtype="<f4").tobytes()]
    for s in model.strands:
        chunks.append(struct.pack("<I", len(s.vertices)))
        chunks.append(s.vertices.astype("<f4").tobytes())
        chunks.append(s.rest_lengths.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def _read_f32(buf, offset, count, what):
    end = offset + 4 * count
    if end > len(buf):
        raise FormatError(offset, f"truncated {what}: need {end - offset} bytes, have {len(buf) - offset}")
    values = np.frombuffer(buf, dtype="<f4", count=count, offset=offset)
    if not np.all(np.isfinite(values)):
        bad = int(np.nonzero(~np.isfinite(values))[0][0])
        raise FormatError(offset + 4 * bad, f"non-finite value in {what}")
    return values.astype(np.float64), end


def _read_u32(buf, offset, what):
    if offset + 4 > len(buf):
        raise FormatError(offset, f"truncated {what}")
    return struct.unpack_from("<I", buf, offset)[0], offset + 4


def load_strands(path) -> HairModel:
    buf = Path(path).read_bytes()
    if buf[:4] != _MAGIC:
        raise FormatError(0, f"bad magic {buf[:4]!r}, expected {_MAGIC!r}")
    version, off = _read_u32(buf, 4, "version")
    if version != 1:
        raise FormatError(4, f"unsupported version {version}")
    count, off = _read_u32(buf, off, "strand count")
    if count < 1:
        raise FormatError(8, "strand count must be >= 1")
    scalp, off = _read_f32(buf, off, 4, "scalp")
    strands = []
    for i in range(count):
        n_off = off
        n, off = _read_u32(buf, off, f"vertex count of strand {i}")
        if n < 2:
            raise FormatError(n_off, f"strand {i} has {n} vertices, need >= 2")
        verts, off = _read_f32(buf, off, 3 * n, f"positions of strand {i}")
        rest_off = off
        rest, off = _read_f32(buf, off, n - 1, f"rest lengths of strand {i}")
        if not np.all(rest > 0):
            raise FormatError(rest_off, f"non-positive rest length in strand {i}")
        strands.append(Strand(verts.reshape(n, 3), rest))
    if off != len(buf):
        raise FormatError(off, f"{len(buf) - off} trailing bytes")
    return HairModel(strands, Sphere(tuple(float(c) for c in scalp[:3]), float(scalp[3])))
