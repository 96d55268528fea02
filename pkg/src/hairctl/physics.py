"""Strand dynamics: per-frame hair geometry from hair properties and external forces.

Each strand is an independent chain of point masses. A substep drives the
root kinematically with the head, integrates gravity, wind drag and a spring
toward the head-carried rest shape, damps velocities, then re-spaces the
chain root to tip (damped follow-the-leader) while keeping vertices outside
the head sphere.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
from numba import njit, prange

from .errors import FormatError, SimulationDivergence, ValidationError
from .hair import SCALP_CLEARANCE, HairModel, HumanRig
from .transforms import RigidTransform, euler_to_quat, quat_to_matrix, slerp

STANDARD_GRAVITY = 9.81
UP = np.array([0.0, 1.0, 0.0])


@dataclass(frozen=True)
class PhysicsParams:
    mass: float = 0.1
    stiffness: float = 6.0
    damping: float = 9.0
    gravity_scale: float = 1.0
    substeps: int = 10
    fps: float = 16.0

    def validate(self, prefix="physics"):
        if not self.mass > 0:
            raise ValidationError(f"{prefix}.mass", "must be > 0")
        if not self.stiffness >= 0:
            raise ValidationError(f"{prefix}.stiffness", "must be >= 0")
        if not self.damping >= 0:
            raise ValidationError(f"{prefix}.damping", "must be >= 0")
        if not self.gravity_scale >= 0:
            raise ValidationError(f"{prefix}.gravity_scale", "must be >= 0")
        if not isinstance(self.substeps, int) or self.substeps < 1:
            raise ValidationError(f"{prefix}.substeps", "must be an integer >= 1")
        if not self.fps > 0:
            raise ValidationError(f"{prefix}.fps", "must be > 0")
        return self

    @property
    def dt(self):
        return 1.0 / (self.fps * self.substeps)

    def gravity(self):
        return -STANDARD_GRAVITY * self.gravity_scale * UP


@dataclass(frozen=True)
class WindField:
    direction: tuple = (1.0, 0.0, 0.0)
    strength: float = 10.0
    gust_amplitude: float = 0.0
    gust_frequency: float = 0.5
    drag_coefficient: float = 0.05
    seed: int = 0

    def validate(self, prefix="wind"):
        if len(self.direction) != 3 or abs(np.linalg.norm(self.direction) - 1.0) > 1e-6:
            raise ValidationError(f"{prefix}.direction", "must be a unit 3-vector")
        if not self.strength >= 0:
            raise ValidationError(f"{prefix}.strength", "must be >= 0")
        if not 0 <= self.gust_amplitude <= 1:
            raise ValidationError(f"{prefix}.gust_amplitude", "must be in [0, 1]")
        if not self.gust_frequency >= 0:
            raise ValidationError(f"{prefix}.gust_frequency", "must be >= 0")
        if not self.drag_coefficient >= 0:
            raise ValidationError(f"{prefix}.drag_coefficient", "must be >= 0")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ValidationError(f"{prefix}.seed", "must be an unsigned 64-bit integer")
        return self


@dataclass(frozen=True)
class Keyframe:
    time: float
    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0
    translation: tuple = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class HeadMotionScript:
    """Head keyframes; rotations are slerped, translations lerped, both clamped at the ends."""

    keyframes: tuple = (Keyframe(0.0),)

    def validate(self, prefix="motion"):
        if not self.keyframes:
            raise ValidationError(f"{prefix}.keyframes", "need at least one keyframe")
        if self.keyframes[0].time != 0:
            raise ValidationError(f"{prefix}.keyframes[0].time", "first keyframe must be at t=0")
        for i in range(1, len(self.keyframes)):
            if not self.keyframes[i].time > self.keyframes[i - 1].time:
                raise ValidationError(f"{prefix}.keyframes[{i}].time", "times must strictly increase")
        return self


def eval_head_pose(script: HeadMotionScript, t: float) -> RigidTransform:
    keys = script.keyframes
    if t <= keys[0].time or len(keys) == 1:
        k = keys[0]
        return RigidTransform(quat_to_matrix(euler_to_quat(k.yaw, k.pitch, k.roll)),
                              np.array(k.translation, dtype=np.float64))
    if t >= keys[-1].time:
        k = keys[-1]
        return RigidTransform(quat_to_matrix(euler_to_quat(k.yaw, k.pitch, k.roll)),
                              np.array(k.translation, dtype=np.float64))
    i = max(j for j in range(len(keys)) if keys[j].time <= t)
    a, b = keys[i], keys[i + 1]
    u = (t - a.time) / (b.time - a.time)
    q = slerp(euler_to_quat(a.yaw, a.pitch, a.roll), euler_to_quat(b.yaw, b.pitch, b.roll), u)
    ta = np.array(a.translation, dtype=np.float64)
    tb = np.array(b.translation, dtype=np.float64)
    return RigidTransform(quat_to_matrix(q), ta + u * (tb - ta))


# --- wind --------------------------------------------------------------------

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLD = np.uint64(0x9E3779B97F4A7C15)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_PRIMES = (np.uint64(0x8CB92BA72F3D8DD7), np.uint64(0xD6E8FEB86659FD93),
           np.uint64(0xA0761D6478BD642F), np.uint64(0xE7037ED1A0B428DB))


@njit(cache=True, nogil=True)
def _mix(h):
    h = (h ^ (h >> _S30)) * _M1
    h = (h ^ (h >> _S27)) * _M2
    return h ^ (h >> _S31)


@njit(cache=True, nogil=True)
def _lattice(ix, iy, iz, it, seed):
    h = seed * _GOLD
    h = _mix(h ^ (np.uint64(ix) * _PRIMES[0]))
    h = _mix(h ^ (np.uint64(iy) * _PRIMES[1]))
    h = _mix(h ^ (np.uint64(iz) * _PRIMES[2]))
    h = _mix(h ^ (np.uint64(it) * _PRIMES[3]))
    # 53 high bits -> [0, 1) -> [-1, 1)
    return (h >> _S11) * (1.0 / 9007199254740992.0) * 2.0 - 1.0


@njit(cache=True, nogil=True)
def _fade(f):
    return f * f * (3.0 - 2.0 * f)


@njit(cache=True, nogil=True)
def gust_noise(x, y, z, t, seed):
    """Seeded 4D value noise, bounded in [-1, 1]."""
    fx, fy, fz, ft = np.floor(x), np.floor(y), np.floor(z), np.floor(t)
    ix, iy, iz, it = np.int64(fx), np.int64(fy), np.int64(fz), np.int64(ft)
    wx, wy, wz, wt = _fade(x - fx), _fade(y - fy), _fade(z - fz), _fade(t - ft)
    acc = 0.0
    for c in range(16):
        dx, dy, dz, dw = c & 1, (c >> 1) & 1, (c >> 2) & 1, (c >> 3) & 1
        w = ((wx if dx else 1.0 - wx) * (wy if dy else 1.0 - wy)
             * (wz if dz else 1.0 - wz) * (wt if dw else 1.0 - wt))
        acc += w * _lattice(ix + dx, iy + dy, iz + dz, it + dw, seed)
    return acc


@njit(cache=True, nogil=True)
def _wind_at(px, py, pz, t, direction, strength, amplitude, frequency, seed):
    scale = strength
    if amplitude != 0.0:
        scale = strength * (1.0 + amplitude * gust_noise(0.5 * px, 0.5 * py, 0.5 * pz,
                                                         frequency * t, seed))
    return scale * direction[0], scale * direction[1], scale * direction[2]


def eval_wind(wind: WindField, position, t: float):
    d = np.asarray(wind.direction, dtype=np.float64)
    p = np.asarray(position, dtype=np.float64)
    return np.array(_wind_at(p[0], p[1], p[2], float(t), d, float(wind.strength),
                             float(wind.gust_amplitude), float(wind.gust_frequency),
                             np.uint64(wind.seed)))


# --- integration kernel -------------------------------------------------------

@njit(cache=True, nogil=True)
def _place_on_shell(prev, cand, rest, center, radius, out):
    """Point at distance ``rest`` from ``prev`` on the sphere, closest to ``cand``."""
    ax = prev[0] - center[0]
    ay = prev[1] - center[1]
    az = prev[2] - center[2]
    rho = np.sqrt(ax * ax + ay * ay + az * az)
    if rho > 0.0:
        h = (rho * rho + radius * radius - rest * rest) / (2.0 * rho)
        s2 = radius * radius - h * h
        if s2 > 0.0:
            ax /= rho
            ay /= rho
            az /= rho
            mx = center[0] + h * ax
            my = center[1] + h * ay
            mz = center[2] + h * az
            wx, wy, wz = cand[0] - mx, cand[1] - my, cand[2] - mz
            k = wx * ax + wy * ay + wz * az
            wx -= k * ax
            wy -= k * ay
            wz -= k * az
            wn = np.sqrt(wx * wx + wy * wy + wz * wz)
            if wn < 1e-15:
                # any direction in the circle plane
                if abs(ax) < 0.9:
                    wx, wy, wz = 0.0, az, -ay
                else:
                    wx, wy, wz = -az, 0.0, ax
                wn = np.sqrt(wx * wx + wy * wy + wz * wz)
            s = np.sqrt(s2) / wn
            out[0] = mx + s * wx
            out[1] = my + s * wy
            out[2] = mz + s * wz
            return
    # no intersection: push radially
    dx, dy, dz = cand[0] - center[0], cand[1] - center[1], cand[2] - center[2]
    dn = np.sqrt(dx * dx + dy * dy + dz * dz)
    if dn < 1e-15:
        dx, dy, dz, dn = 0.0, 1.0, 0.0, 1.0
    out[0] = center[0] + radius * dx / dn
    out[1] = center[1] + radius * dy / dn
    out[2] = center[2] + radius * dz / dn


@njit(cache=True, nogil=True)
def _step_strand(s, pos, vel, counts, rest_len, rest_local, rot1, trans1, root_prev,
                 mass, stiffness, damping, gravity, dt, t, wind_dir, wind_strength,
                 gust_amp, gust_freq, drag, seed, center, radius):
    n = counts[s]
    corr = np.zeros((n + 1, 3))

    # (1) kinematic root
    for c in range(3):
        r = (rot1[c, 0] * rest_local[s, 0, 0] + rot1[c, 1] * rest_local[s, 0, 1]
             + rot1[c, 2] * rest_local[s, 0, 2] + trans1[c])
        vel[s, 0, c] = (r - root_prev[s, c]) / dt
        pos[s, 0, c] = r

    decay = max(0.0, 1.0 - damping * dt)
    inv_m = 1.0 / mass
    for j in range(1, n):
        px, py, pz = pos[s, j, 0], pos[s, j, 1], pos[s, j, 2]
        ux, uy, uz = _wind_at(px, py, pz, t, wind_dir, wind_strength, gust_amp, gust_freq, seed)
        for c in range(3):
            target = (rot1[c, 0] * rest_local[s, j, 0] + rot1[c, 1] * rest_local[s, j, 1]
                      + rot1[c, 2] * rest_local[s, j, 2] + trans1[c])
            u = ux if c == 0 else (uy if c == 1 else uz)
            # (2) forces, (3) semi-implicit Euler, (4) damping
            f = mass * gravity[c] + drag * (u - vel[s, j, c]) + stiffness * (target - pos[s, j, c])
            v = (vel[s, j, c] + dt * f * inv_m) * decay
            vel[s, j, c] = v
            pos[s, j, c] = pos[s, j, c] + dt * v

    # (5) follow-the-leader re-spacing, collision-aware
    cand = np.empty(3)
    placed = np.empty(3)
    for j in range(1, n):
        dx = pos[s, j, 0] - pos[s, j - 1, 0]
        dy = pos[s, j, 1] - pos[s, j - 1, 1]
        dz = pos[s, j, 2] - pos[s, j - 1, 2]
        d = np.sqrt(dx * dx + dy * dy + dz * dz)
        rl = rest_len[s, j - 1]
        if d > 0.0:
            cand[0] = pos[s, j - 1, 0] + dx * (rl / d)
            cand[1] = pos[s, j - 1, 1] + dy * (rl / d)
            cand[2] = pos[s, j - 1, 2] + dz * (rl / d)
        else:
            for c in range(3):
                cand[c] = pos[s, j, c]
        ex, ey, ez = cand[0] - center[0], cand[1] - center[1], cand[2] - center[2]
        if ex * ex + ey * ey + ez * ez < radius * radius:
            _place_on_shell(pos[s, j - 1], cand, rl, center, radius, placed)
            for c in range(3):
                cand[c] = placed[c]
        for c in range(3):
            corr[j, c] = cand[c] - pos[s, j, c]
            pos[s, j, c] = cand[c]
    for j in range(1, n):
        for c in range(3):
            vel[s, j, c] += (corr[j, c] - 0.5 * corr[j + 1, c]) / dt

    # (6) head sphere: no vertex ends inside, no inward normal velocity on contact
    for j in range(1, n):
        ex = pos[s, j, 0] - center[0]
        ey = pos[s, j, 1] - center[1]
        ez = pos[s, j, 2] - center[2]
        dist = np.sqrt(ex * ex + ey * ey + ez * ez)
        if dist < radius * (1.0 + 1e-12) and dist > 0.0:
            nx, ny, nz = ex / dist, ey / dist, ez / dist
            if dist < radius:
                pos[s, j, 0] = center[0] + radius * nx
                pos[s, j, 1] = center[1] + radius * ny
                pos[s, j, 2] = center[2] + radius * nz
            vn = vel[s, j, 0] * nx + vel[s, j, 1] * ny + vel[s, j, 2] * nz
            if vn < 0.0:
                vel[s, j, 0] -= vn * nx
                vel[s, j, 1] -= vn * ny
                vel[s, j, 2] -= vn * nz


@njit(cache=True, parallel=True)
def _substep(pos, vel, counts, rest_len, rest_local, rot1, trans1, root_prev,
             mass, stiffness, damping, gravity, dt, t, wind_dir, wind_strength,
             gust_amp, gust_freq, drag, seed, center, radius):
    for s in prange(pos.shape[0]):
        _step_strand(s, pos, vel, counts, rest_len, rest_local, rot1, trans1, root_prev,
                     mass, stiffness, damping, gravity, dt, t, wind_dir, wind_strength,
                     gust_amp, gust_freq, drag, seed, center, radius)


@dataclass
class SimState:
    positions: np.ndarray  # (strands, max_vertices, 3); rows past a strand's count repeat its tip
    velocities: np.ndarray
    time: float = 0.0

    def copy(self):
        return SimState(self.positions.copy(), self.velocities.copy(), self.time)


@dataclass
class _Packed:
    counts: np.ndarray
    rest_len: np.ndarray
    rest_local: np.ndarray

    @classmethod
    def of(cls, model: HairModel):
        if not model.attached:
            raise ValidationError("hair", "model must be attached to the scalp before simulation")
        return cls(model.vertex_counts, model.packed_rest_lengths(), model.packed("rest_local"))


def collision_radius(model: HairModel):
    return model.scalp.radius + SCALP_CLEARANCE


def rest_state(model: HairModel, head_frame: RigidTransform) -> SimState:
    packed = model.packed("rest_local")
    pos = head_frame.apply(packed.reshape(-1, 3)).reshape(packed.shape)
    return SimState(pos, np.zeros_like(pos), 0.0)


def _advance(state, packed, frame_t, frame_t1, params, wind, gravity, radius):
    pos = state.positions.copy()
    vel = state.velocities.copy()
    root_prev = frame_t.apply(packed.rest_local[:, 0])
    _substep(pos, vel, packed.counts, packed.rest_len, packed.rest_local,
             np.ascontiguousarray(frame_t1.rotation), np.ascontiguousarray(frame_t1.translation),
             root_prev, float(params.mass), float(params.stiffness), float(params.damping),
             np.asarray(gravity, dtype=np.float64), params.dt, float(state.time),
             np.asarray(wind.direction, dtype=np.float64), float(wind.strength),
             float(wind.gust_amplitude), float(wind.gust_frequency), float(wind.drag_coefficient),
             np.uint64(wind.seed), np.ascontiguousarray(frame_t1.translation), float(radius))
    return SimState(pos, vel, state.time + params.dt)


def step(state: SimState, model: HairModel, params: PhysicsParams, wind: WindField,
         gravity, frame_t: RigidTransform, frame_t1: RigidTransform) -> SimState:
    """Advance one substep of length ``params.dt``.

    ``frame_t`` and ``frame_t1`` are head frames (head-local to world) at the
    start and end of the substep; the head sphere is centered on the frame origin.
    """
    if not np.all(np.isfinite(state.positions)) or not np.all(np.isfinite(state.velocities)):
        raise SimulationDivergence(frame=-1, substep=-1)
    out = _advance(state, _Packed.of(model), frame_t, frame_t1, params, wind, gravity,
                   collision_radius(model))
    if not (np.all(np.isfinite(out.positions)) and np.all(np.isfinite(out.velocities))):
        raise SimulationDivergence(frame=-1, substep=-1)
    return out


@dataclass
class GeometrySequence:
    """Per-frame float32 vertex snapshots ``(strands, max_vertices, 3)`` and head poses."""

    frames: list
    counts: np.ndarray
    poses: list = field(default_factory=list)

    def __len__(self):
        return len(self.frames)

    def frame_digest(self, i):
        h = hashlib.sha256(self.frames[i].tobytes())
        if self.poses:
            h.update(self.poses[i].rotation.tobytes())
            h.update(self.poses[i].translation.tobytes())
        return h.hexdigest()


def set_threads(threads):
    if threads:
        numba.set_num_threads(max(1, min(int(threads), numba.config.NUMBA_NUM_THREADS)))


def simulate(model: HairModel, rig: HumanRig, params: PhysicsParams, wind: WindField,
             motion: HeadMotionScript, frame_count: int, threads=None) -> GeometrySequence:
    """Run ``substeps * frame_count`` substeps; snapshot i is the state at t = (i + 1) / fps."""
    params.validate()
    wind.validate()
    motion.validate()
    if frame_count < 1:
        raise ValidationError("frames", "must be >= 1")
    set_threads(threads)
    packed = _Packed.of(model)
    radius = collision_radius(model)
    gravity = params.gravity()
    dt = params.dt

    def head_frame(step_index):
        return rig.posed(eval_head_pose(motion, step_index * dt)).head_frame()

    frame_prev = head_frame(0)
    state = rest_state(model, frame_prev)
    frames, poses = [], []
    k = 0
    for f in range(frame_count):
        for sub in range(params.substeps):
            frame_next = head_frame(k + 1)
            state = _advance(state, packed, frame_prev, frame_next, params, wind, gravity, radius)
            # recompute time from the step index so it does not accumulate rounding
            state.time = (k + 1) * dt
            if not (np.all(np.isfinite(state.positions)) and np.all(np.isfinite(state.velocities))):
                raise SimulationDivergence(frame=f + 1, substep=sub + 1)
            frame_prev = frame_next
            k += 1
        frames.append(state.positions.astype(np.float32))
        poses.append(eval_head_pose(motion, k * dt))
    return GeometrySequence(frames, packed.counts.copy(), poses)


def freeze_geometry(seq: GeometrySequence, at_frame: int, new_length: int) -> GeometrySequence:
    if not 0 <= at_frame < len(seq):
        raise IndexError(f"freeze frame {at_frame} outside sequence of length {len(seq)}")
    if new_length < 1:
        raise ValidationError("new_length", "must be >= 1")
    frames = [seq.frames[at_frame].copy() for _ in range(new_length)]
    poses = [seq.poses[at_frame]] * new_length if seq.poses else []
    return GeometrySequence(frames, seq.counts.copy(), poses)


# --- HSEQ v1 -----------------------------------------------------------------

_HSEQ = b"HSEQ"


def save_geometry(seq: GeometrySequence, path) -> None:
    counts = seq.counts.astype("<u4")
    vmax = int(counts.max())
    header = _HSEQ + struct.pack("<IIII", 1, len(seq), len(counts), vmax)
    uniform = bool(np.all(counts == vmax))
    with open(path, "wb") as fh:
        fh.write(header)
        for frame in seq.frames:
            if uniform:
                rec = np.empty(len(counts), dtype=[("n", "<u4"), ("p", "<f4", (vmax, 3))])
                rec["n"] = counts
                rec["p"] = frame
                fh.write(rec.tobytes())
            else:
                for i, n in enumerate(counts):
                    fh.write(struct.pack("<I", n))
                    fh.write(frame[i, :n].astype("<f4").tobytes())


def load_geometry(path) -> GeometrySequence:
    """Read an HSEQ dump. Poses are not stored; callers re-derive them from the motion script."""
    buf = Path(path).read_bytes()
    if buf[:4] != _HSEQ:
        raise FormatError(0, f"bad magic {buf[:4]!r}, expected {_HSEQ!r}")
    if len(buf) < 20:
        raise FormatError(len(buf), "truncated header")
    version, n_frames, n_strands, vmax = struct.unpack_from("<IIII", buf, 4)
    if version != 1:
        raise FormatError(4, f"unsupported version {version}")
    off = 20
    rec = np.dtype([("n", "<u4"), ("p", "<f4", (vmax, 3))])
    if len(buf) - off == n_frames * n_strands * rec.itemsize:
        data = np.frombuffer(buf, dtype=rec, offset=off).reshape(n_frames, n_strands)
        if np.all(data["n"] == vmax):
            frames = [np.array(data["p"][f]) for f in range(n_frames)]
            for f, fr in enumerate(frames):
                if not np.all(np.isfinite(fr)):
                    raise FormatError(off + f * n_strands * rec.itemsize, f"non-finite position in frame {f}")
            return GeometrySequence(frames, np.full(n_strands, vmax, dtype=np.int64))
    counts = None
    frames = []
    for f in range(n_frames):
        fr = np.zeros((n_strands, vmax, 3), dtype=np.float32)
        cs = np.zeros(n_strands, dtype=np.int64)
        for i in range(n_strands):
            if off + 4 > len(buf):
                raise FormatError(off, f"truncated vertex count (frame {f}, strand {i})")
            (n,) = struct.unpack_from("<I", buf, off)
            if not 1 <= n <= vmax:
                raise FormatError(off, f"vertex count {n} outside [1, {vmax}]")
            off += 4
            if off + 12 * n > len(buf):
                raise FormatError(off, f"truncated positions (frame {f}, strand {i})")
            p = np.frombuffer(buf, dtype="<f4", count=3 * n, offset=off).reshape(n, 3)
            if not np.all(np.isfinite(p)):
                raise FormatError(off, f"non-finite position (frame {f}, strand {i})")
            fr[i, :n] = p
            fr[i, n:] = p[-1]
            cs[i] = n
            off += 12 * n
        if counts is not None and not np.array_equal(counts, cs):
            raise FormatError(off, f"vertex counts change at frame {f}")
        counts = cs
        frames.append(fr)
    if off != len(buf):
        raise FormatError(off, f"{len(buf) - off} trailing bytes")
    return GeometrySequence(frames, counts if counts is not None else np.zeros(n_strands, dtype=np.int64))
