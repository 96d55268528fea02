"""Scenario description, the end-to-end pipeline, bullet-time and cinemagraph effects."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .camera import CameraIntrinsics, CameraTrajectory, orbit_trajectory, validate_keyframes
from .errors import HairctlError, StageError, ValidationError
from .hair import HairModel, HumanRig, WigSpec, attach_to_scalp, generate_wig, load_strands
from .physics import (GeometrySequence, HeadMotionScript, PhysicsParams, WindField,
                      eval_head_pose, freeze_geometry, simulate)
from .raster import ControlFrame, ControlSequence, extract_control_sequence

EFFECTS = ("none", "bullet_time", "cinemagraph")


def clockwise_heading(degrees):
    """Horizontal unit vector turned clockwise (seen from above) from the default camera's forward axis."""
    a = np.radians(degrees)
    return (float(np.sin(a)), 0.0, float(-np.cos(a)))


@dataclass(frozen=True)
class RigSpec:
    head_center: tuple = (0.0, 1.65, 0.0)
    head_radius: float = 0.1

    def build(self) -> HumanRig:
        if not self.head_radius > 0:
            raise ValidationError("rig.head_radius", "must be > 0")
        return HumanRig.default(self.head_center, self.head_radius)


@dataclass(frozen=True)
class CameraSpec:
    target: tuple = (0.0, 1.5, 0.0)
    radius: float = 1.4
    elevation: float = 0.0
    azimuth_keyframes: tuple = ((0, 0.0),)
    fx: float = 550.0
    fy: float = 550.0
    cx: float | None = None  # None: image center
    cy: float | None = None

    def intrinsics(self, resolution) -> CameraIntrinsics:
        w, h = resolution
        return CameraIntrinsics(self.fx, self.fy, w / 2.0 if self.cx is None else self.cx,
                                h / 2.0 if self.cy is None else self.cy, w, h).validate()


@dataclass(frozen=True)
class EffectSpec:
    kind: str = "none"
    freeze_frame: int | None = None
    azimuth_keyframes: tuple | None = None


@dataclass(frozen=True)
class ScenarioConfig:
    frames: int = 81
    resolution: tuple = (832, 480)
    wig: WigSpec | str = field(default_factory=WigSpec)
    rig: RigSpec = field(default_factory=RigSpec)
    physics: PhysicsParams = field(default_factory=PhysicsParams)
    wind: WindField = field(default_factory=lambda: WindField(direction=clockwise_heading(70.0),
                                                              gust_amplitude=0.2))
    motion: HeadMotionScript = field(default_factory=HeadMotionScript)
    camera: CameraSpec = field(default_factory=CameraSpec)
    reference_image_path: str | None = None
    effect: EffectSpec = field(default_factory=EffectSpec)

    def with_seed(self, seed: int) -> ScenarioConfig:
        wig = replace(self.wig, seed=seed) if isinstance(self.wig, WigSpec) else self.wig
        return replace(self, wig=wig, wind=replace(self.wind, seed=seed))


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except (HairctlError, IndexError, OSError) as exc:
        raise StageError(name, exc) from exc


def build_hair(cfg: ScenarioConfig, rig: HumanRig) -> HairModel:
    model = generate_wig(cfg.wig, rig) if isinstance(cfg.wig, WigSpec) else load_strands(cfg.wig)
    return attach_to_scalp(model, rig)


def simulate_scenario(cfg: ScenarioConfig, frame_count=None, threads=None):
    rig = _stage("rig", cfg.rig.build)
    model = _stage("hair", build_hair, cfg, rig)
    n = cfg.frames if frame_count is None else frame_count
    seq = _stage("simulate", simulate, model, rig, cfg.physics, cfg.wind, cfg.motion, n,
                 threads=threads)
    return rig, seq


def camera_trajectory(cfg: ScenarioConfig, keyframes=None, frame_count=None) -> CameraTrajectory:
    cam = cfg.camera
    return orbit_trajectory(cam.target, cam.radius, cam.elevation,
                            keyframes if keyframes is not None else cam.azimuth_keyframes,
                            cam.intrinsics(cfg.resolution),
                            cfg.frames if frame_count is None else frame_count)


def _bullet_defaults(cfg: ScenarioConfig, freeze_frame, keyframes):
    if freeze_frame is None:
        freeze_frame = cfg.effect.freeze_frame
    if freeze_frame is None:
        freeze_frame = (cfg.frames - 1) // 2
    if keyframes is None:
        keyframes = cfg.effect.azimuth_keyframes
    if keyframes is None:
        keyframes = default_bullet_keyframes(cfg.frames, freeze_frame)
    return freeze_frame, tuple(tuple(k) for k in keyframes)


def default_bullet_keyframes(frames, freeze_frame, right=20.0, left=40.0):
    """Hold the front view until the freeze, swing ``right`` degrees, then ``left`` degrees back."""
    last = frames - 1
    mid = freeze_frame + (last - freeze_frame) // 2
    keys = [(0, 0.0)]
    if freeze_frame > 0:
        keys.append((freeze_frame, 0.0))
    if mid > freeze_frame:
        keys.append((mid, right))
    if last > mid:
        keys.append((last, right - left))
    return tuple(keys)


def bullet_geometry(cfg: ScenarioConfig, freeze_frame, threads=None):
    if not 0 <= freeze_frame < cfg.frames:
        raise StageError("bullet_time", IndexError(
            f"freeze frame {freeze_frame} outside clip of {cfg.frames} frames"))
    rig, live = simulate_scenario(cfg, frame_count=freeze_frame + 1, threads=threads)
    seq = live
    remaining = cfg.frames - freeze_frame - 1
    if remaining:
        held = _stage("freeze", freeze_geometry, live, freeze_frame, remaining)
        seq = GeometrySequence(live.frames + held.frames, live.counts, live.poses + held.poses)
    return rig, seq


def bullet_time(cfg: ScenarioConfig, freeze_frame=None, azimuth_keyframes=None,
                threads=None) -> ControlSequence:
    """Simulate up to ``freeze_frame``, hold that geometry, and orbit the camera."""
    freeze_frame, keys = _bullet_defaults(cfg, freeze_frame, azimuth_keyframes)
    rig, seq = bullet_geometry(cfg, freeze_frame, threads)
    traj = _stage("camera", camera_trajectory, cfg, keys)
    return _stage("extract", extract_control_sequence, seq, rig, traj, cfg.physics.fps, threads)


def palindrome(items):
    return list(items) + list(items[-2:0:-1])


def cinemagraph_loop(seq: ControlSequence) -> ControlSequence:
    """Append the reversed clip without repeating either end: f1..fT, fT-1..f2."""
    if len(seq) < 2:
        raise ValidationError("frames", "a cinemagraph loop needs at least 2 frames")
    frames = [ControlFrame(f.image, i, f.mask) for i, f in enumerate(palindrome(seq.frames))]
    return ControlSequence(frames, seq.resolution, seq.fps)


def scenario_poses(cfg: ScenarioConfig):
    """Per-frame head poses of the final clip, matching what run_pipeline renders."""
    # same time expression as simulate() so poses match bit for bit
    p = cfg.physics
    live = [eval_head_pose(cfg.motion, (i + 1) * p.substeps * p.dt) for i in range(cfg.frames)]
    kind = cfg.effect.kind
    if kind == "bullet_time":
        f, _ = _bullet_defaults(cfg, None, None)
        return live[:f + 1] + [live[f]] * (cfg.frames - f - 1)
    if kind == "cinemagraph":
        return palindrome(live)
    return live


def scenario_trajectory(cfg: ScenarioConfig) -> CameraTrajectory:
    kind = cfg.effect.kind
    if kind == "bullet_time":
        _, keys = _bullet_defaults(cfg, None, None)
        return camera_trajectory(cfg, keys)
    traj = camera_trajectory(cfg)
    if kind == "cinemagraph":
        az = palindrome(traj.azimuths)
        return CameraTrajectory(palindrome(traj.poses), traj.intrinsics, az)
    return traj


def scenario_geometry(cfg: ScenarioConfig, threads=None):
    """Stage 1 with the configured effect applied: ``(rig, GeometrySequence)``."""
    validate_scenario(cfg)
    kind = cfg.effect.kind
    if kind == "bullet_time":
        f, _ = _bullet_defaults(cfg, None, None)
        return bullet_geometry(cfg, f, threads)
    rig, seq = simulate_scenario(cfg, threads=threads)
    if kind == "cinemagraph":
        if len(seq) < 2:
            raise StageError("cinemagraph", ValidationError("frames", "need at least 2 frames"))
        seq = GeometrySequence(palindrome(seq.frames), seq.counts, palindrome(seq.poses))
    return rig, seq


def run_pipeline(cfg: ScenarioConfig, threads=None):
    """Stage 1 (simulate) then Stage 2 (project + rasterize) with the configured effect."""
    validate_scenario(cfg)
    if cfg.effect.kind == "cinemagraph":
        rig, seq = simulate_scenario(cfg, threads=threads)
        traj = _stage("camera", camera_trajectory, cfg)
        controls = _stage("extract", extract_control_sequence, seq, rig, traj, cfg.physics.fps, threads)
        controls = _stage("cinemagraph", cinemagraph_loop, controls)
        seq = GeometrySequence(palindrome(seq.frames), seq.counts, palindrome(seq.poses))
        return seq, controls
    rig, seq = scenario_geometry(cfg, threads)
    traj = _stage("camera", scenario_trajectory, cfg)
    controls = _stage("extract", extract_control_sequence, seq, rig, traj, cfg.physics.fps, threads)
    return seq, controls


def validate_scenario(cfg: ScenarioConfig):
    if not isinstance(cfg.frames, int) or cfg.frames < 1:
        raise ValidationError("frames", "must be an integer >= 1")
    w, h = cfg.resolution
    if not (isinstance(w, int) and isinstance(h, int) and w >= 1 and h >= 1):
        raise ValidationError("resolution", "must be two positive integers")
    if isinstance(cfg.wig, WigSpec):
        cfg.wig.validate()
    cfg.physics.validate()
    cfg.wind.validate()
    cfg.motion.validate()
    cfg.camera.intrinsics(cfg.resolution)
    validate_keyframes(cfg.camera.azimuth_keyframes)
    e = cfg.effect
    if e.kind not in EFFECTS:
        raise ValidationError("effect.type", f"must be one of {EFFECTS}")
    if e.kind == "cinemagraph" and cfg.frames < 2:
        raise ValidationError("frames", "cinemagraph needs at least 2 frames")
    if e.kind == "bullet_time" and e.freeze_frame is not None \
            and not 0 <= e.freeze_frame < cfg.frames:
        raise ValidationError("effect.freeze_frame", f"must be in [0, {cfg.frames})")
    if e.azimuth_keyframes is not None:
        validate_keyframes(e.azimuth_keyframes, "effect.azimuth_keyframes")
    return cfg
