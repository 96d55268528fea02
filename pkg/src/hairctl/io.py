"""Scenario JSON, PNG frame export and control bundles."""
from __future__ import annotations

import hashlib
import json
import shutil
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import BundleError, ValidationError
from .hair import WigSpec
from .physics import HeadMotionScript, Keyframe, PhysicsParams, WindField
from .raster import ControlSequence
from .scenario import CameraSpec, EffectSpec, RigSpec, ScenarioConfig, validate_scenario

BUNDLE_FORMAT_VERSION = 1
PNG_COMPRESS_LEVEL = 6


# --- scenario schema -----------------------------------------------------------

def _check_keys(d, allowed, where):
    if not isinstance(d, dict):
        raise ValidationError(where or "scenario", "expected a JSON object")
    for key in d:
        if key not in allowed:
            name = f"{where}.{key}" if where else key
            raise ValidationError(name, "unknown key")


def _num(d, key, default, where, integer=False):
    name = f"{where}.{key}" if where else key
    v = d.get(key, default)
    if v is None and default is None:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValidationError(name, "expected a number")
    if integer:
        if isinstance(v, float) and not v.is_integer():
            raise ValidationError(name, "expected an integer")
        return int(v)
    return float(v)


def _vec(d, key, default, where, n=3):
    name = f"{where}.{key}"
    v = d.get(key, default)
    if not isinstance(v, (list, tuple)) or len(v) != n \
            or any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in v):
        raise ValidationError(name, f"expected a list of {n} numbers")
    return tuple(float(x) for x in v)


def _keyframe_pairs(v, name):
    if not isinstance(v, (list, tuple)) or not v:
        raise ValidationError(name, "expected a non-empty list of [frame, degrees] pairs")
    out = []
    for i, k in enumerate(v):
        if not isinstance(k, (list, tuple)) or len(k) != 2:
            raise ValidationError(f"{name}[{i}]", "expected [frame, degrees]")
        f, a = k
        if isinstance(f, bool) or not isinstance(f, (int, float)) or float(f) != int(f):
            raise ValidationError(f"{name}[{i}]", "frame must be an integer")
        if isinstance(a, bool) or not isinstance(a, (int, float)):
            raise ValidationError(f"{name}[{i}]", "angle must be a number")
        out.append((int(f), float(a)))
    return tuple(out)


_WIG_KEYS = ("strand_count", "segments_per_strand", "length", "curl", "scalp_coverage", "seed")


def _parse_wig(d):
    if isinstance(d, str):
        return d
    if isinstance(d, dict) and set(d) == {"path"}:
        if not isinstance(d["path"], str):
            raise ValidationError("wig.path", "expected a string")
        return d["path"]
    _check_keys(d, _WIG_KEYS + ("path",), "wig")
    if "path" in d:
        raise ValidationError("wig.path", "a strand file excludes procedural wig fields")
    w = WigSpec()
    return WigSpec(
        strand_count=_num(d, "strand_count", w.strand_count, "wig", integer=True),
        segments_per_strand=_num(d, "segments_per_strand", w.segments_per_strand, "wig", integer=True),
        length=_num(d, "length", w.length, "wig"),
        curl=_num(d, "curl", w.curl, "wig"),
        scalp_coverage=_num(d, "scalp_coverage", w.scalp_coverage, "wig"),
        seed=_num(d, "seed", w.seed, "wig", integer=True),
    ).validate()


def _parse_physics(d):
    _check_keys(d, ("mass", "stiffness", "damping", "gravity_scale", "substeps", "fps"), "physics")
    p = PhysicsParams()
    return PhysicsParams(
        mass=_num(d, "mass", p.mass, "physics"),
        stiffness=_num(d, "stiffness", p.stiffness, "physics"),
        damping=_num(d, "damping", p.damping, "physics"),
        gravity_scale=_num(d, "gravity_scale", p.gravity_scale, "physics"),
        substeps=_num(d, "substeps", p.substeps, "physics", integer=True),
        fps=_num(d, "fps", p.fps, "physics"),
    ).validate()


def _parse_wind(d):
    _check_keys(d, ("direction", "strength", "gust_amplitude", "gust_frequency",
                    "drag_coefficient", "seed"), "wind")
    w = ScenarioConfig().wind
    return WindField(
        direction=_vec(d, "direction", w.direction, "wind"),
        strength=_num(d, "strength", w.strength, "wind"),
        gust_amplitude=_num(d, "gust_amplitude", w.gust_amplitude, "wind"),
        gust_frequency=_num(d, "gust_frequency", w.gust_frequency, "wind"),
        drag_coefficient=_num(d, "drag_coefficient", w.drag_coefficient, "wind"),
        seed=_num(d, "seed", w.seed, "wind", integer=True),
    ).validate()


def _parse_motion(d):
    _check_keys(d, ("keyframes",), "motion")
    keys = d.get("keyframes", [{"time": 0.0}])
    if not isinstance(keys, list) or not keys:
        raise ValidationError("motion.keyframes", "expected a non-empty list")
    out = []
    for i, k in enumerate(keys):
        where = f"motion.keyframes[{i}]"
        _check_keys(k, ("time", "yaw", "pitch", "roll", "translation"), where)
        if "time" not in k:
            raise ValidationError(f"{where}.time", "required")
        out.append(Keyframe(
            time=_num(k, "time", 0.0, where), yaw=_num(k, "yaw", 0.0, where),
            pitch=_num(k, "pitch", 0.0, where), roll=_num(k, "roll", 0.0, where),
            translation=_vec(k, "translation", (0.0, 0.0, 0.0), where),
        ))
    return HeadMotionScript(tuple(out)).validate()


def _parse_rig(d):
    _check_keys(d, ("head_center", "head_radius"), "rig")
    r = RigSpec()
    spec = RigSpec(_vec(d, "head_center", r.head_center, "rig"),
                   _num(d, "head_radius", r.head_radius, "rig"))
    if not spec.head_radius > 0:
        raise ValidationError("rig.head_radius", "must be > 0")
    return spec


def _parse_camera(d):
    _check_keys(d, ("target", "radius", "elevation", "azimuth_keyframes", "fx", "fy", "cx", "cy"),
                "camera")
    c = CameraSpec()
    spec = CameraSpec(
        target=_vec(d, "target", c.target, "camera"),
        radius=_num(d, "radius", c.radius, "camera"),
        elevation=_num(d, "elevation", c.elevation, "camera"),
        azimuth_keyframes=_keyframe_pairs(d.get("azimuth_keyframes", c.azimuth_keyframes),
                                          "camera.azimuth_keyframes"),
        fx=_num(d, "fx", c.fx, "camera"), fy=_num(d, "fy", c.fy, "camera"),
        cx=_num(d, "cx", None, "camera"), cy=_num(d, "cy", None, "camera"),
    )
    if not spec.radius > 0:
        raise ValidationError("camera.radius", "must be > 0")
    if not abs(spec.elevation) < 89:
        raise ValidationError("camera.elevation", "must be within (-89, 89) degrees")
    return spec


def _parse_effect(d):
    if isinstance(d, str):
        d = {"type": d}
    _check_keys(d, ("type", "freeze_frame", "azimuth_keyframes"), "effect")
    kind = d.get("type", "none")
    if kind not in ("none", "bullet_time", "cinemagraph"):
        raise ValidationError("effect.type", "must be none, bullet_time or cinemagraph")
    if kind != "bullet_time" and ("freeze_frame" in d or "azimuth_keyframes" in d):
        raise ValidationError("effect", "freeze_frame/azimuth_keyframes only apply to bullet_time")
    freeze = _num(d, "freeze_frame", None, "effect", integer=True)
    keys = d.get("azimuth_keyframes")
    if keys is not None:
        keys = _keyframe_pairs(keys, "effect.azimuth_keyframes")
    return EffectSpec(kind, freeze, keys)


_TOP_KEYS = ("frames", "resolution", "wig", "rig", "physics", "wind", "motion", "camera",
             "reference_image_path", "effect")


def scenario_from_dict(d) -> ScenarioConfig:
    _check_keys(d, _TOP_KEYS, "")
    base = ScenarioConfig()
    res = d.get("resolution", list(base.resolution))
    if not isinstance(res, (list, tuple)) or len(res) != 2 \
            or any(isinstance(x, bool) or not isinstance(x, int) or x < 1 for x in res):
        raise ValidationError("resolution", "expected [width, height] positive integers")
    ref = d.get("reference_image_path")
    if ref is not None and not isinstance(ref, str):
        raise ValidationError("reference_image_path", "expected a string or null")
    cfg = ScenarioConfig(
        frames=_num(d, "frames", base.frames, "", integer=True),
        resolution=(int(res[0]), int(res[1])),
        wig=_parse_wig(d["wig"]) if "wig" in d else base.wig,
        rig=_parse_rig(d.get("rig", {})),
        physics=_parse_physics(d.get("physics", {})),
        wind=_parse_wind(d.get("wind", {})),
        motion=_parse_motion(d.get("motion", {})),
        camera=_parse_camera(d.get("camera", {})),
        reference_image_path=ref,
        effect=_parse_effect(d.get("effect", {})),
    )
    return validate_scenario(cfg)


def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    wig = {"path": cfg.wig} if isinstance(cfg.wig, str) else {k: getattr(cfg.wig, k) for k in _WIG_KEYS}
    p, w, c, e = cfg.physics, cfg.wind, cfg.camera, cfg.effect
    effect = {"type": e.kind}
    if e.freeze_frame is not None:
        effect["freeze_frame"] = e.freeze_frame
    if e.azimuth_keyframes is not None:
        effect["azimuth_keyframes"] = [list(k) for k in e.azimuth_keyframes]
    return {
        "frames": cfg.frames,
        "resolution": list(cfg.resolution),
        "wig": wig,
        "rig": {"head_center": list(cfg.rig.head_center), "head_radius": cfg.rig.head_radius},
        "physics": {"mass": p.mass, "stiffness": p.stiffness, "damping": p.damping,
                    "gravity_scale": p.gravity_scale, "substeps": p.substeps, "fps": p.fps},
        "wind": {"direction": list(w.direction), "strength": w.strength,
                 "gust_amplitude": w.gust_amplitude, "gust_frequency": w.gust_frequency,
                 "drag_coefficient": w.drag_coefficient, "seed": w.seed},
        "motion": {"keyframes": [{"time": k.time, "yaw": k.yaw, "pitch": k.pitch, "roll": k.roll,
                                  "translation": list(k.translation)}
                                 for k in cfg.motion.keyframes]},
        "camera": {"target": list(c.target), "radius": c.radius, "elevation": c.elevation,
                   "azimuth_keyframes": [list(k) for k in c.azimuth_keyframes],
                   "fx": c.fx, "fy": c.fy, "cx": c.cx, "cy": c.cy},
        "reference_image_path": cfg.reference_image_path,
        "effect": effect,
    }


def canonical_scenario(cfg: ScenarioConfig) -> str:
    return json.dumps(scenario_to_dict(cfg), sort_keys=True, separators=(",", ":"))


def parse_scenario_text(text: str) -> ScenarioConfig:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError("scenario", f"JSON parse error at line {exc.lineno}, "
                                          f"column {exc.colno}: {exc.msg}") from exc
    return scenario_from_dict(d)


def parse_scenario(path) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise BundleError(f"cannot read scenario {path}: {exc}") from exc
    return parse_scenario_text(text)


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def scenario_hash(cfg: ScenarioConfig) -> str:
    return f"{fnv1a64(canonical_scenario(cfg).encode()):016x}"


# --- frames and bundles ----------------------------------------------------------

def frame_name(i):
    return f"frame_{i + 1:04d}.png"


def write_png(pixels, path):
    Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8), "RGB").save(
        path, format="PNG", compress_level=PNG_COMPRESS_LEVEL, optimize=False)


def read_png(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def export_frames(seq: ControlSequence, directory, threads=1) -> dict:
    """Write ``frame_0001.png`` ... and ``manifest.json`` (written last)."""
    out = Path(directory)
    try:
        out.mkdir(parents=True, exist_ok=True)

        def one(i):
            path = out / frame_name(i)
            write_png(seq.frames[i].image.pixels, path)
            return {"file": path.name, "sha256": _sha256(path)}

        if threads and threads > 1:
            with ThreadPoolExecutor(max_workers=int(threads)) as pool:
                entries = list(pool.map(one, range(len(seq))))
        else:
            entries = [one(i) for i in range(len(seq))]
        manifest = {"format": "hairctl-frames", "format_version": BUNDLE_FORMAT_VERSION,
                    "resolution": list(seq.resolution), "fps": seq.fps,
                    "frame_count": len(seq), "frames": entries}
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise BundleError(f"cannot write frames to {out}: {exc}") from exc
    return manifest


def export_bundle(seq: ControlSequence, scenario: ScenarioConfig, directory, geometry=None,
                  threads=1) -> dict:
    """Frames under ``frames/``, the canonical scenario, optional geometry and reference image."""
    from .physics import save_geometry

    out = Path(directory)
    frames_manifest = export_frames(seq, out / "frames", threads)
    try:
        (out / "scenario.json").write_text(canonical_scenario(scenario) + "\n")
        geometry_entry = None
        if geometry is not None:
            save_geometry(geometry, out / "geometry.hseq")
            geometry_entry = {"file": "geometry.hseq", "sha256": _sha256(out / "geometry.hseq")}
        reference = None
        if scenario.reference_image_path:
            src = Path(scenario.reference_image_path)
            reference = "reference" + src.suffix.lower()
            shutil.copyfile(src, out / reference)
        manifest = {
            "format": "hairctl-bundle",
            "format_version": BUNDLE_FORMAT_VERSION,
            "resolution": list(seq.resolution),
            "fps": seq.fps,
            "frame_count": len(seq),
            "scenario_hash": scenario_hash(scenario),
            "frames_dir": "frames",
            "frames": frames_manifest["frames"],
            "geometry": geometry_entry,
            "reference_present": reference is not None,
            "reference_image": reference,
            "reference_sha256": _sha256(out / reference) if reference else None,
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise BundleError(f"cannot write bundle to {out}: {exc}") from exc
    return manifest


def verify_bundle(directory) -> list:
    """Return a list of problems; empty means the bundle matches its manifest."""
    out = Path(directory)
    try:
        manifest = json.loads((out / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        return [f"manifest unreadable: {exc}"]
    problems = []
    frames_dir = out / manifest.get("frames_dir", "frames")
    on_disk = sorted(p.name for p in frames_dir.glob("frame_*.png"))
    if len(on_disk) != manifest["frame_count"] or len(manifest["frames"]) != manifest["frame_count"]:
        problems.append(f"frame count mismatch: manifest {manifest['frame_count']}, "
                        f"listed {len(manifest['frames'])}, on disk {len(on_disk)}")
    for entry in manifest["frames"]:
        path = frames_dir / entry["file"]
        if not path.exists():
            problems.append(f"missing {entry['file']}")
        elif _sha256(path) != entry["sha256"]:
            problems.append(f"hash mismatch {entry['file']}")
    geo = manifest.get("geometry")
    if geo:
        path = out / geo["file"]
        if not path.exists() or _sha256(path) != geo["sha256"]:
            problems.append(f"geometry {geo['file']} missing or hash mismatch")
    if manifest.get("reference_present"):
        path = out / manifest["reference_image"]
        if not path.exists() or _sha256(path) != manifest["reference_sha256"]:
            problems.append("reference image missing or hash mismatch")
    scen = out / "scenario.json"
    if scen.exists():
        text = scen.read_text().strip()
        if f"{fnv1a64(text.encode()):016x}" != manifest["scenario_hash"]:
            problems.append("scenario hash mismatch")
    else:
        problems.append("scenario.json missing")
    return problems
