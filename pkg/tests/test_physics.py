import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hairctl.errors import FormatError, SimulationDivergence, ValidationError
from hairctl.hair import HairModel, Strand, WigSpec, attach_to_scalp, generate_wig
from hairctl.physics import (GeometrySequence, HeadMotionScript, Keyframe, PhysicsParams, SimState,
                             WindField, collision_radius, eval_head_pose, eval_wind, freeze_geometry,
                             gust_noise, load_geometry, rest_state, save_geometry, simulate, step)
from hairctl.transforms import RigidTransform, yaw_of

CALM = WindField(strength=0.0)


def _rest(model, rig):
    return rest_state(model, rig.head_frame())


# --- head motion ----------------------------------------------------------------

def test_single_identity_keyframe():
    for t in (0.0, 0.3, 17.0):
        assert eval_head_pose(HeadMotionScript(), t) == RigidTransform.identity()


def test_yaw_slerp_midpoint():
    script = HeadMotionScript((Keyframe(0.0), Keyframe(1.0, yaw=40.0)))
    assert abs(yaw_of(eval_head_pose(script, 0.5).rotation) - 20.0) < 1e-6


def test_pose_clamps_after_last_keyframe():
    script = HeadMotionScript((Keyframe(0.0), Keyframe(1.0, yaw=30.0, pitch=5.0, translation=(0.1, 0, 0))))
    assert eval_head_pose(script, 5.0) == eval_head_pose(script, 1.0)
    np.testing.assert_array_equal(eval_head_pose(script, 5.0).translation, [0.1, 0, 0])


def test_translation_lerp():
    script = HeadMotionScript((Keyframe(0.0), Keyframe(2.0, translation=(0.2, -0.4, 0.0))))
    np.testing.assert_allclose(eval_head_pose(script, 0.5).translation, [0.05, -0.1, 0.0], atol=1e-15)


def test_motion_validation():
    with pytest.raises(ValidationError):
        HeadMotionScript((Keyframe(0.5),)).validate()
    with pytest.raises(ValidationError):
        HeadMotionScript((Keyframe(0.0), Keyframe(1.0), Keyframe(1.0))).validate()


# --- wind -----------------------------------------------------------------------

def test_constant_wind_without_gusts():
    w = WindField((1.0, 0.0, 0.0), 10.0, gust_amplitude=0.0)
    for p, t in [((0, 0, 0), 0.0), ((1, 2, 3), 4.5), ((-7, 0.1, 9), 100.0)]:
        np.testing.assert_array_equal(eval_wind(w, p, t), [10.0, 0.0, 0.0])


def test_zero_strength_wind():
    w = WindField((0.0, 0.0, 1.0), 0.0, gust_amplitude=0.7)
    np.testing.assert_array_equal(eval_wind(w, (0.3, 1.2, 0.0), 2.0), [0.0, 0.0, 0.0])


def test_gusts_deterministic_and_seeded():
    w = WindField((0.0, 1.0, 0.0), 5.0, gust_amplitude=0.5, seed=42)
    a = eval_wind(w, (0.1, 1.6, 0.2), 1.3)
    assert np.array_equal(a, eval_wind(w, (0.1, 1.6, 0.2), 1.3))
    other = WindField((0.0, 1.0, 0.0), 5.0, gust_amplitude=0.5, seed=43)
    assert not np.array_equal(a, eval_wind(other, (0.1, 1.6, 0.2), 1.3))


@settings(max_examples=300, deadline=None)
@given(x=st.floats(-50, 50), y=st.floats(-50, 50), z=st.floats(-50, 50), t=st.floats(0, 500),
       seed=st.integers(0, 2**64 - 1))
def test_gust_noise_bounded(x, y, z, t, seed):
    assert -1.0 <= gust_noise(x, y, z, t, np.uint64(seed)) <= 1.0


@settings(max_examples=50, deadline=None)
@given(amp=st.floats(0, 1), t=st.floats(0, 100))
def test_gusted_wind_keeps_direction(amp, t):
    d = np.array([0.6, 0.0, -0.8])
    w = WindField(tuple(d), 10.0, gust_amplitude=amp, seed=1)
    u = eval_wind(w, (0.2, 1.7, -0.1), t)
    s = float(u @ d)
    assert -1e-12 <= s <= 20.0 * (1 + 1e-12)
    np.testing.assert_allclose(u, s * d, atol=1e-12)


def test_wind_direction_must_be_unit():
    with pytest.raises(ValidationError) as exc:
        WindField((1.0, 1.0, 0.0)).validate()
    assert exc.value.field == "wind.direction"


# --- single substep ------------------------------------------------------------

def test_rest_state_is_fixed_point(small_wig, rig):
    p = PhysicsParams(gravity_scale=0.0)
    frame = rig.head_frame()
    s0 = _rest(small_wig, rig)
    s1 = step(s0, small_wig, p, CALM, p.gravity(), frame, frame)
    assert np.abs(s1.positions - s0.positions).max() < 1e-9
    assert np.abs(s1.velocities).max() < 1e-9


def _side_strand(rig, direction=(1.0, 0.0, 0.0), length=0.1, n=1):
    c = rig.head_sphere.center_array
    r = rig.head_sphere.radius
    d = np.asarray(direction, dtype=np.float64)
    root = c + r * np.array([0.0, 1.0, 0.0]) if d[1] == 0 else c + r * d
    verts = np.array([root + k * (length / n) * d for k in range(n + 1)])
    m = HairModel([Strand(verts, np.full(n, length / n))], rig.head_sphere)
    return attach_to_scalp(m, rig)


def test_one_euler_step_under_gravity(rig):
    # one free vertex on a horizontal 0.1 m segment from the crown; dt = 0.01
    L, dt = 0.1, 0.01
    m = _side_strand(rig, (1.0, 0.0, 0.0), L)
    calm = WindField(strength=0.0, drag_coefficient=0.0)
    frame = rig.head_frame()
    for gs in (1.0, 0.5):
        p = PhysicsParams(stiffness=0.0, damping=0.0, gravity_scale=gs, substeps=1, fps=100.0)
        v = step(_rest(m, rig), m, p, calm, p.gravity(), frame, frame).velocities[0, 1]
        # Euler: v = g*gs*dt straight down; the drop h = g*gs*dt^2 stretches the segment and
        # re-spacing pulls the vertex back by about h^2/(2L), credited to v along -x
        h = 9.81 * gs * dt * dt
        assert abs(v[1] - (-0.0981 * gs)) < 1e-4
        assert abs(v[0] - (-h * h / (2 * L) / dt)) < 1e-7
        assert v[2] == 0.0


def test_vertex_inside_head_is_pushed_out(rig):
    m = _side_strand(rig, (1.0, 0.0, 0.0), 0.1, n=2)
    p = PhysicsParams(gravity_scale=0.0, stiffness=0.0)
    frame = rig.head_frame()
    c = rig.head_sphere.center_array
    s = _rest(m, rig)
    s.positions[0, 1] = c + [0.03, 0.05, 0.0]  # well inside the sphere
    s.velocities[0, 1] = [-1.0, -1.0, 0.0]
    out = step(s, m, p, CALM, p.gravity(), frame, frame)
    e = out.positions[0, 1] - c
    dist = np.linalg.norm(e)
    assert dist >= rig.head_sphere.radius - 1e-6
    assert out.velocities[0, 1] @ (e / dist) >= -1e-9


def test_non_finite_state_diverges(small_wig, rig):
    p = PhysicsParams()
    s = _rest(small_wig, rig)
    s.positions[3, 4, 1] = np.nan
    with pytest.raises(SimulationDivergence):
        step(s, small_wig, p, CALM, p.gravity(), rig.head_frame(), rig.head_frame())


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_simulate_reports_divergence_frame(rig):
    m = _side_strand(rig, (1.0, 0.0, 0.0), 0.1, n=4)
    with pytest.raises(SimulationDivergence) as exc:
        simulate(m, rig, PhysicsParams(gravity_scale=1e308), CALM, HeadMotionScript(), 3)
    assert (exc.value.frame, exc.value.substep) == (1, 1)


def test_simulate_requires_attachment(rig):
    m = generate_wig(WigSpec(strand_count=3), rig)
    with pytest.raises(ValidationError):
        simulate(m, rig, PhysicsParams(), CALM, HeadMotionScript(), 1)


# --- whole clips -----------------------------------------------------------------

@pytest.fixture(scope="module")
def windy_nodding(small_wig, rig):
    motion = HeadMotionScript((Keyframe(0.0), Keyframe(1.0, yaw=25.0, pitch=-10.0),
                               Keyframe(2.0, yaw=-20.0, translation=(0.03, 0.0, 0.02))))
    wind = WindField((0.0, 0.0, -1.0), 10.0, gust_amplitude=0.5, seed=4)
    return simulate(small_wig, rig, PhysicsParams(), wind, motion, 40), motion


def test_inextensibility_every_frame(small_wig, windy_nodding):
    seq, _ = windy_nodding
    rest = small_wig.packed_rest_lengths()
    for f in seq.frames:
        seg = np.linalg.norm(np.diff(f.astype(np.float64), axis=1), axis=2)
        assert (np.abs(seg - rest) / rest).max() < 1e-3


def test_no_vertex_inside_head(small_wig, rig, windy_nodding):
    seq, _ = windy_nodding
    r = small_wig.scalp.radius
    for f, pose in zip(seq.frames, seq.poses):
        c = rig.posed(pose).head_frame().translation
        assert np.linalg.norm(f - c, axis=2).min() >= r - 1e-6


def test_roots_follow_head(small_wig, rig, windy_nodding):
    seq, motion = windy_nodding
    p = PhysicsParams()
    for i, f in enumerate(seq.frames):
        frame = rig.posed(eval_head_pose(motion, (i + 1) * p.substeps * p.dt)).head_frame()
        expect = frame.apply(small_wig.packed("rest_local")[:, 0])
        # snapshots are float32
        assert np.abs(f[:, 0] - expect).max() < 1e-6
        assert seq.poses[i] == eval_head_pose(motion, (i + 1) * p.substeps * p.dt)


def test_step_root_is_exact(small_wig, rig):
    motion = HeadMotionScript((Keyframe(0.0), Keyframe(0.1, yaw=10.0, translation=(0.0, 0.01, 0.0))))
    p = PhysicsParams()
    f0 = rig.posed(eval_head_pose(motion, 0.0)).head_frame()
    f1 = rig.posed(eval_head_pose(motion, p.dt)).head_frame()
    s1 = step(_rest(small_wig, rig), small_wig, p, CALM, p.gravity(), f0, f1)
    np.testing.assert_allclose(s1.positions[:, 0], f1.apply(small_wig.packed("rest_local")[:, 0]),
                               atol=1e-12, rtol=0)


def test_simulate_deterministic_across_threads(small_wig, rig):
    wind = WindField((0.6, 0.0, -0.8), 10.0, gust_amplitude=0.3, seed=2)
    a = simulate(small_wig, rig, PhysicsParams(), wind, HeadMotionScript(), 6, threads=1)
    b = simulate(small_wig, rig, PhysicsParams(), wind, HeadMotionScript(), 6, threads=8)
    assert [a.frame_digest(i) for i in range(6)] == [b.frame_digest(i) for i in range(6)]


def test_wind_pushes_centroid_downwind(small_wig, rig):
    p = PhysicsParams(stiffness=0.0, gravity_scale=0.0)
    start = _rest(small_wig, rig).positions
    seq = simulate(small_wig, rig, p, WindField((1.0, 0.0, 0.0), 10.0), HeadMotionScript(), 10)
    assert seq.frames[-1][..., 0].mean() - start[..., 0].mean() > 0


def test_wind_response_monotone(small_wig, rig):
    p = PhysicsParams(stiffness=0.0, gravity_scale=0.0)
    d = np.array([0.0, 0.0, 1.0])
    start = _rest(small_wig, rig).positions.reshape(-1, 3).mean(axis=0) @ d
    shifts = []
    for strength in (2.5, 5.0, 10.0, 20.0):
        seq = simulate(small_wig, rig, p, WindField(tuple(d), strength), HeadMotionScript(), 1)
        shifts.append(seq.frames[0].reshape(-1, 3).astype(np.float64).mean(axis=0) @ d - start)
    assert all(b >= a for a, b in zip(shifts, shifts[1:]))


def test_zero_gravity_equilibrium_clip(small_wig, rig):
    seq = simulate(small_wig, rig, PhysicsParams(gravity_scale=0.0), CALM, HeadMotionScript(), 20)
    start = _rest(small_wig, rig).positions
    assert max(np.abs(f - start).max() for f in seq.frames) < 1e-6


@pytest.mark.xfail(strict=True, reason="gravity 1 at stiffness 6 sags the hair by centimeters: "
                   "the shape spring balances m*g only at a 0.16 m offset (see decisions ledger)")
def test_default_gravity_drift_below_1mm(small_wig, rig):
    seq = simulate(small_wig, rig, PhysicsParams(), CALM, HeadMotionScript(), 81)
    start = _rest(small_wig, rig).positions
    assert max(np.abs(f - start).max() for f in seq.frames) < 1e-3


# --- freeze and HSEQ -------------------------------------------------------------

@pytest.fixture(scope="module")
def short_clip(small_wig, rig):
    return simulate(small_wig, rig, PhysicsParams(), WindField((1.0, 0.0, 0.0), 10.0),
                    HeadMotionScript((Keyframe(0.0), Keyframe(1.0, yaw=20.0))), 12)


def test_freeze_copies_one_frame(short_clip):
    out = freeze_geometry(short_clip, 7, 81)
    assert len(out) == 81
    want = short_clip.frame_digest(7)
    assert all(out.frame_digest(i) == want for i in range(81))
    assert all(p == short_clip.poses[7] for p in out.poses)
    one = freeze_geometry(short_clip, 0, 1)
    assert len(one) == 1 and one.frame_digest(0) == short_clip.frame_digest(0)
    # copies, not views
    one.frames[0][0, 0, 0] += 1
    assert one.frame_digest(0) != short_clip.frame_digest(0)


def test_freeze_out_of_range(short_clip):
    with pytest.raises(IndexError):
        freeze_geometry(short_clip, 12, 3)
    with pytest.raises(IndexError):
        freeze_geometry(short_clip, -1, 3)


def test_hseq_round_trip(tmp_path, short_clip):
    save_geometry(short_clip, tmp_path / "g.hseq")
    back = load_geometry(tmp_path / "g.hseq")
    assert len(back) == len(short_clip)
    assert np.array_equal(back.counts, short_clip.counts)
    assert all(np.array_equal(a, b) for a, b in zip(back.frames, short_clip.frames))


def test_hseq_mixed_counts(tmp_path, rig):
    c = rig.head_sphere.center_array
    r = rig.head_sphere.radius
    strands = [Strand(np.array([c + [0, r, 0], c + [0, r + 0.05, 0]]), np.array([0.05])),
               Strand(np.array([c + [r, 0, 0], c + [r + 0.05, 0, 0], c + [r + 0.1, 0, 0]]),
                      np.array([0.05, 0.05]))]
    m = attach_to_scalp(HairModel(strands, rig.head_sphere), rig)
    seq = simulate(m, rig, PhysicsParams(), CALM, HeadMotionScript(), 3)
    save_geometry(seq, tmp_path / "m.hseq")
    back = load_geometry(tmp_path / "m.hseq")
    assert list(back.counts) == [2, 3]
    assert all(np.array_equal(a, b) for a, b in zip(back.frames, seq.frames))


def test_hseq_format_errors(tmp_path, short_clip):
    save_geometry(short_clip, tmp_path / "g.hseq")
    raw = (tmp_path / "g.hseq").read_bytes()
    (tmp_path / "bad.hseq").write_bytes(b"HSQE" + raw[4:])
    with pytest.raises(FormatError) as exc:
        load_geometry(tmp_path / "bad.hseq")
    assert exc.value.offset == 0
    (tmp_path / "cut.hseq").write_bytes(raw[:-7])
    with pytest.raises(FormatError):
        load_geometry(tmp_path / "cut.hseq")


def test_params_validation():
    for field, kw in [("physics.mass", dict(mass=-1.0)), ("physics.stiffness", dict(stiffness=-1.0)),
                      ("physics.damping", dict(damping=-0.1)), ("physics.substeps", dict(substeps=0)),
                      ("physics.gravity_scale", dict(gravity_scale=-2.0))]:
        with pytest.raises(ValidationError) as exc:
            PhysicsParams(**kw).validate()
        assert exc.value.field == field


def test_collision_radius_adds_clearance(small_wig):
    assert collision_radius(small_wig) > small_wig.scalp.radius


def test_state_copy_is_independent(small_wig, rig):
    s = _rest(small_wig, rig)
    c = s.copy()
    c.positions[0, 0, 0] += 1.0
    assert s.positions[0, 0, 0] != c.positions[0, 0, 0]
    assert isinstance(c, SimState)


def test_geometry_sequence_digest_includes_pose(short_clip):
    g = GeometrySequence([short_clip.frames[0]], short_clip.counts, [])
    assert g.frame_digest(0) != short_clip.frame_digest(0)
