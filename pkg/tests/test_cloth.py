import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossdisp.cloth.anchor import AnchorPose, AnchorSpec, Regime, pose_in_regime, sample_anchor_pose
from crossdisp.cloth.env import (
    MANIPULATION_STEPS,
    RELEASE_STEPS,
    SIM_STEPS_PER_ENV_STEP,
    EvaluationPolicy,
    PseudoExpertPolicy,
    make_scene,
    run_episode,
    success_check,
)
from crossdisp.cloth.geometry import point_in_polygon, winding_number
from crossdisp.cloth.mesh import (
    SIMPLE_CLOTH,
    ClothMesh,
    ClothSpec,
    ClothSpecError,
    HoleSpec,
    build_mesh,
    generate_cloth,
    validate,
)
from crossdisp.cloth.sim import ClothSim, PhysicsParams, SimulationError, pd_control

# ---------------------------------------------------------------- cloth specs and meshes


def oracle_spec_ok(spec: ClothSpec) -> bool:
    """Constraints restated from the generator's contract."""
    n = spec.node_density
    for h in spec.holes:
        if not (2 <= h.x0 <= n - 2 and 2 <= h.y0 <= n - 2):
            return False
        if not (h.x1 <= n - 2 and h.y1 <= n - 2):
            return False
    for a in range(len(spec.holes)):
        for b in range(a):
            p, q = spec.holes[a], spec.holes[b]
            if not (p.x1 < q.x0 or q.x1 < p.x0 or p.y1 < q.y0 or q.y1 < p.y0):
                return False
    return 0.8 <= spec.width <= 1.2 and 0.8 <= spec.height <= 1.2


def test_fixed_cloth_is_valid():
    validate(SIMPLE_CLOTH)
    assert SIMPLE_CLOTH.holes == (HoleSpec(8, 9, 16, 13),)


def test_rejections():
    with pytest.raises(ClothSpecError, match="boundary"):
        validate(ClothSpec(25, 1.0, 1.0, (HoleSpec(0, 5, 6, 11),)))
    h = HoleSpec(5, 5, 10, 10)
    with pytest.raises(ClothSpecError, match="overlap"):
        validate(ClothSpec(25, 1.0, 1.0, (h, h)))
    with pytest.raises(ClothSpecError, match="1 or 2"):
        generate_cloth(np.random.default_rng(0), 3)


def test_generator_fuzz():
    rng = np.random.default_rng(1)
    for k in range(10_000):
        spec = generate_cloth(rng, 1 + k % 2)
        assert spec.num_holes == 1 + k % 2
        assert oracle_spec_ok(spec)
        for h in spec.holes:
            assert 5 <= h.x1 - h.x0 <= 7 and 5 <= h.y1 - h.y0 <= 7


def test_spec_dict_round_trip():
    spec = generate_cloth(np.random.default_rng(2), 2)
    assert ClothSpec.from_dict(spec.to_dict()) == spec


def test_no_hole_mesh_has_625_vertices():
    mesh = build_mesh(ClothSpec(25, 1.0, 1.0, ()))
    assert mesh.num_vertices == 625
    assert mesh.loops == []


@pytest.mark.parametrize("seed", range(5))
def test_hole_removes_interior_vertices(seed):
    spec = generate_cloth(np.random.default_rng(seed), 1 + seed % 2)
    mesh = build_mesh(spec)
    removed = {
        (i, j)
        for h in spec.holes
        for i in range(25)
        for j in range(25)
        if h.x0 < i < h.x1 and h.y0 < j < h.y1
    }
    assert mesh.num_vertices == 625 - len(removed)
    assert len(removed) == sum(h.interior_count for h in spec.holes)
    alive = {tuple(g) for g in mesh.grid_ij.tolist()}
    for loop in mesh.loops:
        for v in loop:
            i, j = mesh.grid_ij[v]
            nbrs = {(i + di, j + dj) for di in (-1, 0, 1) for dj in (-1, 0, 1)} - {(i, j)}
            assert nbrs & removed
        assert len(set(loop.tolist())) == len(loop)
    # springs never touch removed vertices and rest lengths are positive
    assert mesh.springs.max() < mesh.num_vertices
    assert np.all(mesh.rest_length > 0)
    assert len(alive) == mesh.num_vertices


def test_mesh_scaled_to_size():
    mesh = build_mesh(ClothSpec(25, 1.2, 0.8, ()), scale=10.0)
    extent = mesh.local.max(axis=0) - mesh.local.min(axis=0)
    np.testing.assert_allclose(extent, [0.0, 8.0, 12.0], atol=1e-12)


def test_gripper_vertices_are_top_corners():
    mesh = build_mesh(SIMPLE_CLOTH)
    a, b = mesh.gripper_vertices()
    assert mesh.grid_ij[a].tolist() == [0, 0] and mesh.grid_ij[b].tolist() == [24, 0]


# ---------------------------------------------------------------- anchor poses


@pytest.mark.parametrize("regime", list(Regime))
def test_pose_fuzz(regime):
    rng = np.random.default_rng(3)
    for _ in range(10_000):
        pose = sample_anchor_pose(rng, regime)
        x, y, z = pose.translation
        th = pose.rotation_z
        assert -math.pi / 3 <= th <= math.pi / 3 and -10 <= y <= 0
        assert x == 0 or (x > 0) == (th >= 0)
        if regime is Regime.OOD:
            assert 5 <= abs(x) <= 10 and 1 <= z <= 5
        else:
            assert abs(x) <= 5 and z == 0
        assert pose_in_regime(pose, regime)


def test_positive_rotation_gives_positive_x():
    rng = np.random.default_rng(4)
    for _ in range(1000):
        pose = sample_anchor_pose(rng, "unseen")
        if pose.rotation_z > 0:
            assert 0 <= pose.translation[0] < 5


def test_goal_location_is_peg_midpoint():
    spec = AnchorSpec(pose=AnchorPose((1.0, -2.0, 0.5), 0.3))
    hanger = spec.capsules()[1]
    np.testing.assert_allclose(spec.goal_location, 0.5 * (np.array(hanger.a) + np.array(hanger.b)), atol=1e-12)
    assert spec.goal_location.tobytes() == AnchorSpec(pose=AnchorPose((1.0, -2.0, 0.5), 0.3)).goal_location.tobytes()


def test_surface_samples_lie_on_parts():
    spec = AnchorSpec(pose=AnchorPose((2.0, -3.0, 1.0), -0.4))
    pts = spec.sample_surface(np.random.default_rng(5), 500)
    dist = np.full(len(pts), np.inf)
    for cap in spec.capsules():
        a, b = np.array(cap.a), np.array(cap.b)
        s = np.clip((pts - a) @ (b - a) / ((b - a) @ (b - a)), 0, 1)
        d = np.linalg.norm(pts - (a + s[:, None] * (b - a)), axis=1) - cap.radius
        dist = np.minimum(dist, np.abs(d))
    assert dist.max() < 1e-9


# ---------------------------------------------------------------- simulation


def single_particle_mesh():
    spec = ClothSpec(25, 1.0, 1.0, ())
    return ClothMesh(
        spec,
        np.zeros((1, 2), dtype=np.int64),
        np.zeros((1, 3)),
        np.zeros((0, 2), dtype=np.int64),
        np.zeros(0, dtype=np.int64),
        np.zeros(0),
        [],
        np.zeros((1, 1), dtype=np.int64),
    )


def test_equilibrium_without_gravity():
    mesh = build_mesh(SIMPLE_CLOTH)
    sim = ClothSim(mesh, [], PhysicsParams(gravity=0.0))
    state = sim.initial_state(mesh.local + [0.0, 0.0, 20.0], [])
    for _ in range(50):
        state = sim.step(state)
    np.testing.assert_allclose(state.x, mesh.local + [0.0, 0.0, 20.0], rtol=0, atol=1e-12)


def test_ballistic_particle():
    p = PhysicsParams(damping=1.0)
    sim = ClothSim(single_particle_mesh(), [], p)
    state = sim.initial_state(np.array([[0.0, 0.0, 100.0]]), [])
    k = 240
    for _ in range(k):
        state = sim.step(state)
    t = k * p.dt
    h = p.dt / p.substeps
    analytic = 100.0 - 0.5 * p.gravity * t * t
    assert abs(state.x[0, 2] - analytic) <= p.gravity * t * h
    assert abs(state.v[0, 2] + p.gravity * t) < 1e-9
    assert state.time == pytest.approx(t)


def _energies(sim, state, steps):
    out = [sim.energy(state)]
    for _ in range(steps):
        state = sim.step(state)
        out.append(sim.energy(state))
    return np.array(out)


def test_energy_non_increasing():
    mesh = build_mesh(SIMPLE_CLOTH)
    sim = ClothSim(mesh, [])
    e = _energies(sim, sim.initial_state(mesh.local + [0.0, 0.0, 500.0], []), 1000)
    assert np.all(np.diff(e) <= 1e-9 * np.abs(e).max())
    assert e[-1] < e[0]


def test_stretched_cloth_energy_bounded():
    # explicit integration of stiff springs oscillates around a shadow energy,
    # so only the envelope is monotone here
    mesh = build_mesh(SIMPLE_CLOTH)
    sim = ClothSim(mesh, [])
    e = _energies(sim, sim.initial_state(mesh.local * 1.05 + [0.0, 0.0, 500.0], []), 1000)
    assert e.max() == e[0]
    windows = e[1:].reshape(10, 100).mean(axis=1)
    assert np.all(np.diff(windows) < 0)


def test_nan_aborts_with_diagnostic():
    sim = ClothSim(single_particle_mesh(), [])
    state = sim.initial_state(np.array([[0.0, 0.0, 1.0]]), [])
    state.v[0, 0] = np.nan
    with pytest.raises(SimulationError, match="vertex 0"):
        sim.step(state)


def test_pd_control_examples():
    z = np.zeros((1, 3))
    np.testing.assert_array_equal(pd_control(z, z, z), 0.0)
    np.testing.assert_array_equal(pd_control(z, z, [[10.0, 0, 0]]), [[5.0, 0, 0]])
    np.testing.assert_array_equal(pd_control(z, [[0, 1.0, 0]], z), [[0, -5.0, 0]])
    np.testing.assert_allclose(pd_control(z, z, [[0.01, -0.02, 0]]), [[0.5, -1.0, 0]])
    with pytest.raises(ValueError, match="finite"):
        pd_control(z, z, [[np.nan, 0, 0]])


def test_control_force_clamped_in_step():
    sim = ClothSim(single_particle_mesh(), [], PhysicsParams(gravity=0.0))
    a = sim.step(sim.initial_state(np.array([[0.0, 0.0, 5.0]]), [0]), [[100.0, 0, 0]])
    b = sim.step(sim.initial_state(np.array([[0.0, 0.0, 5.0]]), [0]), [[5.0, 0, 0]])
    assert a.x.tobytes() == b.x.tobytes()
    np.testing.assert_array_equal(a.x[0], a.gripper_x[0])


# ---------------------------------------------------------------- policies and episodes


@pytest.fixture(scope="module")
def scene():
    return make_scene(SIMPLE_CLOTH, AnchorSpec())


def test_expert_correction_vanishes_at_goal(scene):
    pol = PseudoExpertPolicy(scene)
    state = scene.initial_state()
    pol.reset(state)
    loop = scene.loops[0]
    state.x = state.x + (scene.anchor.goal_location - state.x[loop].mean(axis=0))
    np.testing.assert_allclose(pol.targets(state), pol.base, atol=1e-12)


def test_expert_pure_translation():
    sc = make_scene(SIMPLE_CLOTH, AnchorSpec(pose=AnchorPose((0.0, -5.0, 0.0), 0.0)))
    base = make_scene(SIMPLE_CLOTH, AnchorSpec())
    a, b = PseudoExpertPolicy(sc, correction_gain=0.0), PseudoExpertPolicy(base, correction_gain=0.0)
    ta, tb = a.targets(sc.initial_state()), b.targets(base.initial_state())
    np.testing.assert_allclose(ta - tb, [[0.0, -5.0, 0.0]] * 2, atol=1e-12)


def test_expert_selects_one_hole():
    spec = generate_cloth(np.random.default_rng(6), 2)
    sc = make_scene(spec, AnchorSpec())
    for hole in (0, 1):
        pol = PseudoExpertPolicy(sc, hole)
        assert pol.loop is sc.loops[hole]
    with pytest.raises(IndexError):
        PseudoExpertPolicy(sc, 2)


def test_evaluation_policy(scene):
    state = scene.initial_state()
    pol = EvaluationPolicy(scene.initial_positions, scene.gripper_indices)
    np.testing.assert_array_equal(pol.targets(state), state.gripper_x)
    with pytest.raises(IndexError):
        EvaluationPolicy(scene.initial_positions[:10], scene.gripper_indices)


def test_episode_step_counts(scene):
    count = []
    res = run_episode(scene, PseudoExpertPolicy(scene), manipulation_steps=3, record=lambda s: count.append(s.phase))
    assert count.count("manipulation") == 3 * SIM_STEPS_PER_ENV_STEP == 24
    assert count.count("release") == RELEASE_STEPS == 500
    assert res.pre_release.shape == res.post_release.shape == scene.initial_positions.shape


def test_zero_manipulation_falls(scene):
    res = run_episode(scene, PseudoExpertPolicy(scene), manipulation_steps=0)
    assert not res.success
    assert res.post_release[:, 2].mean() < res.initial[:, 2].mean() - 1.0


def test_episode_deterministic_and_hanger_rigid(scene):
    caps = list(scene.sim.capsules)
    a = run_episode(scene, PseudoExpertPolicy(scene), manipulation_steps=20, release_steps=40)
    b = run_episode(scene, PseudoExpertPolicy(scene), manipulation_steps=20, release_steps=40)
    assert a.pre_release.tobytes() == b.pre_release.tobytes()
    assert a.post_release.tobytes() == b.post_release.tobytes()
    assert scene.sim.capsules == caps == AnchorSpec().capsules()


def test_expert_and_replayed_goal_succeed(scene):
    assert MANIPULATION_STEPS > 0
    expert = run_episode(scene, PseudoExpertPolicy(scene))
    assert expert.success and any(expert.centroid_ok) and any(expert.polygon_ok)
    replay = run_episode(scene, EvaluationPolicy(expert.pre_release, scene.gripper_indices))
    assert replay.success


# ---------------------------------------------------------------- success check


def square_case(offset=(0.0, 0.0, 0.0)):
    anchor = AnchorSpec()
    g = anchor.goal_location
    sq = g + np.array([[-1, -1, 0], [1, -1, 0], [1, 1, 0], [-1, 1, 0]], dtype=float) * 0.5
    x = sq + np.asarray(offset)
    return anchor, x, [np.arange(4)]


def test_unit_square_around_goal_succeeds():
    anchor, x, loops = square_case()
    ok, cent, poly = success_check(x, x, anchor, loops)
    assert ok and cent == [True] and poly == [True]


def test_far_centroid_fails():
    anchor, x, loops = square_case((2.0, 0.0, 0.0))
    ok, cent, _ = success_check(x, square_case()[1], anchor, loops)
    assert not ok and cent == [False]


def test_degenerate_loop_is_false():
    anchor, x, _ = square_case()
    ok, _, poly = success_check(x, x, anchor, [np.arange(2)])
    assert not ok and poly == [False]


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 3.0), st.floats(0.0, 1.0), st.floats(0, 2 * math.pi))
def test_centroid_check_monotone(r, shrink, phi):
    anchor, x, loops = square_case()
    d = np.array([math.cos(phi), math.sin(phi), 0.0])
    far = success_check(x + r * d, x, anchor, loops)[1][0]
    near = success_check(x + r * shrink * d, x, anchor, loops)[1][0]
    assert near or not far


def test_point_in_polygon_matches_winding_number():
    rng = np.random.default_rng(7)
    for _ in range(10_000):
        n = int(rng.integers(3, 9))
        ang = np.sort(rng.uniform(0, 2 * np.pi, n))
        rad = rng.uniform(0.2, 2.0, n)
        poly = np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)
        pt = rng.uniform(-2, 2, 2)
        assert point_in_polygon(pt, poly) == (winding_number(pt, poly) != 0)


def test_boundary_counts_as_inside():
    sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    assert point_in_polygon((0.5, 0.0), sq) and point_in_polygon((1.0, 1.0), sq)
    assert not point_in_polygon((1.5, 0.5), sq)
