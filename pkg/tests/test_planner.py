import json
import math

import numpy as np
import pytest

from hybridgen.constraints import ConstraintAtom, ConstraintPlan, Keypoint
from hybridgen.demos import LabeledPose
from hybridgen.errors import ValidationError
from hybridgen.geometry import Pose
from hybridgen.planner import (
    Joint,
    KinematicChain,
    PlanOptions,
    PlanProblem,
    PlanWeights,
    SdfEnvironment,
    _Objective,
    collision_cost,
    desk_chain,
    ik_cost,
    ik_solve,
    problem_from_dict,
    replan,
    sdf,
    select_subsegment,
    smoothness_cost,
)
from hybridgen.scene import WorkspaceBounds
from hybridgen.sdf import Box, Capsule, Sphere

from .conftest import FIXTURES

BIG_WS = WorkspaceBounds((-100, -100, -100), (100, 100, 100))


def env_of(*primitives, workspace=BIG_WS) -> SdfEnvironment:
    return SdfEnvironment(tuple(primitives), workspace)


def lp(x, y, z, label="R", gripper=0.0) -> LabeledPose:
    return LabeledPose(Pose.from_translation((x, y, z)), gripper, label)


# --- signed distances ---------------------------------------------------------


def test_sdf_sphere_trivials():
    env = env_of(Sphere((0.1, 0.2, 0.3), 0.05))
    assert sdf(env, (0.1, 0.2, 0.3)) == pytest.approx(-0.05)
    assert sdf(env, (0.2, 0.2, 0.3)) == pytest.approx(0.05)


def test_sdf_multiple_primitives_min():
    env = env_of(Sphere((0, 0, 0), 0.05), Sphere((1, 0, 0), 0.5))
    assert sdf(env, (0.6, 0, 0)) == pytest.approx(-0.1)


def test_sdf_workspace_walls():
    env = env_of(workspace=WorkspaceBounds((0, 0, 0), (1, 1, 1)))
    assert sdf(env, (0.5, 0.5, 0.5)) == pytest.approx(0.5)
    assert sdf(env, (0.1, 0.5, 0.5)) == pytest.approx(0.1)
    assert sdf(env, (-0.2, 0.5, 0.5)) == pytest.approx(-0.2)


def sample_surface(shape, rng, n=120000) -> np.ndarray:
    """Dense analytic surface sampling, independent of the sdf formulas."""
    from .conftest import quat_to_matrix

    if isinstance(shape, Sphere):
        u = rng.normal(size=(n, 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        return np.asarray(shape.center) + shape.radius * u
    if isinstance(shape, Box):
        hx, hy, hz = shape.half_extents
        areas = np.array([hy * hz, hx * hz, hx * hy], dtype=float)
        counts = (areas / areas.sum() * (n / 2)).astype(int) + 1
        pts = []
        for axis, cnt in enumerate(counts):
            for sign in (-1.0, 1.0):
                local = rng.uniform(-1, 1, size=(cnt, 3)) * np.array([hx, hy, hz])
                local[:, axis] = sign * (hx, hy, hz)[axis]
                pts.append(local)
        local = np.vstack(pts)
        rot = quat_to_matrix(shape.orientation.rotation)
        return local @ rot.T + np.asarray(shape.center)
    if isinstance(shape, Capsule):
        a, b = np.asarray(shape.a), np.asarray(shape.b)
        axis = b - a
        axis_n = axis / np.linalg.norm(axis)
        e1 = np.cross(axis_n, [0.0, 0.0, 1.0])
        if np.linalg.norm(e1) < 1e-9:
            e1 = np.cross(axis_n, [0.0, 1.0, 0.0])
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(axis_n, e1)
        t = rng.uniform(0, 1, n // 2)
        ang = rng.uniform(0, 2 * np.pi, n // 2)
        cyl = a + np.outer(t, axis) + shape.radius * (
            np.outer(np.cos(ang), e1) + np.outer(np.sin(ang), e2)
        )
        u = rng.normal(size=(n // 2, 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        toward_b = u @ axis_n > 0
        caps = np.where(toward_b[:, None], b + shape.radius * u, a + shape.radius * u)
        return np.vstack([cyl, caps])
    raise AssertionError(f"unknown shape {shape}")


@pytest.mark.parametrize(
    "shape",
    [
        Sphere((0.1, -0.2, 0.05), 0.15),
        Box((0.0, 0.1, -0.1), (0.15, 0.1, 0.12), Pose.from_axis_angle((0, 0, 1), 0.4)),
        Capsule((-0.1, 0, 0), (0.1, 0.05, 0.08), 0.1),
    ],
)
def test_sdf_magnitude_matches_surface_oracle(shape):
    rng = np.random.default_rng(0)
    surface = sample_surface(shape, rng)
    probes = rng.uniform(-0.4, 0.4, size=(100, 3))
    for p in probes:
        d = shape.sdf(tuple(p))
        nearest = float(np.min(np.linalg.norm(surface - p, axis=1)))
        assert abs(abs(d) - nearest) < 2e-3


def test_sdf_sign_matches_membership_oracle():
    box = Box((0, 0, 0), (0.3, 0.2, 0.1), Pose.from_axis_angle((0, 1, 0), 0.3))
    rng = np.random.default_rng(1)

    def inside(p) -> bool:
        from hybridgen.geometry import inverse

        local = inverse(box.orientation).apply(tuple(np.subtract(p, box.center)))
        return all(abs(c) <= h for c, h in zip(local, box.half_extents))

    for p in rng.uniform(-0.6, 0.6, size=(300, 3)):
        d = box.sdf(tuple(p))
        if abs(d) > 1e-9:
            assert (d < 0) == inside(p)


# --- cost terms -----------------------------------------------------------------


def test_collision_cost_trivials():
    env = env_of(Sphere((0, 0, 0), 0.1))
    clear = [lp(0.5, 0, 0), lp(0.6, 0, 0)]
    assert collision_cost(clear, env, 0.02) == 0.0
    on_surface = [lp(0.1, 0, 0)]
    assert collision_cost(on_surface, env, 0.02) == pytest.approx(0.0004)


def test_collision_cost_matches_per_pose_oracle():
    rng = np.random.default_rng(2)
    env = env_of(Sphere((0, 0, 0), 0.2), Box((0.4, 0, 0), (0.1, 0.1, 0.1)))
    traj = [lp(*rng.uniform(-0.5, 0.5, 3)) for _ in range(40)]
    margin = 0.05
    expected = sum(max(margin - sdf(env, p.pose.translation), 0.0) ** 2 for p in traj)
    assert collision_cost(traj, env, margin) == pytest.approx(expected, abs=1e-15)


def test_smoothness_cost_trivials():
    p = lp(0.1, 0.2, 0.3)
    assert smoothness_cost([p] * 5) == 0.0
    two = [lp(0, 0, 0), lp(0.1, 0, 0)]
    assert smoothness_cost(two) == pytest.approx(0.01)
    assert smoothness_cost([p]) == 0.0


def test_smoothness_straight_line_beats_perturbations():
    rng = np.random.default_rng(3)
    n = 10
    base = [lp(i / (n - 1), 0, 0) for i in range(n)]
    base_cost = smoothness_cost(base)
    for _ in range(100):
        noisy = list(base)
        for i in range(1, n - 1):
            t = np.add(base[i].pose.translation, rng.normal(scale=0.02, size=3))
            noisy[i] = lp(*t)
        assert smoothness_cost(noisy) > base_cost


# --- inverse kinematics -----------------------------------------------------------


def two_link(l1=0.5, l2=0.3) -> KinematicChain:
    limits = (-math.pi, math.pi)
    return KinematicChain(
        joints=(
            Joint((0, 0, 1), Pose.identity(), limits),
            Joint((0, 0, 1), Pose.from_translation((l1, 0, 0)), limits),
        ),
        tool=Pose.from_translation((l2, 0, 0)),
    )


def two_link_fk(q1, q2, l1=0.5, l2=0.3):
    return (
        l1 * math.cos(q1) + l2 * math.cos(q1 + q2),
        l1 * math.sin(q1) + l2 * math.sin(q1 + q2),
        0.0,
    )


def two_link_ik_oracle(x, y, l1=0.5, l2=0.3):
    """Analytic 2-link solutions (elbow up/down); empty if unreachable."""
    d2 = x * x + y * y
    c2 = (d2 - l1 * l1 - l2 * l2) / (2 * l1 * l2)
    if abs(c2) > 1.0:
        return []
    sols = []
    for sign in (1.0, -1.0):
        q2 = sign * math.acos(max(-1.0, min(1.0, c2)))
        q1 = math.atan2(y, x) - math.atan2(l2 * math.sin(q2), l1 + l2 * math.cos(q2))
        sols.append((q1, q2))
    return sols


def test_ik_seed_is_solution():
    chain = two_link()
    seed = np.array([0.4, -0.8])
    target = chain.forward(seed)
    res = ik_solve(chain, target, seed)
    assert res.residual < 1e-9
    assert np.allclose(res.config, seed, atol=1e-9)


def test_ik_matches_two_link_analytic_oracle():
    chain = two_link()
    rng = np.random.default_rng(4)
    for _ in range(100):
        q = rng.uniform(-2.5, 2.5, 2)
        target = chain.forward(q)
        res = ik_solve(chain, target, (0.3, 0.3))
        assert res.residual < 1e-6
        x, y, _ = target.translation
        sols = two_link_ik_oracle(x, y)
        assert sols
        def angdiff(a, b):
            return abs(math.remainder(a - b, 2 * math.pi))
        assert any(
            angdiff(res.config[0], q1) < 1e-5 and angdiff(res.config[1], q2) < 1e-5
            for q1, q2 in sols
        )


def test_ik_beyond_reach_residual_is_shortfall():
    chain = two_link()
    theta = 0.7
    d = 1.0  # total reach is 0.8
    target = Pose.from_axis_angle((0, 0, 1), theta, (d * math.cos(theta), d * math.sin(theta), 0))
    res = ik_solve(chain, target, (0.5, 0.5))
    assert res.residual == pytest.approx(d - 0.8, abs=1e-3)


def test_ik_cost_reachable_trajectory():
    chain = two_link()
    rng = np.random.default_rng(5)
    qs = np.cumsum(rng.uniform(-0.1, 0.1, size=(15, 2)), axis=0) + np.array([0.5, -0.7])
    traj = [LabeledPose(chain.forward(q), 0.0, "R") for q in qs]
    assert ik_cost(traj, chain, seed=(0.5, -0.7)) < 1e-8
    assert ik_cost([], chain) == 0.0


def test_ik_cost_unreachable_positive():
    chain = two_link()
    traj = [LabeledPose(Pose.from_translation((2.0, 0, 0)), 0.0, "R")]
    assert ik_cost(traj, chain) > 0.5


# --- replanning --------------------------------------------------------------------


def corridor_problem() -> PlanProblem:
    return problem_from_dict(json.loads((FIXTURES / "corridor_problem.json").read_text()))


def test_replan_zero_weights_returns_interpolation():
    traj = [lp(0, 0, 0, "D"), lp(0.9, 0.9, 0.9, "R"), lp(0.3, 0, 0, "D")]
    problem = PlanProblem(
        trajectory=tuple(traj),
        env=env_of(),
        weights=PlanWeights(0, 0, 0, 0),
        options=PlanOptions(max_iters=50, seed=0),
    )
    res = replan(problem)
    assert res.converged and res.iterations == 1
    mid = res.trajectory[1].pose.translation
    assert mid == pytest.approx((0.15, 0, 0), abs=1e-12)
    assert res.costs["total"] == 0.0


def test_replan_requires_free_pose():
    with pytest.raises(ValidationError):
        PlanProblem(trajectory=(lp(0, 0, 0, "D"),), env=env_of())


def test_replan_single_pose_subgoal_projection():
    # Closed-form oracle: the free pose must land within tolerance of the
    # keypoint-plus-offset target.
    target_kp = (0.2, 0.1, 0.3)
    offset = (0.0, 0.0, 0.05)
    tol = 0.01
    plan = ConstraintPlan(
        num_stages=1,
        atoms=(
            ConstraintAtom("point_offset", 0, "subgoal", i=0, j=1, offset=offset, tolerance=tol),
        ),
        grasp_keypoints=(-1,),
        release_keypoints=(-1,),
    )
    traj = [lp(0, 0, 0, "D"), lp(0, 0, 0.01, "R"), lp(0, 0, 0.02, "D")]
    problem = PlanProblem(
        trajectory=tuple(traj),
        env=env_of(),
        plan=plan,
        stage=0,
        keypoints=(Keypoint(0, (0, 0, 0)), Keypoint(1, target_kp)),
        weights=PlanWeights(100.0, 0.0, 0.0, 0.0),
        subgoal_index=1,
        options=PlanOptions(max_iters=300, tol=1e-12, seed=0),
    )
    res = replan(problem)
    goal = np.add(target_kp, offset)
    dist = np.linalg.norm(np.subtract(res.trajectory[1].pose.translation, goal))
    assert res.feasible
    assert dist <= tol + 1e-3


def test_corridor_fixture_feasible():
    problem = corridor_problem()
    res = replan(problem)
    assert res.feasible
    clearances = [sdf(problem.env, p.pose.translation) for p in res.trajectory]
    assert min(clearances) >= 0.0
    assert res.costs["J_p"] <= 1e-6
    hist = res.cost_history
    assert all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))


def test_corridor_oracle_confirms_feasible_arc_exists():
    # Grid search over arc heights: some lifted arc clears the obstacle with
    # margin, so the planner's feasible result is not vacuous.
    problem = corridor_problem()
    start = problem.trajectory[0].pose.translation
    end = problem.trajectory[-1].pose.translation
    n = len(problem.trajectory)
    found = False
    for h in np.linspace(0.0, 0.2, 41):
        ok = True
        for i in range(n):
            t = i / (n - 1)
            point = (
                start[0] + t * (end[0] - start[0]),
                start[1] + t * (end[1] - start[1]),
                start[2] + t * (end[2] - start[2]) + h * math.sin(math.pi * t),
            )
            if sdf(problem.env, point) < problem.options.margin:
                ok = False
                break
        if ok:
            found = True
            break
    assert found


def test_replan_frozen_poses_bit_identical():
    problem = corridor_problem()
    res = replan(problem)
    for k, p in enumerate(problem.trajectory):
        if p.label == "D":
            assert res.trajectory[k] is p


def test_replan_gradient_matches_independent_fd():
    # Independent central differences of the full objective vs the
    # optimizer's internal forward-difference gradient: signs must agree on
    # at least 95% of coordinates with non-negligible magnitude.
    rng = np.random.default_rng(6)
    env = env_of(Sphere((0.05, 0.0, 0.1), 0.07))
    plan = ConstraintPlan(
        num_stages=1,
        atoms=(
            ConstraintAtom("within_radius", 0, "path", i=0, point=(0, 0, 0.1), radius=0.25),
            ConstraintAtom("point_offset", 0, "subgoal", i=0, j=1, offset=(0, 0, 0), tolerance=0.02),
        ),
        grasp_keypoints=(-1,),
        release_keypoints=(-1,),
    )
    traj = [lp(-0.2, 0, 0.1, "D")]
    for i in range(6):
        pos = np.array([-0.15 + 0.05 * i, 0, 0.1]) + rng.normal(scale=0.01, size=3)
        traj.append(lp(*pos, "R"))
    traj.append(lp(0.2, 0, 0.1, "D"))
    problem = PlanProblem(
        trajectory=tuple(traj),
        env=env,
        plan=plan,
        stage=0,
        keypoints=(Keypoint(0, (0, 0, 0)), Keypoint(1, (0.18, 0, 0.1))),
        weights=PlanWeights(100.0, 1.0, 0.1, 0.0),
        options=PlanOptions(margin=0.02, seed=0),
    )
    obj = _Objective(problem)
    current = list(problem.trajectory)
    internal = obj.gradient(current)
    step = 1e-6
    agree = total_checked = 0
    from dataclasses import replace as dc_replace
    from hybridgen.planner import _increment

    for fi, k in enumerate(obj.free):
        for d in range(6):
            fwd = list(current)
            fwd[k] = dc_replace(fwd[k], pose=_increment(fwd[k].pose, d, step))
            bwd = list(current)
            bwd[k] = dc_replace(bwd[k], pose=_increment(bwd[k].pose, d, -step))
            central = (obj.total(fwd) - obj.total(bwd)) / (2 * step)
            idx = 6 * fi + d
            # Coordinates with forward-difference curvature noise only
            # carry no directional information.
            if abs(central) < 1e-6 and abs(internal[idx]) < 1e-6:
                continue
            total_checked += 1
            if np.sign(central) == np.sign(internal[idx]):
                agree += 1
    assert total_checked > 0
    assert agree / total_checked >= 0.95


def test_replan_cost_breakdown_consistency():
    res = replan(corridor_problem())
    w = PlanWeights()
    recon = (
        w.lambda_p * res.costs["J_p"]
        + w.lambda_c * res.costs["J_c"]
        + w.lambda_l * res.costs["J_l"]
        + w.lambda_ik * res.costs["J_ik"]
    )
    assert res.costs["total"] == pytest.approx(recon, abs=1e-9)


# --- subsegment selection ------------------------------------------------------------


def test_select_subsegment_fully_clear():
    env = env_of(Sphere((5, 5, 5), 0.1))
    traj = [lp(i * 0.1, 0, 0) for i in range(6)]
    out, ok = select_subsegment(traj, env, traj[0].pose, traj[-1].pose)
    assert ok and out == traj


def test_select_subsegment_trims_colliding_prefix():
    env = env_of(Sphere((0, 0, 0), 0.15))
    traj = [lp(0, 0, 0)] + [lp(0.2 + 0.1 * i, 0, 0) for i in range(5)]
    out, ok = select_subsegment(traj, env, traj[1].pose, traj[-1].pose)
    assert ok
    assert out == traj[1:]


def test_select_subsegment_none_returns_flagged():
    env = env_of(Sphere((0, 0, 0), 10.0))
    traj = [lp(i * 0.1, 0, 0) for i in range(4)]
    out, ok = select_subsegment(traj, env, traj[0].pose, traj[-1].pose)
    assert not ok and out == traj


def test_select_subsegment_matches_bruteforce():
    rng = np.random.default_rng(7)
    delta = 0.05
    for _ in range(50):
        env = env_of(Sphere(tuple(rng.uniform(-0.3, 0.3, 3)), float(rng.uniform(0.05, 0.2))))
        traj = [lp(*rng.uniform(-0.4, 0.4, 3)) for _ in range(10)]
        b0 = traj[int(rng.integers(10))].pose
        b1 = traj[int(rng.integers(10))].pose
        got, got_ok = select_subsegment(traj, env, b0, b1, delta)
        # O(N^2) oracle over all (s, e) spans.
        best = None
        for s in range(len(traj)):
            for e in range(s, len(traj)):
                span = traj[s : e + 1]
                if any(sdf(env, p.pose.translation) < 0 for p in span):
                    continue
                if math.dist(span[0].pose.translation, b0.translation) > delta:
                    continue
                if math.dist(span[-1].pose.translation, b1.translation) > delta:
                    continue
                if best is None or (e - s) > (best[1] - best[0]):
                    best = (s, e)
        if best is None:
            assert not got_ok and got == traj
        else:
            assert got_ok
            assert len(got) == best[1] - best[0] + 1


def test_desk_chain_covers_task_envelope():
    chain = desk_chain()
    rng = np.random.default_rng(8)
    for _ in range(60):
        pos = (rng.uniform(-0.32, 0.32), rng.uniform(-0.16, 0.16), rng.uniform(0.02, 0.26))
        yaw = rng.uniform(-math.pi, math.pi)
        res = ik_solve(chain, Pose.from_axis_angle((0, 0, 1), yaw, pos), chain.midpoint())
        assert res.residual < 1e-6
