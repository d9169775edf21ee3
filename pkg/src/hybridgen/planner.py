"""Constrained waypoint-trajectory optimization.

Replanning minimizes

    lambda_p * J_p + lambda_c * J_c + lambda_l * J_l + lambda_ik * J_ik

over the replanning (R) poses of a trajectory, holding data-dependent (D)
poses fixed, subject to every hard constraint atom holding at every R pose.
J_p is the semantic constraint cost, J_c penalizes end-effector clearance
below a margin using signed distances, J_l is squared step length plus
weighted squared rotation steps, and J_ik accumulates squared inverse-
kinematics residuals to keep poses reachable.

The optimizer is finite-difference gradient descent with a backtracking
line search and seeded random restarts. Free poses are parameterized by
local increments (3 translation + 3 rotation-vector components) applied to
the current iterate, so quaternions never drift. Costs decompose per pose
(smoothness couples neighbors only), which the gradient exploits: one
parameter perturbation re-evaluates one pose and its two adjacent steps.

Hard constraints are checked, not softened: a result is feasible iff every
applicable atom cost is <= EPS_CONSTRAINT at every R pose. Infeasible
attempts restart from perturbed initializations; the best-found trajectory
is returned flagged if none succeeds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .constraints import (
    ConstraintPlan,
    Keypoint,
    KeypointTracker,
    ROLE_PATH,
    ROLE_SUBGOAL,
    eval_atom,
    plan_from_dict,
    plan_to_dict,
)
from .demos import LabeledPose
from .errors import ParseError, ValidationError
from .geometry import (
    Pose,
    Vec3,
    compose,
    geodesic_angle,
    interpolate,
    quat_conjugate,
    quat_multiply,
    rotate_vector,
)
from .scene import WorkspaceBounds
from .sdf import Primitive, primitive_from_dict

EPS_CONSTRAINT = 1e-3
SMOOTHNESS_ROTATION_WEIGHT = 0.1  # m^2 / rad^2
FD_STEP = 1e-6


# --- environment -----------------------------------------------------------


@dataclass(frozen=True)
class SdfEnvironment:
    primitives: tuple[Primitive, ...]
    workspace: WorkspaceBounds

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))

    def to_dict(self) -> dict:
        return {
            "primitives": [p.to_dict() for p in self.primitives],
            "workspace": self.workspace.to_dict(),
        }

    @staticmethod
    def from_dict(data: dict) -> "SdfEnvironment":
        return SdfEnvironment(
            primitives=tuple(primitive_from_dict(p) for p in data["primitives"]),
            workspace=WorkspaceBounds.from_dict(data["workspace"]),
        )


def _workspace_inner(env: SdfEnvironment, point) -> float:
    """Distance to the nearest workspace wall; negative outside the bounds."""
    lo, hi = env.workspace.lower, env.workspace.upper
    px, py, pz = point
    qx = max(lo[0] - px, px - hi[0])
    qy = max(lo[1] - py, py - hi[1])
    qz = max(lo[2] - pz, pz - hi[2])
    if qx > 0.0 or qy > 0.0 or qz > 0.0:
        ox, oy, oz = max(qx, 0.0), max(qy, 0.0), max(qz, 0.0)
        return -math.sqrt(ox * ox + oy * oy + oz * oz)
    return -max(qx, qy, qz)


def _primitive_sdf(env: SdfEnvironment, point) -> float:
    best = math.inf
    for prim in env.primitives:
        d = prim.sdf(point)
        if d < best:
            best = d
    return best


def sdf(env: SdfEnvironment, point) -> float:
    """Signed distance to the nearest obstacle, the workspace walls included.

    Obstacle primitives contribute their exact signed distance (negative
    inside); the workspace boundary contributes the distance to the nearest
    wall from inside (negative outside the bounds). The minimum of all of
    them is returned, so free space is wherever the value is positive.
    """
    return min(_workspace_inner(env, point), _primitive_sdf(env, point))


def collision_cost(traj, env: SdfEnvironment, margin: float) -> float:
    """Sum of squared clearance deficits below the margin."""
    if margin < 0:
        raise ValidationError("collision margin must be nonnegative")
    total = 0.0
    for p in traj:
        deficit = margin - sdf(env, p.pose.translation)
        if deficit > 0.0:
            total += deficit * deficit
    return total


def smoothness_cost(traj, rotation_weight: float = SMOOTHNESS_ROTATION_WEIGHT) -> float:
    """Squared translation steps plus weighted squared rotation steps."""
    total = 0.0
    for a, b in zip(traj, traj[1:]):
        ta, tb = a.pose.translation, b.pose.translation
        dt2 = (ta[0] - tb[0]) ** 2 + (ta[1] - tb[1]) ** 2 + (ta[2] - tb[2]) ** 2
        ang = geodesic_angle(a.pose.rotation, b.pose.rotation)
        total += dt2 + rotation_weight * ang * ang
    return total


# --- kinematic chain and inverse kinematics --------------------------------


@dataclass(frozen=True)
class Joint:
    axis: Vec3
    offset: Pose
    limits: tuple[float, float]
    type: str = "revolute"

    def __post_init__(self):
        ax = tuple(float(c) for c in self.axis)
        n = math.sqrt(sum(c * c for c in ax))
        if n < 1e-12:
            raise ValidationError("joint axis must be nonzero")
        object.__setattr__(self, "axis", tuple(c / n for c in ax))
        lo, hi = (float(l) for l in self.limits)
        if lo >= hi:
            raise ValidationError("joint limits must satisfy lo < hi")
        object.__setattr__(self, "limits", (lo, hi))
        if self.type != "revolute":
            raise ValidationError(f"unsupported joint type {self.type!r}")


@dataclass(frozen=True)
class KinematicChain:
    joints: tuple[Joint, ...]
    base: Pose = Pose.identity()
    tool: Pose = Pose.identity()

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(self.joints))
        if not self.joints:
            raise ValidationError("kinematic chain needs at least one joint")

    def clamp(self, config) -> np.ndarray:
        out = np.asarray(config, dtype=float).copy()
        for i, joint in enumerate(self.joints):
            out[i] = min(max(out[i], joint.limits[0]), joint.limits[1])
        return out

    def midpoint(self) -> np.ndarray:
        return np.array([(j.limits[0] + j.limits[1]) / 2.0 for j in self.joints])

    def forward(self, config) -> Pose:
        return self._frames(config)[-1]

    def _frames(self, config) -> list[Pose]:
        """Pose of each joint frame (after its rotation) plus the tool frame."""
        frames = []
        current = self.base
        for joint, angle in zip(self.joints, config):
            current = compose(current, joint.offset)
            current = compose(current, Pose.from_axis_angle(joint.axis, float(angle)))
            frames.append(current)
        frames.append(compose(current, self.tool))
        return frames

    def to_dict(self) -> dict:
        return {
            "base": self.base.as_list(),
            "tool": self.tool.as_list(),
            "joints": [
                {"axis": list(j.axis), "offset": j.offset.as_list(), "limits": list(j.limits)}
                for j in self.joints
            ],
        }

    @staticmethod
    def from_dict(data: dict) -> "KinematicChain":
        try:
            return KinematicChain(
                joints=tuple(
                    Joint(tuple(j["axis"]), Pose.from_list(j["offset"]), tuple(j["limits"]))
                    for j in data["joints"]
                ),
                base=Pose.from_list(data["base"]),
                tool=Pose.from_list(data["tool"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed kinematic chain: {exc}") from exc


def _pose_error(current_q, current_t, target: Pose) -> np.ndarray:
    """World-frame twist [dp; rotvec] taking the current frame to the target."""
    e = np.empty(6)
    tt = target.translation
    e[0], e[1], e[2] = tt[0] - current_t[0], tt[1] - current_t[1], tt[2] - current_t[2]
    qw, qx, qy, qz = quat_multiply(target.rotation, quat_conjugate(current_q))
    if qw < 0.0:
        qw, qx, qy, qz = -qw, -qx, -qy, -qz
    vnorm = math.sqrt(qx * qx + qy * qy + qz * qz)
    if vnorm < 1e-14:
        e[3] = e[4] = e[5] = 0.0
    else:
        scale = 2.0 * math.atan2(vnorm, qw) / vnorm
        e[3], e[4], e[5] = qx * scale, qy * scale, qz * scale
    return e


@dataclass(frozen=True)
class IkResult:
    config: np.ndarray
    residual: float  # position norm (m) + rotation norm (rad)
    position_error: float
    rotation_error: float


def ik_solve(
    chain: KinematicChain,
    target: Pose,
    seed,
    max_iters: int = 100,
    damping: float = 1e-3,
    restarts: int = 12,
    tol: float = 1e-10,
) -> IkResult:
    """Damped-least-squares IK. Non-convergence is reported, never raised."""
    best = _ik_attempt(chain, target, chain.clamp(seed), max_iters, damping, tol)
    if best.residual <= 1e-8 or restarts <= 0:
        return best
    lo = np.array([j.limits[0] for j in chain.joints])
    span = np.array([j.limits[1] - j.limits[0] for j in chain.joints])
    # Deterministic varied reseeds; per-joint fractions break the axis
    # alignments that trap the solver in singular configurations.
    reseed_rng = np.random.default_rng(0x5EED)
    for _ in range(restarts):
        fracs = reseed_rng.uniform(0.05, 0.95, size=len(chain.joints))
        attempt = _ik_attempt(chain, target, lo + fracs * span, max_iters, damping, tol)
        if attempt.residual < best.residual:
            best = attempt
        if best.residual <= 1e-8:
            break
    return best


def _fast_frames(chain: KinematicChain, config):
    """(quaternion, position) of each joint frame plus the tool, no Pose churn."""
    q = chain.base.rotation
    t = chain.base.translation
    frames = []
    for joint, angle in zip(chain.joints, config):
        off = joint.offset
        ox, oy, oz = rotate_vector(q, off.translation)
        t = (t[0] + ox, t[1] + oy, t[2] + oz)
        q = quat_multiply(q, off.rotation)
        half = 0.5 * float(angle)
        s = math.sin(half)
        ax = joint.axis
        q = quat_multiply(q, (math.cos(half), ax[0] * s, ax[1] * s, ax[2] * s))
        frames.append((q, t))
    tool = chain.tool
    ox, oy, oz = rotate_vector(q, tool.translation)
    frames.append((quat_multiply(q, tool.rotation), (t[0] + ox, t[1] + oy, t[2] + oz)))
    return frames


def _ik_attempt(chain, target, config, max_iters, damping, tol) -> IkResult:
    n = len(chain.joints)
    config = np.asarray(config, dtype=float).copy()
    lam2 = damping * damping
    best_cfg, best_res = config.copy(), math.inf
    for _ in range(max_iters):
        frames = _fast_frames(chain, config)
        ee_q, ee_p = frames[-1]
        err = _pose_error(ee_q, ee_p, target)
        pos = float(np.linalg.norm(err[:3]))
        rot = float(np.linalg.norm(err[3:]))
        res = pos + rot
        if res < best_res:
            best_res, best_cfg = res, config.copy()
        if res < tol:
            break
        jac = np.empty((6, n))
        for i in range(n):
            fq, origin = frames[i]
            ax = rotate_vector(fq, chain.joints[i].axis)
            r = (ee_p[0] - origin[0], ee_p[1] - origin[1], ee_p[2] - origin[2])
            jac[0, i] = ax[1] * r[2] - ax[2] * r[1]
            jac[1, i] = ax[2] * r[0] - ax[0] * r[2]
            jac[2, i] = ax[0] * r[1] - ax[1] * r[0]
            jac[3, i], jac[4, i], jac[5, i] = ax
        jjt = jac @ jac.T
        jjt[np.diag_indices_from(jjt)] += lam2
        try:
            y = np.linalg.solve(jjt, err)
        except np.linalg.LinAlgError:
            break
        step = jac.T @ y
        norm = float(np.linalg.norm(step))
        if norm > 0.5:
            step *= 0.5 / norm
        if norm < 1e-14:
            break
        config = chain.clamp(config + step)
    ee_q, ee_p = _fast_frames(chain, best_cfg)[-1]
    err = _pose_error(ee_q, ee_p, target)
    pos = float(np.linalg.norm(err[:3]))
    rot = float(np.linalg.norm(err[3:]))
    return IkResult(config=best_cfg, residual=pos + rot, position_error=pos, rotation_error=rot)


def ik_cost(traj, chain: KinematicChain, seed=None) -> float:
    """Sum of squared IK residuals along a trajectory, warm-started pose to pose."""
    total = 0.0
    config = chain.midpoint() if seed is None else chain.clamp(seed)
    for i, p in enumerate(traj):
        result = ik_solve(chain, p.pose, config, restarts=2 if i == 0 else 0)
        total += result.residual * result.residual
        config = result.config
    return total


# --- plan problem / result -------------------------------------------------


@dataclass(frozen=True)
class PlanWeights:
    lambda_p: float = 100.0
    lambda_c: float = 1.0
    lambda_l: float = 0.1
    lambda_ik: float = 20.0

    def __post_init__(self):
        if min(self.lambda_p, self.lambda_c, self.lambda_l, self.lambda_ik) < 0:
            raise ValidationError("cost weights must be nonnegative")


@dataclass(frozen=True)
class PlanOptions:
    max_iters: int = 500
    tol: float = 1e-6
    restarts: int = 3
    margin: float = 0.02
    seed: int = 0


@dataclass(frozen=True)
class PlanProblem:
    trajectory: tuple[LabeledPose, ...]
    env: SdfEnvironment
    plan: ConstraintPlan | None = None
    stage: int = 0
    chain: KinematicChain | None = None
    weights: PlanWeights = PlanWeights()
    keypoints: tuple[Keypoint, ...] = ()
    grasped_keypoint: int | None = None
    grasp_attach_pose: Pose | None = None
    subgoal_index: int | None = None
    options: PlanOptions = PlanOptions()

    def __post_init__(self):
        object.__setattr__(self, "trajectory", tuple(self.trajectory))
        object.__setattr__(self, "keypoints", tuple(self.keypoints))
        if not any(p.label == "R" for p in self.trajectory):
            raise ValidationError("plan problem has no replanning poses")

    def tracker(self) -> KeypointTracker:
        return KeypointTracker(
            base_keypoints=[k.position for k in self.keypoints],
            grasped_keypoint=self.grasped_keypoint,
            grasp_pose_at_attach=self.grasp_attach_pose,
        )


@dataclass(frozen=True)
class PlanResult:
    trajectory: tuple[LabeledPose, ...]
    costs: dict
    iterations: int
    converged: bool
    feasible: bool
    cost_history: tuple[float, ...] = ()

    def __post_init__(self):
        total = self.costs["total"]
        recomputed = (
            self.costs["weighted_p"]
            + self.costs["weighted_c"]
            + self.costs["weighted_l"]
            + self.costs["weighted_ik"]
        )
        if abs(total - recomputed) > 1e-9:
            raise ValidationError("cost breakdown does not sum to total")


# --- optimizer internals ----------------------------------------------------


class _Objective:
    """Total cost over a trajectory with per-pose delta evaluation."""

    def __init__(self, problem: PlanProblem):
        self.problem = problem
        self.free = [i for i, p in enumerate(problem.trajectory) if p.label == "R"]
        self.margin = problem.options.margin
        self.weights = problem.weights
        self.tracker = problem.tracker() if problem.keypoints else None
        n = len(problem.trajectory)
        self.subgoal_index = problem.subgoal_index if problem.subgoal_index is not None else n - 1
        plan = problem.plan
        if plan is not None:
            self.path_atoms = plan.stage_atoms(problem.stage, ROLE_PATH)
            self.subgoal_atoms = plan.stage_atoms(problem.stage, ROLE_SUBGOAL)
        else:
            self.path_atoms = []
            self.subgoal_atoms = []
        self.ik_configs: dict[int, np.ndarray] = {}
        self.ik_residuals: dict[int, float] = {}

    # -- component terms, all per single pose --

    def _atom_hinge(self, atoms, pose: Pose, gripper: float) -> float:
        if not atoms or self.tracker is None:
            return 0.0
        pts = self.tracker.positions(pose)
        total = 0.0
        for atom in atoms:
            c = eval_atom(atom, pose, pts, gripper)
            if c > 0.0:
                total += c * c
        return total

    def semantic_at(self, k: int, lp: LabeledPose) -> float:
        total = 0.0
        if lp.label == "R":
            total += self._atom_hinge(self.path_atoms, lp.pose, lp.gripper)
        if k == self.subgoal_index:
            total += self._atom_hinge(self.subgoal_atoms, lp.pose, lp.gripper)
        return total

    # Staying inside the workspace needs only a token clearance; the
    # obstacle margin may be inflated for a carried object and must not
    # turn the table surface into a wall.
    WS_CLEARANCE = 0.005

    def _clearance_cost(self, point) -> float:
        env = self.problem.env
        cost = 0.0
        deficit = self.margin - _primitive_sdf(env, point)
        if deficit > 0.0:
            cost += deficit * deficit
        ws_deficit = self.WS_CLEARANCE - _workspace_inner(env, point)
        if ws_deficit > 0.0:
            cost += ws_deficit * ws_deficit
        return cost

    def collision_at(self, lp: LabeledPose) -> float:
        if lp.label != "R":
            return 0.0
        return self._clearance_cost(lp.pose.translation)

    # Interior fractions checked along every step. A fixed pattern keeps the
    # cost continuous in the endpoints (an adaptive count would jump under
    # finite-difference probing); at seven samples the resolution stays
    # finer than the thinnest scene obstacle for steps up to ~15 cm.
    _SWEEP_FRACTIONS = tuple((i + 1) / 8.0 for i in range(7))

    def sweep_collision(self, a: LabeledPose, b: LabeledPose) -> float:
        """Clearance deficits sampled along the straight step between poses.

        Pose-wise checking alone lets a trajectory tunnel through thin
        obstacles between two clear waypoints; interior samples make the
        cost of such a jump grow with the swept penetration instead of
        vanishing between waypoints.
        """
        ta, tb = a.pose.translation, b.pose.translation
        dx, dy, dz = tb[0] - ta[0], tb[1] - ta[1], tb[2] - ta[2]
        env = self.problem.env
        # Signed distances are 1-Lipschitz: if both endpoints clear their
        # margins by more than half the step, every interior point does too.
        half = 0.5 * math.sqrt(dx * dx + dy * dy + dz * dz)
        if (
            min(_primitive_sdf(env, ta), _primitive_sdf(env, tb)) - half >= self.margin
            and min(_workspace_inner(env, ta), _workspace_inner(env, tb)) - half
            >= self.WS_CLEARANCE
        ):
            return 0.0
        total = 0.0
        for t in self._SWEEP_FRACTIONS:
            point = (ta[0] + t * dx, ta[1] + t * dy, ta[2] + t * dz)
            total += self._clearance_cost(point)
        return total

    def ik_at(self, k: int, lp: LabeledPose, update_cache: bool = False) -> float:
        chain = self.problem.chain
        if chain is None or lp.label != "R":
            return 0.0
        seed = self.ik_configs.get(k)
        if seed is None:
            result = ik_solve(chain, lp.pose, chain.midpoint())
        else:
            result = ik_solve(chain, lp.pose, seed, max_iters=20, restarts=0)
            if result.residual > 1e-5:
                # Warm start stalled; a poor residual here poisons the
                # gradient with a spurious large term, so spend full effort.
                retry = ik_solve(chain, lp.pose, chain.midpoint())
                if retry.residual < result.residual:
                    result = retry
        if update_cache:
            self.ik_configs[k] = result.config
            self.ik_residuals[k] = result.residual
        return result.residual * result.residual

    def _pair(self, a: LabeledPose, b: LabeledPose) -> float:
        ta, tb = a.pose.translation, b.pose.translation
        dt2 = (ta[0] - tb[0]) ** 2 + (ta[1] - tb[1]) ** 2 + (ta[2] - tb[2]) ** 2
        ang = geodesic_angle(a.pose.rotation, b.pose.rotation)
        return dt2 + SMOOTHNESS_ROTATION_WEIGHT * ang * ang

    def components(self, traj, update_cache: bool = False) -> dict:
        j_p = sum(self.semantic_at(k, traj[k]) for k in range(len(traj)))
        j_c = sum(self.collision_at(p) for p in traj) + sum(
            self.sweep_collision(a, b) for a, b in zip(traj, traj[1:])
        )
        j_l = sum(self._pair(a, b) for a, b in zip(traj, traj[1:]))
        j_ik = sum(self.ik_at(k, traj[k], update_cache) for k in range(len(traj)))
        w = self.weights
        return {
            "J_p": j_p,
            "J_c": j_c,
            "J_l": j_l,
            "J_ik": j_ik,
            "weighted_p": w.lambda_p * j_p,
            "weighted_c": w.lambda_c * j_c,
            "weighted_l": w.lambda_l * j_l,
            "weighted_ik": w.lambda_ik * j_ik,
            "total": w.lambda_p * j_p + w.lambda_c * j_c + w.lambda_l * j_l + w.lambda_ik * j_ik,
        }

    def total(self, traj, update_cache: bool = False) -> float:
        return self.components(traj, update_cache)["total"]

    def total_frozen_ik(self, traj) -> float:
        """Total cost with reachable poses' IK residuals frozen at cached values.

        Cheap enough for line-search probing: poses whose cached residual is
        below 1e-5 skip the solve (their contribution is O(residual * step));
        every acceptance re-verifies with the exact total.
        """
        w = self.weights
        total = (
            w.lambda_p * sum(self.semantic_at(k, traj[k]) for k in range(len(traj)))
            + w.lambda_c * sum(self.collision_at(p) for p in traj)
            + w.lambda_c * sum(self.sweep_collision(a, b) for a, b in zip(traj, traj[1:]))
            + w.lambda_l * sum(self._pair(a, b) for a, b in zip(traj, traj[1:]))
        )
        if self.problem.chain is not None and w.lambda_ik > 0.0:
            for k in self.free:
                cached = self.ik_residuals.get(k, math.inf)
                if cached < 1e-5:
                    total += w.lambda_ik * cached * cached
                else:
                    total += w.lambda_ik * self.ik_at(k, traj[k])
        return total

    def local_cost(self, traj, k: int, lp: LabeledPose, with_ik: bool = True) -> float:
        """Terms of the total that depend on pose k, evaluated with lp at k."""
        w = self.weights
        cost = w.lambda_p * self.semantic_at(k, lp) + w.lambda_c * self.collision_at(lp)
        if with_ik and w.lambda_ik > 0.0:
            cost += w.lambda_ik * self.ik_at(k, lp)
        if k > 0:
            cost += w.lambda_l * self._pair(traj[k - 1], lp)
            cost += w.lambda_c * self.sweep_collision(traj[k - 1], lp)
        if k < len(traj) - 1:
            cost += w.lambda_l * self._pair(lp, traj[k + 1])
            cost += w.lambda_c * self.sweep_collision(lp, traj[k + 1])
        return cost

    def gradient(self, traj) -> np.ndarray:
        """Forward-difference gradient over free-pose local increments.

        The inverse-kinematics term is treated as locally constant at poses
        the chain already reaches (cached residual below 1e-5): its squared
        residual varies by O(residual * step) there, far below every other
        term, and skipping the solve keeps probes cheap.
        """
        g = np.zeros(6 * len(self.free))
        for fi, k in enumerate(self.free):
            base_lp = traj[k]
            with_ik = self.ik_residuals.get(k, math.inf) > 1e-5
            base = self.local_cost(traj, k, base_lp, with_ik)
            for d in range(6):
                perturbed = replace(base_lp, pose=_increment(base_lp.pose, d, FD_STEP))
                g[6 * fi + d] = (self.local_cost(traj, k, perturbed, with_ik) - base) / FD_STEP
        return g

    def apply_step(self, traj, x: np.ndarray) -> list[LabeledPose]:
        out = list(traj)
        for fi, k in enumerate(self.free):
            dt = x[6 * fi : 6 * fi + 3]
            dr = x[6 * fi + 3 : 6 * fi + 6]
            out[k] = replace(out[k], pose=_apply_increment(out[k].pose, dt, dr))
        return out


def _apply_increment(pose: Pose, dt, dr) -> Pose:
    angle = math.sqrt(float(dr[0]) ** 2 + float(dr[1]) ** 2 + float(dr[2]) ** 2)
    t = pose.translation
    moved = (t[0] + float(dt[0]), t[1] + float(dt[1]), t[2] + float(dt[2]))
    if angle < 1e-12:
        return Pose(pose.rotation, moved)
    rot = Pose.from_axis_angle(dr, angle)
    return Pose(quat_multiply(rot.rotation, pose.rotation), moved)


def _increment(pose: Pose, dim: int, step: float) -> Pose:
    dt = [0.0, 0.0, 0.0]
    dr = [0.0, 0.0, 0.0]
    if dim < 3:
        dt[dim] = step
    else:
        dr[dim - 3] = step
    return _apply_increment(pose, dt, dr)


def _initialize(problem: PlanProblem) -> list[LabeledPose]:
    """Interpolate each free run between its bounding fixed poses."""
    traj = list(problem.trajectory)
    n = len(traj)
    i = 0
    while i < n:
        if traj[i].label != "R":
            i += 1
            continue
        j = i
        while j < n and traj[j].label == "R":
            j += 1
        left = traj[i - 1].pose if i > 0 else None
        right = traj[j].pose if j < n else None
        if left is None and right is None:
            i = j
            continue
        if left is None:
            left = right
        if right is None:
            right = left
        m = j - i
        for k in range(m):
            t = (k + 1) / (m + 1)
            traj[i + k] = replace(traj[i + k], pose=interpolate(left, right, t))
        i = j
    return traj


def hard_violations(problem: PlanProblem, traj) -> list[str]:
    """Hard-constraint breaches (> EPS_CONSTRAINT) at replanning poses."""
    if problem.plan is None:
        return []
    obj = _Objective(problem)
    out = []
    for k, lp in enumerate(traj):
        if lp.label != "R":
            continue
        pts = obj.tracker.positions(lp.pose) if obj.tracker else []
        for atom in obj.path_atoms:
            c = eval_atom(atom, lp.pose, pts, lp.gripper)
            if c > EPS_CONSTRAINT:
                out.append(f"pose {k}: path {atom.kind} cost {c:.3g}")
        if k == obj.subgoal_index:
            for atom in obj.subgoal_atoms:
                c = eval_atom(atom, lp.pose, pts, lp.gripper)
                if c > EPS_CONSTRAINT:
                    out.append(f"pose {k}: subgoal {atom.kind} cost {c:.3g}")
    return out


def replan(problem: PlanProblem) -> PlanResult:
    """Optimize the replanning poses of a trajectory; see module docstring."""
    rng = np.random.default_rng(problem.options.seed)
    best: PlanResult | None = None
    attempts = max(1, problem.options.restarts)
    for attempt in range(attempts):
        traj = _initialize(problem)
        if attempt > 0:
            obj0 = _Objective(problem)
            noise = rng.normal(scale=0.02, size=6 * len(obj0.free))
            noise[3::6] *= 2.5  # rotation components in radians
            noise[4::6] *= 2.5
            noise[5::6] *= 2.5
            traj = obj0.apply_step(traj, noise)
        result = _optimize(problem, traj)
        if result.feasible:
            return result
        if best is None or result.costs["total"] < best.costs["total"]:
            best = result
    assert best is not None
    return best


def _optimize(problem: PlanProblem, traj) -> PlanResult:
    obj = _Objective(problem)
    opts = problem.options
    total = obj.total(traj, update_cache=True)
    history = [total]
    iterations = 0
    converged = False
    step_scale = 1e-2
    for _ in range(opts.max_iters):
        iterations += 1
        g = obj.gradient(traj)
        gnorm2 = float(g @ g)
        if gnorm2 < 1e-24:
            converged = True
            break
        # Trust-region cap: no pose may move more than 4 cm / 0.15 rad in a
        # single accepted step, or penalty gradients fling poses across
        # obstacle basins they cannot descend back out of.
        step_cap = math.inf
        for fi in range(len(obj.free)):
            tn = float(np.linalg.norm(g[6 * fi : 6 * fi + 3]))
            rn = float(np.linalg.norm(g[6 * fi + 3 : 6 * fi + 6]))
            if tn > 0.0:
                step_cap = min(step_cap, 0.04 / tn)
            if rn > 0.0:
                step_cap = min(step_cap, 0.15 / rn)
        alpha = min(step_scale, step_cap)
        accepted = False
        for _ in range(40):
            candidate = obj.apply_step(traj, -alpha * g)
            # Probe with frozen IK, then confirm with the exact total so the
            # accepted-cost sequence stays strictly monotone.
            if obj.total_frozen_ik(candidate) < total - 1e-4 * alpha * gnorm2:
                cand_total = obj.total(candidate, update_cache=True)
                if cand_total < total - 1e-4 * alpha * gnorm2:
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            converged = True
            break
        rel_change = (total - cand_total) / max(abs(total), 1e-12)
        traj = candidate
        total = cand_total
        history.append(total)
        step_scale = min(alpha * 2.0, 1.0)
        if rel_change < opts.tol:
            converged = True
            break
    costs = obj.components(traj)
    feasible = not hard_violations(problem, traj)
    # Fixed poses are carried over untouched from the input trajectory.
    final = [
        problem.trajectory[k] if problem.trajectory[k].label != "R" else traj[k]
        for k in range(len(traj))
    ]
    return PlanResult(
        trajectory=tuple(final),
        costs=costs,
        iterations=iterations,
        converged=converged,
        feasible=feasible,
        cost_history=tuple(history),
    )


def select_subsegment(
    trajectory,
    env: SdfEnvironment,
    boundary_start: Pose,
    boundary_end: Pose,
    delta: float = 0.05,
) -> tuple[list[LabeledPose], bool]:
    """Longest clear contiguous run whose ends sit near the required boundaries.

    Clear means nonnegative signed distance at every pose. Returns the full
    trajectory flagged False if no run qualifies.
    """
    traj = list(trajectory)
    if not traj:
        raise ValidationError("cannot select from an empty trajectory")

    def near(pose: Pose, ref: Pose) -> bool:
        a, b = pose.translation, ref.translation
        return math.dist(a, b) <= delta

    clear = [sdf(env, p.pose.translation) >= 0.0 for p in traj]
    best_span: tuple[int, int] | None = None
    i = 0
    n = len(traj)
    while i < n:
        if not clear[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and clear[j + 1]:
            j += 1
        # Widest sub-run of [i, j] anchored near both boundaries.
        starts = [k for k in range(i, j + 1) if near(traj[k].pose, boundary_start)]
        ends = [k for k in range(i, j + 1) if near(traj[k].pose, boundary_end)]
        for s in starts:
            for e in reversed(ends):
                if e >= s:
                    if best_span is None or e - s > best_span[1] - best_span[0]:
                        best_span = (s, e)
                    break
        i = j + 1
    if best_span is None:
        return traj, False
    s, e = best_span
    return traj[s : e + 1], True


# --- builtin chain and problem serialization --------------------------------


def desk_chain() -> KinematicChain:
    """Six-revolute arm whose workspace covers the desk-scale scenes.

    Limits extend just past pi so yaw flips stay reachable.
    """
    limits = (-3.2, 3.2)
    return KinematicChain(
        joints=(
            Joint((0, 0, 1), Pose.from_translation((0, 0, 0.10)), limits),
            Joint((0, 1, 0), Pose.from_translation((0, 0, 0.12)), limits),
            Joint((0, 1, 0), Pose.from_translation((0, 0, 0.40)), limits),
            Joint((0, 0, 1), Pose.from_translation((0, 0, 0.35)), limits),
            Joint((0, 1, 0), Pose.from_translation((0, 0, 0.08)), limits),
            Joint((1, 0, 0), Pose.from_translation((0, 0, 0.06)), limits),
        ),
        base=Pose.from_translation((0.0, -0.55, -0.20)),
    )


def problem_to_dict(problem: PlanProblem) -> dict:
    return {
        "trajectory": [[*p.pose.as_list(), p.gripper, p.label] for p in problem.trajectory],
        "env": problem.env.to_dict(),
        "plan": None if problem.plan is None else plan_to_dict(problem.plan),
        "stage": problem.stage,
        "chain": None if problem.chain is None else problem.chain.to_dict(),
        "weights": {
            "lambda_p": problem.weights.lambda_p,
            "lambda_c": problem.weights.lambda_c,
            "lambda_l": problem.weights.lambda_l,
            "lambda_ik": problem.weights.lambda_ik,
        },
        "keypoints": [{"id": k.id, "position": list(k.position)} for k in problem.keypoints],
        "grasped_keypoint": problem.grasped_keypoint,
        "grasp_attach_pose": None
        if problem.grasp_attach_pose is None
        else problem.grasp_attach_pose.as_list(),
        "subgoal_index": problem.subgoal_index,
        "options": {
            "max_iters": problem.options.max_iters,
            "tol": problem.options.tol,
            "restarts": problem.options.restarts,
            "margin": problem.options.margin,
            "seed": problem.options.seed,
        },
    }


def problem_from_dict(data: dict) -> PlanProblem:
    try:
        poses = tuple(
            LabeledPose(Pose.from_list(row[:7]), float(row[7]), str(row[8]))
            for row in data["trajectory"]
        )
        opts = data.get("options", {})
        weights = data.get("weights", {})
        return PlanProblem(
            trajectory=poses,
            env=SdfEnvironment.from_dict(data["env"]),
            plan=None if data.get("plan") is None else plan_from_dict(data["plan"]),
            stage=int(data.get("stage", 0)),
            chain=None if data.get("chain") is None else KinematicChain.from_dict(data["chain"]),
            weights=PlanWeights(
                lambda_p=float(weights.get("lambda_p", 100.0)),
                lambda_c=float(weights.get("lambda_c", 1.0)),
                lambda_l=float(weights.get("lambda_l", 0.1)),
                lambda_ik=float(weights.get("lambda_ik", 20.0)),
            ),
            keypoints=tuple(
                Keypoint(int(k["id"]), tuple(k["position"])) for k in data.get("keypoints", [])
            ),
            grasped_keypoint=data.get("grasped_keypoint"),
            grasp_attach_pose=None
            if data.get("grasp_attach_pose") is None
            else Pose.from_list(data["grasp_attach_pose"]),
            subgoal_index=data.get("subgoal_index"),
            options=PlanOptions(
                max_iters=int(opts.get("max_iters", 500)),
                tol=float(opts.get("tol", 1e-6)),
                restarts=int(opts.get("restarts", 3)),
                margin=float(opts.get("margin", 0.02)),
                seed=int(opts.get("seed", 0)),
            ),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed plan problem: {exc}") from exc


def result_to_dict(result: PlanResult) -> dict:
    return {
        "trajectory": [[*p.pose.as_list(), p.gripper, p.label] for p in result.trajectory],
        "costs": dict(result.costs),
        "iterations": result.iterations,
        "converged": result.converged,
        "feasible": result.feasible,
        "cost_history": list(result.cost_history),
    }
