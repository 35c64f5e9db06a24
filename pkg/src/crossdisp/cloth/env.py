"""Cloth hanging episodes: scene setup, policies, rollouts and success."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .anchor import AnchorSpec
from .geometry import euler_matrix, point_in_polygon, project
from .mesh import ClothMesh, ClothSpec, build_mesh
from .sim import ClothSim, PhysicsParams, SimState, pd_control

log = logging.getLogger(__name__)

CLOTH_POSITION = np.array([0.0, 5.0, 8.0])
CLOTH_EULER = (-np.pi / 2, 0.0, 3 * np.pi / 2)
CLOTH_SCALE = 10.0
CENTROID_THRESHOLD = 1.3
SIM_STEPS_PER_ENV_STEP = 8
RELEASE_STEPS = 500
MANIPULATION_STEPS = 250


@dataclass
class Scene:
    cloth: ClothSpec
    anchor: AnchorSpec
    mesh: ClothMesh
    sim: ClothSim
    initial_positions: np.ndarray

    @property
    def gripper_indices(self) -> tuple[int, int]:
        return self.mesh.gripper_vertices()

    @property
    def loops(self) -> list[np.ndarray]:
        return self.mesh.loops

    def initial_state(self) -> SimState:
        return self.sim.initial_state(self.initial_positions, self.gripper_indices)


def make_scene(cloth: ClothSpec, anchor: AnchorSpec, params: PhysicsParams = PhysicsParams(), scale: float = CLOTH_SCALE) -> Scene:
    mesh = build_mesh(cloth, scale=scale)
    world = mesh.local @ euler_matrix(*CLOTH_EULER).T + CLOTH_POSITION
    return Scene(cloth, anchor, mesh, ClothSim(mesh, anchor.capsules(), params), world)


def loop_centroid(x: np.ndarray, loop: np.ndarray) -> np.ndarray:
    return x[loop].mean(axis=0)


class PseudoExpertPolicy:
    """Privileged policy: carry the chosen hole's loop onto the goal.

    Base targets rigidly move the gripper-to-loop offsets onto the goal after
    rotating them with the anchor's z-rotation; each step adds
    ``correction_gain * (goal - current loop centroid)``.
    """

    def __init__(self, scene: Scene, hole: int = 0, correction_gain: float = 0.3):
        if not 0 <= hole < len(scene.loops):
            raise IndexError(f"hole {hole} out of range for {len(scene.loops)} holes")
        self.scene = scene
        self.hole = hole
        self.loop = scene.loops[hole]
        self.goal = scene.anchor.goal_location
        self.correction_gain = correction_gain
        self.base = None

    def reset(self, state: SimState) -> None:
        c0 = loop_centroid(state.x, self.loop)
        rot = self.scene.anchor.pose.matrix()
        self.base = self.goal + (state.gripper_x - c0) @ rot.T

    def targets(self, state: SimState) -> np.ndarray:
        if self.base is None:
            self.reset(state)
        corr = self.correction_gain * (self.goal - loop_centroid(state.x, self.loop))
        return self.base + corr


class EvaluationPolicy:
    """Drive each gripper to the predicted world position of its vertex."""

    def __init__(self, predicted: np.ndarray, gripper_indices):
        predicted = np.asarray(predicted, dtype=float)
        idx = np.asarray(gripper_indices, dtype=np.int64)
        if np.any(idx < 0) or np.any(idx >= len(predicted)):
            raise IndexError(f"gripper indices {idx.tolist()} out of range for {len(predicted)} points")
        self.goal_targets = predicted[idx]

    def reset(self, state: SimState) -> None:
        pass

    def targets(self, state: SimState) -> np.ndarray:
        return self.goal_targets


@dataclass
class EpisodeResult:
    initial: np.ndarray
    pre_release: np.ndarray
    post_release: np.ndarray
    success: bool
    centroid_ok: list[bool] = field(default_factory=list)
    polygon_ok: list[bool] = field(default_factory=list)


def success_check(
    pre_release: np.ndarray,
    post_release: np.ndarray,
    anchor: AnchorSpec,
    loops: list[np.ndarray],
    threshold: float = CENTROID_THRESHOLD,
    polygon_normal=None,
) -> tuple[bool, list[bool], list[bool]]:
    """Per hole: pre-release centroid check and post-release polygon check.

    The polygon check projects the loop and the goal onto the plane normal to
    ``polygon_normal`` (world z, i.e. the xy-plane, when None). Success needs
    both checks on at least one hole.
    """
    goal = anchor.goal_location
    normal = (0.0, 0.0, 1.0) if polygon_normal is None else polygon_normal
    cent, poly = [], []
    for loop in loops:
        c = loop_centroid(pre_release, loop)
        cent.append(bool(np.linalg.norm(c - goal) < threshold))
        if len(loop) < 3:
            log.warning("degenerate hole loop with %d vertices", len(loop))
            poly.append(False)
            continue
        pts = project(post_release[loop], normal)
        poly.append(bool(point_in_polygon(project(goal[None], normal)[0], pts)))
    ok = any(a and b for a, b in zip(cent, poly))
    return ok, cent, poly


def run_episode(
    scene: Scene,
    policy,
    manipulation_steps: int = MANIPULATION_STEPS,
    release_steps: int = RELEASE_STEPS,
    sim_steps_per_env_step: int = SIM_STEPS_PER_ENV_STEP,
    polygon_normal="peg",
    record=None,
) -> EpisodeResult:
    """Manipulation phase (policy targets refreshed every env step) then release.

    ``record``, if given, is called with each simulation state.
    """
    state = scene.initial_state()
    initial = state.x.copy()
    policy.reset(state)
    for _ in range(manipulation_steps):
        targets = policy.targets(state)
        for _ in range(sim_steps_per_env_step):
            state = scene.sim.step(state, pd_control(state.gripper_x, state.gripper_v, targets))
            if record is not None:
                record(state)
    pre = state.x.copy()
    state = state.released()
    for _ in range(release_steps):
        state = scene.sim.step(state)
        if record is not None:
            record(state)
    post = state.x.copy()
    normal = scene.anchor.peg_axis if isinstance(polygon_normal, str) and polygon_normal == "peg" else polygon_normal
    ok, cent, poly = success_check(pre, post, scene.anchor, scene.loops, polygon_normal=normal)
    return EpisodeResult(initial, pre, post, ok, cent, poly)
