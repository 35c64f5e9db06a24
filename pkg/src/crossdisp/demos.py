"""Pseudo-expert demonstration generation for the cloth hanging task."""

from __future__ import annotations

import logging
from enum import Enum

import numpy as np

from .cloth.anchor import AnchorPose, AnchorSpec, Regime, sample_anchor_pose
from .cloth.env import EpisodeResult, PseudoExpertPolicy, make_scene, run_episode
from .cloth.mesh import SIMPLE_CLOTH, ClothSpec, generate_cloth
from .cloth.sim import PhysicsParams
from .dataset import DemoRecord

log = logging.getLogger(__name__)

NUM_ANCHOR_POINTS = 512
ATTEMPTS_PER_DEMO = 5


class Task(str, Enum):
    SIMPLE = "simple"
    UNIMODAL = "unimodal"
    MULTIMODAL = "multimodal"


# (train, unseen, ood) demonstration counts per task
DEFAULT_COUNTS = {
    Task.SIMPLE: {"train": 16, "unseen": 40, "ood": 40},
    Task.UNIMODAL: {"train": 64, "unseen": 40, "ood": 40},
    Task.MULTIMODAL: {"train": 64, "unseen": 40, "ood": 40},
}


class InsufficientDemosError(RuntimeError):
    pass


def demo_from_episode(scene, result: EpisodeResult, anchor_cloud: np.ndarray, hole: int, cloth_id: int) -> DemoRecord:
    """Initial and pre-release mesh vertices become the action clouds."""
    return DemoRecord(
        p_a=result.initial,
        p_a_goal=result.pre_release,
        p_b=anchor_cloud,
        cloth_spec=scene.cloth,
        anchor_pose=scene.anchor.pose,
        gripper_indices=scene.gripper_indices,
        loop_vertex_ids=scene.loops,
        goal_location=scene.anchor.goal_location,
        hole=hole,
        cloth_id=cloth_id,
    )


def run_expert(cloth: ClothSpec, pose: AnchorPose, hole: int, params: PhysicsParams = PhysicsParams(), **episode_kw):
    scene = make_scene(cloth, AnchorSpec(pose=pose), params)
    return scene, run_episode(scene, PseudoExpertPolicy(scene, hole), **episode_kw)


def _sample_cloth(task: Task, rng: np.random.Generator) -> ClothSpec:
    if task is Task.SIMPLE:
        return SIMPLE_CLOTH
    return generate_cloth(rng, 2 if task is Task.MULTIMODAL else 1)


def generate_demos(
    task: Task | str,
    regime: Regime | str,
    count: int,
    seed: int,
    num_anchor_points: int = NUM_ANCHOR_POINTS,
    params: PhysicsParams = PhysicsParams(),
    max_attempts: int | None = None,
    cloth: ClothSpec | None = None,
    **episode_kw,
) -> list[DemoRecord]:
    """Keep only successful pseudo-expert episodes until ``count`` demos exist.

    Multimodal tasks need a success through every hole of a cloth (all under
    one anchor pose) and contribute one demo per hole; ``count`` is then the
    total number of demos. Attempt ``k`` draws everything from a generator
    seeded with ``(seed, k)``. ``cloth`` pins the cloth geometry.
    """
    task, regime = Task(task), Regime(regime)
    per_cloth = 2 if task is Task.MULTIMODAL else 1
    if count % per_cloth:
        raise ValueError(f"{task.value} needs a multiple of {per_cloth} demos, got {count}")
    n_cloths = count // per_cloth
    budget = ATTEMPTS_PER_DEMO * max(n_cloths, 1) if max_attempts is None else max_attempts
    demos: list[DemoRecord] = []
    attempt = 0
    while len(demos) < count:
        if attempt >= budget:
            raise InsufficientDemosError(f"only {len(demos)} of {count} demos after {attempt} attempts")
        rng = np.random.default_rng([seed, attempt])
        spec = cloth if cloth is not None else _sample_cloth(task, rng)
        pose = sample_anchor_pose(rng, regime)
        anchor_cloud = AnchorSpec(pose=pose).sample_surface(rng, num_anchor_points)
        batch = []
        for hole in range(len(spec.holes) if task is Task.MULTIMODAL else 1):
            scene, res = run_expert(spec, pose, hole, params, **episode_kw)
            if not res.success:
                break
            batch.append(demo_from_episode(scene, res, anchor_cloud, hole, len(demos) // per_cloth))
        else:
            demos.extend(batch)
        log.info("attempt %d: %s (%d/%d demos)", attempt, "kept" if len(batch) == per_cloth else "rejected", len(demos), count)
        attempt += 1
    return demos
