"""Mass-spring cloth dynamics with force-controlled floating grippers."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .anchor import Capsule
from .mesh import ClothMesh

PD_GAIN = 50.0
MAX_FORCE = 5.0


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class PhysicsParams:
    # calibration constants; the original benchmark delegates all of these to its engine
    particle_mass: float = 0.01
    stiffness: tuple[float, float, float] = (800.0, 400.0, 200.0)  # structural, shear, bend
    damping: float = 0.995  # velocity multiplier per simulation step
    dt: float = 1.0 / 240.0
    substeps: int = 4
    gravity: float = 9.81
    collision_stiffness: float = 1000.0
    contact_margin: float = 0.05
    gripper_mass: float = 1.0


@dataclass
class SimState:
    x: np.ndarray  # (V, 3)
    v: np.ndarray  # (V, 3)
    pinned: np.ndarray  # (G,) vertex ids attached to grippers; empty once released
    gripper_x: np.ndarray  # (G, 3)
    gripper_v: np.ndarray  # (G, 3)
    time: float = 0.0
    phase: str = "manipulation"

    def copy(self) -> "SimState":
        return replace(
            self,
            x=self.x.copy(),
            v=self.v.copy(),
            pinned=self.pinned.copy(),
            gripper_x=self.gripper_x.copy(),
            gripper_v=self.gripper_v.copy(),
        )

    def released(self) -> "SimState":
        s = self.copy()
        s.pinned = np.zeros(0, dtype=np.int64)
        s.phase = "release"
        return s


def pd_control(gripper_x, gripper_v, target, kp: float = PD_GAIN, kd: float = PD_GAIN, max_force: float = MAX_FORCE):
    """PD force toward ``target`` with zero target velocity, clamped per axis."""
    target = np.asarray(target, dtype=float)
    if not np.all(np.isfinite(target)):
        raise ValueError("PD target must be finite")
    f = kp * (target - np.asarray(gripper_x)) - kd * np.asarray(gripper_v)
    return np.clip(f, -max_force, max_force)


def capsule_penalty(x: np.ndarray, cap: Capsule, k: float, margin: float) -> np.ndarray:
    a = np.asarray(cap.a)
    ab = np.asarray(cap.b) - a
    s = np.clip(((x - a) @ ab) / (ab @ ab), 0.0, 1.0)
    diff = x - (a + s[:, None] * ab)
    dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    pen = cap.radius + margin - dist
    hit = pen > 0.0
    f = np.zeros_like(x)
    if np.any(hit):
        d = np.maximum(dist[hit], 1e-12)
        f[hit] = (k * pen[hit] / d)[:, None] * diff[hit]
    return f


class ClothSim:
    """Static data for one cloth/anchor pair; ``step`` is a pure state update."""

    def __init__(self, mesh: ClothMesh, capsules: list[Capsule], params: PhysicsParams = PhysicsParams()):
        self.mesh = mesh
        self.capsules = list(capsules)
        self.params = params
        S, V = len(mesh.springs), mesh.num_vertices
        rows = np.repeat(np.arange(S), 2)
        cols = mesh.springs.ravel()
        vals = np.tile([-1.0, 1.0], S)
        self.incidence = sp.csr_matrix((vals, (rows, cols)), shape=(S, V))
        self.incidence_t = self.incidence.T.tocsr()
        self.k = np.asarray(params.stiffness)[mesh.spring_kind]
        self.rest = mesh.rest_length

    def initial_state(self, positions: np.ndarray, pinned) -> SimState:
        pinned = np.asarray(pinned, dtype=np.int64)
        return SimState(
            x=np.array(positions, dtype=float),
            v=np.zeros_like(positions, dtype=float),
            pinned=pinned,
            gripper_x=np.array(positions[pinned], dtype=float),
            gripper_v=np.zeros((len(pinned), 3)),
        )

    def forces(self, x: np.ndarray) -> np.ndarray:
        p = self.params
        d = self.incidence @ x
        length = np.sqrt(np.einsum("ij,ij->i", d, d))
        mag = self.k * (length - self.rest) / np.maximum(length, 1e-12)
        f = -(self.incidence_t @ (mag[:, None] * d))
        f[:, 2] -= p.particle_mass * p.gravity
        for cap in self.capsules:
            f += capsule_penalty(x, cap, p.collision_stiffness, p.contact_margin)
        below = x[:, 2] < 0.0
        f[below, 2] -= p.collision_stiffness * x[below, 2]
        return f

    def energy(self, state: SimState) -> float:
        """Kinetic + spring + gravitational energy (contacts excluded)."""
        p = self.params
        d = self.incidence @ state.x
        length = np.linalg.norm(d, axis=1)
        spring = 0.5 * np.sum(self.k * (length - self.rest) ** 2)
        kinetic = 0.5 * p.particle_mass * np.sum(state.v**2)
        grav = p.particle_mass * p.gravity * np.sum(state.x[:, 2])
        return float(kinetic + spring + grav)

    def step(self, state: SimState, control=None) -> SimState:
        """Advance one simulation step of length ``params.dt``.

        ``control`` holds one force per gripper; it is clamped per axis before
        use. Pinned particles track their gripper rigidly.
        """
        p = self.params
        s = state.copy()
        g = len(s.pinned)
        if g:
            f = np.zeros((g, 3)) if control is None else np.clip(np.asarray(control, dtype=float), -MAX_FORCE, MAX_FORCE)
            s.gripper_v = s.gripper_v + (p.dt / p.gripper_mass) * f
            s.gripper_x = s.gripper_x + p.dt * s.gripper_v
        h = p.dt / p.substeps
        decay = p.damping ** (1.0 / p.substeps)
        inv_m = 1.0 / p.particle_mass
        x, v = s.x, s.v
        for _ in range(p.substeps):
            v = (v + (h * inv_m) * self.forces(x)) * decay
            x = x + h * v
            if g:
                x[s.pinned] = s.gripper_x
                v[s.pinned] = s.gripper_v
        if not np.all(np.isfinite(x)):
            bad = int(np.argwhere(~np.isfinite(x))[0, 0])
            raise SimulationError(f"non-finite position at vertex {bad}, t={s.time:.4f}")
        s.x, s.v = x, v
        s.time = state.time + p.dt
        return s
