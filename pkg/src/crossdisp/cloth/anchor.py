"""Rigid hanger geometry, pose randomization and surface sampling."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class Regime(str, Enum):
    TRAIN = "train"
    UNSEEN = "unseen"
    OOD = "ood"


ROT_RANGE = (-np.pi / 3, np.pi / 3)


@dataclass(frozen=True)
class Capsule:
    a: tuple[float, float, float]
    b: tuple[float, float, float]
    radius: float


@dataclass(frozen=True)
class AnchorPose:
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rotation_z: float = 0.0

    def matrix(self) -> np.ndarray:
        c, s = np.cos(self.rotation_z), np.sin(self.rotation_z)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    def apply(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts, dtype=float) @ self.matrix().T + np.asarray(self.translation)

    def to_dict(self) -> dict:
        return {"translation": list(self.translation), "rotation_z": self.rotation_z}

    @classmethod
    def from_dict(cls, d: dict) -> "AnchorPose":
        return cls(tuple(float(x) for x in d["translation"]), float(d["rotation_z"]))


@dataclass(frozen=True)
class HangerGeometry:
    """Tall vertical rod with a horizontal peg (the 'hanger') at its top.

    The peg points along local +y, toward the cloth's starting position, so
    the cloth threads its hole onto the peg. Contacts are frictionless, so
    the peg is long enough that a hanging cloth drifting along it stays on
    for the whole release phase, and thick enough that it cannot slip
    between neighbouring cloth vertices.
    """

    rod_height: float = 8.0
    rod_radius: float = 0.3
    peg_length: float = 4.0
    peg_radius: float = 0.5

    def local_capsules(self) -> dict[str, Capsule]:
        h = self.rod_height
        return {
            "tall_rod": Capsule((0.0, 0.0, 0.0), (0.0, 0.0, h), self.rod_radius),
            "hanger": Capsule((0.0, 0.0, h), (0.0, self.peg_length, h), self.peg_radius),
        }


@dataclass(frozen=True)
class AnchorSpec:
    geometry: HangerGeometry = field(default_factory=HangerGeometry)
    pose: AnchorPose = field(default_factory=AnchorPose)

    def capsules(self) -> list[Capsule]:
        out = []
        for cap in self.geometry.local_capsules().values():
            a, b = self.pose.apply(np.array([cap.a, cap.b]))
            out.append(Capsule(tuple(a), tuple(b), cap.radius))
        return out

    @property
    def goal_location(self) -> np.ndarray:
        cap = self.geometry.local_capsules()["hanger"]
        mid = 0.5 * (np.asarray(cap.a) + np.asarray(cap.b))
        return self.pose.apply(mid[None])[0]

    @property
    def peg_axis(self) -> np.ndarray:
        """Unit direction of the hanger peg in the world frame."""
        return self.pose.matrix() @ np.array([0.0, 1.0, 0.0])

    def sample_surface(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Area-weighted random points on the cylinder walls of every part."""
        caps = self.geometry.local_capsules().values()
        lengths = np.array([np.linalg.norm(np.subtract(c.b, c.a)) for c in caps])
        areas = lengths * np.array([c.radius for c in caps])
        which = rng.choice(len(areas), size=n, p=areas / areas.sum())
        pts = np.empty((n, 3))
        for k, cap in enumerate(caps):
            sel = which == k
            m = int(sel.sum())
            a, b = np.asarray(cap.a), np.asarray(cap.b)
            axis = (b - a) / np.linalg.norm(b - a)
            e1 = np.cross(axis, [1.0, 0.0, 0.0] if abs(axis[0]) < 0.9 else [0.0, 1.0, 0.0])
            e1 /= np.linalg.norm(e1)
            e2 = np.cross(axis, e1)
            s = rng.uniform(0.0, 1.0, m)
            phi = rng.uniform(0.0, 2 * np.pi, m)
            pts[sel] = a + s[:, None] * (b - a) + cap.radius * (np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2)
        return self.pose.apply(pts)


def sample_anchor_pose(rng: np.random.Generator, regime: Regime | str) -> AnchorPose:
    """Uniform anchor pose for a regime.

    The x-translation takes the sign of the sampled z-rotation so the peg
    always faces the cloth. Train and Unseen share one distribution.
    """
    regime = Regime(regime)
    theta = float(rng.uniform(*ROT_RANGE))
    sign = 1.0 if theta >= 0 else -1.0
    y = float(rng.uniform(-10.0, 0.0))
    if regime is Regime.OOD:
        x = sign * float(rng.uniform(5.0, 10.0))
        z = float(rng.uniform(1.0, 5.0))
    else:
        x = sign * float(rng.uniform(0.0, 5.0))
        z = 0.0
    return AnchorPose((x, y, z), theta)


def pose_in_regime(pose: AnchorPose, regime: Regime | str) -> bool:
    regime = Regime(regime)
    x, y, z = pose.translation
    th = pose.rotation_z
    if not (ROT_RANGE[0] <= th <= ROT_RANGE[1] and -10.0 <= y <= 0.0):
        return False
    if x != 0.0 and (x > 0) != (th >= 0):
        return False
    if regime is Regime.OOD:
        return 5.0 <= abs(x) <= 10.0 and 1.0 <= z <= 5.0
    return abs(x) <= 5.0 and z == 0.0
