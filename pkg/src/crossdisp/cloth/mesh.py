"""Procedural cloth with rectangular holes.

A cloth is a ``node_density x node_density`` vertex grid. Grid column ``i``
runs along the cloth width, grid row ``j`` runs down from the top edge
(row 0 holds the gripper corners). Holes are given by corner vertices
``(x0, y0)`` and ``(x1, y1)``; every vertex strictly inside the rectangle is
removed, and the surviving rectangle border forms the hole's loop.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

DEFAULT_NODE_DENSITY = 25
HOLE_EXTENT_RANGE = (5, 7)
SIZE_RANGE = (0.8, 1.2)
MAX_ATTEMPTS = 10_000


class ClothSpecError(ValueError):
    pass


@dataclass(frozen=True)
class HoleSpec:
    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def interior_count(self) -> int:
        return max(self.x1 - self.x0 - 1, 0) * max(self.y1 - self.y0 - 1, 0)


@dataclass(frozen=True)
class ClothSpec:
    node_density: int = DEFAULT_NODE_DENSITY
    width: float = 1.0
    height: float = 1.0
    holes: tuple[HoleSpec, ...] = field(default_factory=tuple)

    @property
    def num_holes(self) -> int:
        return len(self.holes)

    def to_dict(self) -> dict:
        return {
            "node_density": self.node_density,
            "width": self.width,
            "height": self.height,
            "num_holes": self.num_holes,
            "holes": [asdict(h) for h in self.holes],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClothSpec":
        holes = tuple(HoleSpec(**{k: int(h[k]) for k in ("x0", "y0", "x1", "y1")}) for h in d["holes"])
        if "num_holes" in d and int(d["num_holes"]) != len(holes):
            raise ClothSpecError(f"num_holes={d['num_holes']} but {len(holes)} holes listed")
        return cls(int(d["node_density"]), float(d["width"]), float(d["height"]), holes)


# The fixed single-hole cloth used for the simple task.
SIMPLE_CLOTH = ClothSpec(25, 1.0, 1.0, (HoleSpec(8, 9, 16, 13),))


def hole_in_bounds(hole: HoleSpec, node_density: int) -> bool:
    """Corner range check plus the boundary check.

    ``x0``/``y0`` must lie in ``[2, node_density - 2]`` and the far corner must
    keep at least one intact column/row of cloth beyond the loop.
    """
    lo, hi = 2, node_density - 2
    if not (lo <= hole.x0 <= hi and lo <= hole.y0 <= hi):
        return False
    if hole.x1 - hole.x0 < 2 or hole.y1 - hole.y0 < 2:
        return False
    return hole.x1 <= node_density - 2 and hole.y1 <= node_density - 2


def holes_overlap(a: HoleSpec, b: HoleSpec) -> bool:
    # closed rectangles; sharing a loop vertex counts as overlap
    return a.x0 <= b.x1 and b.x0 <= a.x1 and a.y0 <= b.y1 and b.y0 <= a.y1


def validate(spec: ClothSpec) -> None:
    if spec.node_density < 5:
        raise ClothSpecError(f"node_density {spec.node_density} too small")
    if not (spec.width > 0 and spec.height > 0):
        raise ClothSpecError("cloth width and height must be positive")
    for k, h in enumerate(spec.holes):
        if not hole_in_bounds(h, spec.node_density):
            raise ClothSpecError(f"hole {k} {h} fails the boundary check")
        for m in range(k):
            if holes_overlap(h, spec.holes[m]):
                raise ClothSpecError(f"holes {m} and {k} overlap")


def is_valid(spec: ClothSpec) -> bool:
    try:
        validate(spec)
    except ClothSpecError:
        return False
    return True


def generate_cloth(
    rng: np.random.Generator,
    num_holes: int,
    node_density: int = DEFAULT_NODE_DENSITY,
    max_attempts: int = MAX_ATTEMPTS,
) -> ClothSpec:
    """Monte-Carlo cloth generation.

    Samples cloth size, then hole corners (``x0``, ``y0`` first, extents
    second) and rejects whole hole sets until the boundary and overlap checks
    pass.
    """
    if num_holes not in (1, 2):
        raise ClothSpecError(f"num_holes must be 1 or 2, got {num_holes}")
    width = float(rng.uniform(*SIZE_RANGE))
    height = float(rng.uniform(*SIZE_RANGE))
    lo, hi = 2, node_density - 2
    for _ in range(max_attempts):
        holes = []
        for _ in range(num_holes):
            x0 = int(rng.integers(lo, hi + 1))
            y0 = int(rng.integers(lo, hi + 1))
            w = int(rng.integers(HOLE_EXTENT_RANGE[0], HOLE_EXTENT_RANGE[1] + 1))
            h = int(rng.integers(HOLE_EXTENT_RANGE[0], HOLE_EXTENT_RANGE[1] + 1))
            holes.append(HoleSpec(x0, y0, x0 + w, y0 + h))
        spec = ClothSpec(node_density, width, height, tuple(holes))
        if is_valid(spec):
            return spec
    raise ClothSpecError(f"no valid cloth after {max_attempts} attempts")


@dataclass
class ClothMesh:
    spec: ClothSpec
    grid_ij: np.ndarray  # (V, 2) grid coordinates of surviving vertices
    local: np.ndarray  # (V, 3) rest positions in the cloth's local frame
    springs: np.ndarray  # (S, 2) vertex index pairs
    spring_kind: np.ndarray  # (S,) 0 structural, 1 shear, 2 bend
    rest_length: np.ndarray  # (S,)
    loops: list[np.ndarray]  # per hole, vertex ids ordered around the perimeter
    grid_to_vertex: np.ndarray  # (n, n) vertex id or -1, indexed [j, i]

    @property
    def num_vertices(self) -> int:
        return len(self.local)

    def vertex_at(self, i: int, j: int) -> int:
        v = int(self.grid_to_vertex[j, i])
        if v < 0:
            raise IndexError(f"grid vertex ({i}, {j}) was removed")
        return v

    def gripper_vertices(self) -> tuple[int, int]:
        n = self.spec.node_density
        return self.vertex_at(0, 0), self.vertex_at(n - 1, 0)


def _loop_perimeter(h: HoleSpec) -> list[tuple[int, int]]:
    pts = [(i, h.y0) for i in range(h.x0, h.x1)]
    pts += [(h.x1, j) for j in range(h.y0, h.y1)]
    pts += [(i, h.y1) for i in range(h.x1, h.x0, -1)]
    pts += [(h.x0, j) for j in range(h.y1, h.y0, -1)]
    return pts


def build_mesh(spec: ClothSpec, scale: float = 10.0) -> ClothMesh:
    """Grid vertices minus hole interiors, with structural/shear/bend springs.

    ``scale`` converts the unitless width/height into scene units. The local
    frame is laid out so that the scene's cloth Euler rotation
    ``(-pi/2, 0, 3pi/2)`` maps the cloth into a vertical plane facing ``-y``:
    local ``(0, -v, u)`` lands on world ``(u, 0, v)``.
    """
    validate(spec)
    n = spec.node_density
    alive = np.ones((n, n), dtype=bool)  # [j, i]
    for h in spec.holes:
        alive[h.y0 + 1 : h.y1, h.x0 + 1 : h.x1] = False

    jj, ii = np.nonzero(alive)  # row-major order: top row first
    grid_to_vertex = -np.ones((n, n), dtype=np.int64)
    grid_to_vertex[jj, ii] = np.arange(len(ii))

    u = (ii / (n - 1) - 0.5) * spec.width * scale
    v = (0.5 - jj / (n - 1)) * spec.height * scale
    local = np.stack([np.zeros_like(u), -v, u], axis=1)

    J, I = np.mgrid[0:n, 0:n]
    pairs, kinds = [], []
    # (di, dj, kind); bend springs also need the skipped middle vertex
    for di, dj, kind in ((1, 0, 0), (0, 1, 0), (1, 1, 1), (-1, 1, 1), (2, 0, 2), (0, 2, 2)):
        I2, J2 = I + di, J + dj
        ok = (I2 >= 0) & (I2 < n) & (J2 < n)
        ok &= alive & alive[np.clip(J2, 0, n - 1), np.clip(I2, 0, n - 1)]
        if kind == 2:
            ok &= alive[np.clip(J + dj // 2, 0, n - 1), np.clip(I + di // 2, 0, n - 1)]
        pairs.append(np.stack([grid_to_vertex[J[ok], I[ok]], grid_to_vertex[J2[ok], I2[ok]]], axis=1))
        kinds.append(np.full(int(ok.sum()), kind))

    springs = np.concatenate(pairs).astype(np.int64)
    spring_kind = np.concatenate(kinds).astype(np.int64)
    rest = np.linalg.norm(local[springs[:, 1]] - local[springs[:, 0]], axis=1)

    loops = [np.array([grid_to_vertex[j, i] for i, j in _loop_perimeter(h)], dtype=np.int64) for h in spec.holes]
    return ClothMesh(spec, np.stack([ii, jj], axis=1), local, springs, spring_kind, rest, loops, grid_to_vertex)
