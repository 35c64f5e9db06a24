"""Demonstration records, object-centric frames, downsampling and on-disk format.

A dataset directory holds ``manifest.json`` and one ``<name>.bin`` per record.
The manifest lists, per record, the cloth and anchor specs, index lists and the
name and shape of each array in the order it is stored. The ``.bin`` file is
the concatenation of those arrays as little-endian float64, row-major.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cloth.anchor import AnchorPose
from .cloth.mesh import ClothSpec
from .variants import Variant

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
ARRAY_FIELDS = ("p_a", "p_a_goal", "p_b")
DTYPE = "<f8"


class DatasetError(ValueError):
    pass


@dataclass
class DemoRecord:
    """One demonstration: initial and goal action clouds (index aligned) and the anchor cloud."""

    p_a: np.ndarray
    p_a_goal: np.ndarray
    p_b: np.ndarray
    cloth_spec: ClothSpec
    anchor_pose: AnchorPose
    gripper_indices: tuple[int, int]
    loop_vertex_ids: list[np.ndarray]
    goal_location: np.ndarray
    hole: int = 0
    cloth_id: int = 0  # demos of the same cloth share an id (multimodal reference sets)

    def __post_init__(self):
        self.p_a = np.asarray(self.p_a, dtype=float)
        self.p_a_goal = np.asarray(self.p_a_goal, dtype=float)
        self.p_b = np.asarray(self.p_b, dtype=float)
        self.goal_location = np.asarray(self.goal_location, dtype=float)
        self.gripper_indices = tuple(int(i) for i in self.gripper_indices)
        self.loop_vertex_ids = [np.asarray(l, dtype=np.int64) for l in self.loop_vertex_ids]
        if self.p_a.shape != self.p_a_goal.shape:
            raise DatasetError(f"p_a {self.p_a.shape} and p_a_goal {self.p_a_goal.shape} must correspond")
        n = len(self.p_a)
        ids = np.concatenate([np.asarray(self.gripper_indices)] + self.loop_vertex_ids)
        if ids.size and (ids.min() < 0 or ids.max() >= n):
            raise DatasetError(f"vertex index out of range for {n} vertices")


def compute_gt_displacements(p_a, p_a_goal) -> np.ndarray:
    p_a, p_a_goal = np.asarray(p_a, dtype=float), np.asarray(p_a_goal, dtype=float)
    if p_a.shape != p_a_goal.shape:
        raise DatasetError(f"length mismatch: {p_a.shape} vs {p_a_goal.shape}")
    return p_a_goal - p_a


# ---------------------------------------------------------------- frames


@dataclass(frozen=True)
class FrameInfo:
    """Origins subtracted from the action cloud and from the anchor (and goal) clouds."""

    action_mean: np.ndarray
    anchor_mean: np.ndarray


def _centroid(points: np.ndarray, what: str) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or len(points) == 0:
        raise DatasetError(f"{what} cloud is empty or not (N, 3)")
    return points.mean(axis=0)


def center_frames(p_a, p_a_goal, p_b):
    """Object-centric frames: ``(P'_A, P'_B, dX*', FrameInfo)``.

    The action cloud is centred on its own mean; the anchor and the goal
    action cloud are centred on the anchor mean.
    """
    info = FrameInfo(_centroid(p_a, "action"), _centroid(p_b, "anchor"))
    pa = np.asarray(p_a) - info.action_mean
    pb = np.asarray(p_b) - info.anchor_mean
    goal = np.asarray(p_a_goal) - info.anchor_mean
    return pa, pb, compute_gt_displacements(pa, goal), info


def frame_info(variant: Variant, p_a, p_b) -> FrameInfo:
    """Per-variant origins: object means, world origin (-W), or the scene mean (S*)."""
    if variant.scene:
        c = _centroid(np.concatenate([np.asarray(p_a), np.asarray(p_b)]), "scene")
        return FrameInfo(c, c)
    if not variant.object_frames:
        _centroid(p_a, "action")
        _centroid(p_b, "anchor")
        return FrameInfo(np.zeros(3), np.zeros(3))
    return FrameInfo(_centroid(p_a, "action"), _centroid(p_b, "anchor"))


def frame_inputs(variant: Variant, p_a, p_b):
    """Model conditioning clouds in the variant's frames, plus the origins used."""
    info = frame_info(variant, p_a, p_b)
    return np.asarray(p_a) - info.action_mean, np.asarray(p_b) - info.anchor_mean, info


def frame_target(variant: Variant, p_a, p_a_goal, info: FrameInfo) -> np.ndarray:
    """Clean diffusion/regression target: displacements or goal positions in the anchor frame."""
    goal = np.asarray(p_a_goal, dtype=float) - info.anchor_mean
    if variant.target == "pos":
        return goal
    return compute_gt_displacements(np.asarray(p_a, dtype=float) - info.action_mean, goal)


def decode_prediction(variant: Variant, x0, p_a, info: FrameInfo) -> np.ndarray:
    """World-frame goal cloud from a prediction in the variant's frame."""
    x0 = np.asarray(x0, dtype=float)
    if variant.target == "pos":
        return x0 + info.anchor_mean
    return (np.asarray(p_a, dtype=float) - info.action_mean) + x0 + info.anchor_mean


# ---------------------------------------------------------------- sampling and augmentation


def fps_downsample(points, k: int, start: int = 0) -> np.ndarray:
    """Greedy furthest point sampling; ties go to the lowest index."""
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    if k > n:
        raise ValueError(f"cannot sample {k} points from {n}")
    if k <= 0:
        return np.zeros(0, dtype=np.int64)
    if not 0 <= start < n:
        raise ValueError(f"start index {start} out of range for {n} points")
    out = np.empty(k, dtype=np.int64)
    out[0] = start
    d = ((pts - pts[start]) ** 2).sum(axis=1)
    d[start] = -1.0
    for j in range(1, k):
        nxt = int(np.argmax(d))
        out[j] = nxt
        d = np.minimum(d, ((pts - pts[nxt]) ** 2).sum(axis=1))
        d[out[: j + 1]] = -1.0
    return out


def zrot_matrix(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def augment_zrot(points, theta: float, center=None) -> np.ndarray:
    """Rotate about the z-axis through ``center`` (the cloud's centroid by default)."""
    pts = np.asarray(points, dtype=float)
    c = pts.mean(axis=0) if center is None else np.asarray(center, dtype=float)
    return (pts - c) @ zrot_matrix(theta).T + c


def augment_demo(p_a_goal, p_b, theta: float):
    """Rotate the anchor and the goal action cloud jointly about the anchor centroid.

    The initial action cloud is left alone: the augmented sample describes the
    same cloth placed on a rotated hanger.
    """
    c = np.asarray(p_b, dtype=float).mean(axis=0)
    return augment_zrot(p_a_goal, theta, c), augment_zrot(p_b, theta, c)


# ---------------------------------------------------------------- serialization


def _record_name(i: int) -> str:
    return f"record_{i:05d}"


def _record_meta(name: str, r: DemoRecord) -> dict:
    return {
        "name": name,
        "file": f"{name}.bin",
        "arrays": [{"name": f, "shape": list(getattr(r, f).shape)} for f in ARRAY_FIELDS],
        "cloth_spec": r.cloth_spec.to_dict(),
        "anchor_pose": r.anchor_pose.to_dict(),
        "gripper_indices": list(r.gripper_indices),
        "loop_vertex_ids": [l.tolist() for l in r.loop_vertex_ids],
        "goal_location": r.goal_location.tolist(),
        "hole": int(r.hole),
        "cloth_id": int(r.cloth_id),
    }


def serialize(records: list[DemoRecord], path, extra: dict | None = None) -> Path:
    """Write records under directory ``path`` (created if missing)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    metas = []
    for i, r in enumerate(records):
        name = _record_name(i)
        blob = b"".join(np.ascontiguousarray(getattr(r, f), dtype=DTYPE).tobytes() for f in ARRAY_FIELDS)
        (path / f"{name}.bin").write_bytes(blob)
        metas.append(_record_meta(name, r))
    manifest = {
        "format_version": FORMAT_VERSION,
        "dtype": "float64",
        "endianness": "little",
        "num_records": len(records),
        "records": metas,
    }
    if extra:
        manifest["extra"] = extra
    tmp = path / (MANIFEST + ".tmp")
    tmp.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    os.replace(tmp, path / MANIFEST)
    return path


def read_manifest(path) -> dict:
    path = Path(path)
    try:
        manifest = json.loads((path / MANIFEST).read_text())
    except FileNotFoundError:
        raise DatasetError(f"no {MANIFEST} in {path}") from None
    except json.JSONDecodeError as e:
        raise DatasetError(f"corrupt manifest in {path}: {e}") from None
    if not isinstance(manifest, dict) or "format_version" not in manifest:
        raise DatasetError(f"corrupt manifest in {path}: missing format_version")
    if manifest["format_version"] != FORMAT_VERSION:
        raise DatasetError(f"unknown format_version {manifest['format_version']!r}")
    if manifest.get("dtype") != "float64" or manifest.get("endianness") != "little":
        raise DatasetError(f"unsupported dtype/endianness {manifest.get('dtype')}/{manifest.get('endianness')}")
    if not isinstance(manifest.get("records"), list):
        raise DatasetError("corrupt manifest: records must be a list")
    return manifest


def _load_record(path: Path, meta: dict) -> DemoRecord:
    name = meta.get("name", "?")
    try:
        shapes = [(a["name"], tuple(int(s) for s in a["shape"])) for a in meta["arrays"]]
        blob = (path / meta["file"]).read_bytes()
    except KeyError as e:
        raise DatasetError(f"record {name}: missing field {e}") from None
    except FileNotFoundError:
        raise DatasetError(f"record {name}: array file {meta['file']} missing") from None
    if [s[0] for s in shapes] != list(ARRAY_FIELDS):
        raise DatasetError(f"record {name}: unexpected arrays {[s[0] for s in shapes]}")
    expected = sum(int(np.prod(s)) for _, s in shapes) * 8
    if expected != len(blob):
        raise DatasetError(f"record {name}: declared shapes need {expected} bytes, file has {len(blob)}")
    arrays, off = {}, 0
    for f, shape in shapes:
        cnt = int(np.prod(shape))
        arrays[f] = np.frombuffer(blob, dtype=DTYPE, count=cnt, offset=off).reshape(shape).astype(np.float64)
        off += cnt * 8
    try:
        return DemoRecord(
            cloth_spec=ClothSpec.from_dict(meta["cloth_spec"]),
            anchor_pose=AnchorPose.from_dict(meta["anchor_pose"]),
            gripper_indices=tuple(meta["gripper_indices"]),
            loop_vertex_ids=[np.asarray(l, dtype=np.int64) for l in meta["loop_vertex_ids"]],
            goal_location=np.asarray(meta["goal_location"], dtype=float),
            hole=int(meta.get("hole", 0)),
            cloth_id=int(meta.get("cloth_id", 0)),
            **arrays,
        )
    except KeyError as e:
        raise DatasetError(f"record {name}: missing field {e}") from None
    except DatasetError as e:
        raise DatasetError(f"record {name}: {e}") from None


def deserialize(path) -> list[DemoRecord]:
    path = Path(path)
    manifest = read_manifest(path)
    return [_load_record(path, m) for m in manifest["records"]]


# ---------------------------------------------------------------- training views


@dataclass
class TrainingSet:
    """Fixed-size downsampled views of a record list, ready for batching."""

    p_a: np.ndarray  # (D, N, 3)
    p_a_goal: np.ndarray  # (D, N, 3)
    p_b: np.ndarray  # (D, M, 3)
    indices: list[np.ndarray] = field(default_factory=list)

    def __len__(self):
        return len(self.p_a)


def make_training_set(records: list[DemoRecord], num_points: int | None = 512, num_anchor_points: int | None = 512) -> TrainingSet:
    """FPS-downsample each record's action cloud (indices shared with the goal) and anchor cloud."""
    if not records:
        raise DatasetError("empty dataset")
    pa, pg, pb, idxs = [], [], [], []
    for r in records:
        k = len(r.p_a) if num_points is None else min(num_points, len(r.p_a))
        idx = fps_downsample(r.p_a, k)
        kb = len(r.p_b) if num_anchor_points is None else min(num_anchor_points, len(r.p_b))
        pa.append(r.p_a[idx])
        pg.append(r.p_a_goal[idx])
        pb.append(r.p_b[fps_downsample(r.p_b, kb)])
        idxs.append(idx)
    if len({a.shape for a in pa}) > 1 or len({b.shape for b in pb}) > 1:
        raise DatasetError("records downsample to different sizes; lower num_points")
    return TrainingSet(np.stack(pa), np.stack(pg), np.stack(pb), idxs)
