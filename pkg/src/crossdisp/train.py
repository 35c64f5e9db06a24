"""Training loop, AdamW with warmup + cosine decay, and the checkpoint container.

Every random draw of step ``k`` comes from a generator seeded with
``(seed, k)`` and the batch order of epoch ``e`` from ``(seed, e)``, so a run
resumed from a checkpoint at step ``k`` replays exactly the steps an
uninterrupted run would take.

Checkpoint layout::

    b"CDISPCKP"                 8-byte magic
    uint64 little-endian        header length H
    H bytes of UTF-8 JSON       config, schedule, seed, step, array table
    raw little-endian float64   arrays at the offsets given in the table
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .dataset import TrainingSet, augment_demo, frame_inputs, frame_target
from .diffusion import HYBRID_LAMBDA, NoiseSchedule, hybrid_loss, make_linear_schedule, q_sample
from .model import Model, ModelConfig, Params, forward

log = logging.getLogger(__name__)

MAGIC = b"CDISPCKP"
CKPT_VERSION = 1


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    warmup_steps: int = 100
    weight_decay: float = 1e-5
    epochs: int = 2000
    max_steps: int | None = None  # overrides epochs when set
    batch_size: int = 16
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    hybrid_lambda: float = HYBRID_LAMBDA
    augment_rotation: bool = True
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def total_steps(self, num_demos: int) -> int:
        if self.max_steps is not None:
            return int(self.max_steps)
        return int(self.epochs) * steps_per_epoch(num_demos, self.batch_size)


def steps_per_epoch(num_demos: int, batch_size: int) -> int:
    return max(1, math.ceil(num_demos / batch_size))


def lr_at(step: int, cfg: TrainConfig, total: int) -> float:
    """Linear warmup over ``warmup_steps`` then cosine decay to zero at ``total``."""
    if cfg.warmup_steps > 0 and step < cfg.warmup_steps:
        return cfg.learning_rate * (step + 1) / cfg.warmup_steps
    span = max(1, total - cfg.warmup_steps)
    frac = min(1.0, (step - cfg.warmup_steps) / span)
    return cfg.learning_rate * 0.5 * (1.0 + math.cos(math.pi * frac))


class AdamW:
    """Adam with decoupled weight decay applied to every parameter."""

    def __init__(self, params: Params, cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m, v = self.m[k], self.v[k]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            p.data *= 1.0 - lr * c.weight_decay
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + c.adam_eps)


@dataclass
class StepBatch:
    p_a: np.ndarray
    p_b: np.ndarray
    x0: np.ndarray
    x_t: np.ndarray | None
    t: np.ndarray
    eps: np.ndarray | None


def make_batch(data: TrainingSet, idx: np.ndarray, model_cfg: ModelConfig, cfg: TrainConfig, s: NoiseSchedule, rng: np.random.Generator) -> StepBatch:
    """Frame, augment and noise the demos ``idx`` for one optimisation step."""
    v = model_cfg.spec
    pas, pbs, x0s = [], [], []
    for i in idx:
        goal, pb = data.p_a_goal[i], data.p_b[i]
        if cfg.augment_rotation:
            goal, pb = augment_demo(goal, pb, rng.uniform(0.0, 2 * np.pi))
        pa_in, pb_in, info = frame_inputs(v, data.p_a[i], pb)
        pas.append(pa_in)
        pbs.append(pb_in)
        x0s.append(frame_target(v, data.p_a[i], goal, info))
    pa, pb, x0 = np.stack(pas), np.stack(pbs), np.stack(x0s)
    if v.regression:
        return StepBatch(pa, pb, x0, None, np.zeros(len(idx), dtype=np.int64), None)
    t = rng.integers(1, s.T + 1, size=len(idx))
    eps = rng.standard_normal(x0.shape)
    return StepBatch(pa, pb, x0, q_sample(x0, t, eps, s), t, eps)


def batch_loss(params: Params, model_cfg: ModelConfig, b: StepBatch, s: NoiseSchedule, lam: float):
    out, v = forward(params, model_cfg, b.x_t, b.p_a, b.p_b, b.t)
    if model_cfg.spec.regression:
        return ad.mean(ad.square(out - b.x0))
    return hybrid_loss(out, v, b.x0, b.x_t, b.t, b.eps, s, lam)


def batch_indices(step: int, num_demos: int, cfg: TrainConfig) -> np.ndarray:
    spe = steps_per_epoch(num_demos, cfg.batch_size)
    epoch, k = divmod(step, spe)
    order = np.random.default_rng([cfg.seed, 0, epoch]).permutation(num_demos)
    return order[k * cfg.batch_size:(k + 1) * cfg.batch_size]


@dataclass
class TrainState:
    model: Model
    schedule: NoiseSchedule
    cfg: TrainConfig
    opt: AdamW
    step: int = 0
    num_demos: int = 0


def new_state(model_cfg: ModelConfig, cfg: TrainConfig, schedule: NoiseSchedule | None = None, num_demos: int = 0) -> TrainState:
    model = Model(model_cfg, seed=cfg.seed)
    s = make_linear_schedule(100) if schedule is None else schedule
    return TrainState(model, s, cfg, AdamW(model.params, cfg), 0, num_demos)


def train(
    state: TrainState,
    data: TrainingSet,
    until: int | None = None,
    on_step: Callable[[int, float, float], None] | None = None,
) -> list[float]:
    """Run optimisation steps from ``state.step`` up to ``until`` (the configured total by default)."""
    cfg, mcfg, s = state.cfg, state.model.cfg, state.schedule
    n = len(data)
    state.num_demos = n
    total = cfg.total_steps(n)
    stop = total if until is None else min(until, total)
    losses = []
    while state.step < stop:
        step = state.step
        rng = np.random.default_rng([cfg.seed, 1, step])
        b = make_batch(data, batch_indices(step, n, cfg), mcfg, cfg, s, rng)
        state.opt.zero_grad()
        with ad.Tape():
            loss = batch_loss(state.model.params, mcfg, b, s, cfg.hybrid_lambda)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at step {step}")
            ad.backward(loss)
        lr = lr_at(step, cfg, total)
        state.opt.step(lr)
        state.step += 1
        losses.append(value)
        if on_step is not None:
            on_step(step, value, lr)
    return losses


# ---------------------------------------------------------------- checkpoints


def _pack(header: dict, arrays: list[tuple[str, np.ndarray]]) -> bytes:
    table, off = [], 0
    for name, a in arrays:
        table.append({"name": name, "shape": list(a.shape), "offset": off})
        off += a.size * 8
    header = dict(header, arrays=table, dtype="float64", endianness="little")
    hbytes = json.dumps(header, sort_keys=True).encode()
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
    return MAGIC + struct.pack("<Q", len(hbytes)) + hbytes + body


def _unpack(blob: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    if len(blob) < 16:
        raise CheckpointError("truncated checkpoint header")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    try:
        header = json.loads(blob[16:16 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint header: {e}") from None
    if header.get("version") != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('version')!r}")
    body = memoryview(blob)[16 + hlen:]
    arrays = {}
    for a in header["arrays"]:
        cnt = int(np.prod(a["shape"]))
        if a["offset"] + cnt * 8 > len(body):
            raise CheckpointError(f"array {a['name']} runs past end of file")
        arrays[a["name"]] = np.frombuffer(body, dtype="<f8", count=cnt, offset=a["offset"]).reshape(a["shape"]).astype(np.float64)
    return header, arrays


def save_checkpoint(state: TrainState, path) -> None:
    header = {
        "version": CKPT_VERSION,
        "model": state.model.cfg.to_dict(),
        "train": state.cfg.to_dict(),
        "schedule": state.schedule.to_dict(),
        "seed": state.cfg.seed,
        "step": state.step,
        "adam_t": state.opt.t,
        "num_demos": state.num_demos,
    }
    arrays = []
    for k, p in state.model.params.items():
        arrays.append((f"param/{k}", p.data))
        arrays.append((f"adam_m/{k}", state.opt.m[k]))
        arrays.append((f"adam_v/{k}", state.opt.v[k]))
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(_pack(header, arrays))
    tmp.replace(path)


def load_checkpoint(path) -> TrainState:
    try:
        blob = Path(path).read_bytes()
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint {path} not found") from None
    header, arrays = _unpack(blob)
    try:
        mcfg = ModelConfig.from_dict(header["model"])
        cfg = TrainConfig.from_dict(header["train"])
        sd = header["schedule"]
        s = make_linear_schedule(sd["T"], sd["beta_start"], sd["beta_end"])
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"bad checkpoint config: {e}") from None
    state = new_state(mcfg, cfg, s, header.get("num_demos", 0))
    for k, p in state.model.params.items():
        try:
            w = arrays[f"param/{k}"]
        except KeyError:
            raise CheckpointError(f"checkpoint is missing parameter {k}") from None
        if w.shape != p.shape:
            raise CheckpointError(f"parameter {k}: shape {w.shape} != model {p.shape}")
        p.data = w
        state.opt.m[k] = arrays.get(f"adam_m/{k}", np.zeros_like(w))
        state.opt.v[k] = arrays.get(f"adam_v/{k}", np.zeros_like(w))
    extra = set(n.split("/", 1)[1] for n in arrays if n.startswith("param/")) - set(state.model.params)
    if extra:
        raise CheckpointError(f"checkpoint has unknown parameters {sorted(extra)[:3]}")
    state.step = int(header["step"])
    state.opt.t = int(header.get("adam_t", state.step))
    return state
