"""Diffusion transformer over per-point features with cross-attention to the anchor.

Three shared per-point MLP encoders produce displacement features, action
context features and anchor features. The action tokens (context and
displacement features concatenated) go through ``depth`` blocks of
self-attention, cross-attention to the anchor tokens and a pointwise MLP, each
modulated by adaLN from the timestep embedding. A final adaLN and linear head
give ``eps`` and ``v`` (3 channels each) per action point. There is no
positional encoding, so the network is permutation equivariant in the action
points and invariant to anchor point order.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .variants import Variant, get_variant

FREQ_DIM = 128
MAX_PERIOD = 10_000.0
MLP_RATIO = 4

Params = dict[str, Tensor]


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "CD"
    depth: int = 5
    num_heads: int = 4
    hidden_size: int = 128
    encoder_width: int = 64

    def __post_init__(self):
        get_variant(self.variant)
        if self.hidden_size % self.num_heads:
            raise ValueError(f"hidden_size {self.hidden_size} not divisible by num_heads {self.num_heads}")
        if self.depth < 0 or self.num_heads < 1 or self.encoder_width < 1:
            raise ValueError(f"invalid model config {self}")

    @property
    def spec(self) -> Variant:
        return get_variant(self.variant)

    @property
    def token_width(self) -> int:
        """Width of the action tokens."""
        v = self.spec
        n_feats = 1 if (v.regression or not v.action_context) else 2
        return n_feats * self.hidden_size

    @property
    def out_channels(self) -> int:
        return 3 if self.spec.regression else 6

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{k: d[k] for k in ("variant", "depth", "num_heads", "hidden_size", "encoder_width") if k in d})


# ---------------------------------------------------------------- init


def _xavier(rng, fan_in, fan_out):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


def _linear(p: Params, name: str, rng, fan_in: int, fan_out: int, zero: bool = False) -> None:
    w = np.zeros((fan_in, fan_out)) if zero else _xavier(rng, fan_in, fan_out)
    p[f"{name}.w"] = Tensor(w, requires_grad=True)
    p[f"{name}.b"] = Tensor(np.zeros(fan_out), requires_grad=True)


def init_params(cfg: ModelConfig, seed: int = 0) -> Params:
    """Xavier-uniform weights, zero biases, zero adaLN projections."""
    rng = np.random.default_rng(seed)
    v, H, E, W = cfg.spec, cfg.hidden_size, cfg.encoder_width, cfg.token_width
    p: Params = {}
    encoders = []
    if not v.regression:
        encoders.append("enc_disp")
    if v.action_context or v.regression:
        encoders.append("enc_action")
    if not v.scene:
        encoders.append("enc_anchor")
    for enc in encoders:
        _linear(p, f"{enc}.0", rng, 3, E)
        _linear(p, f"{enc}.1", rng, E, H)
    if v.regression:
        p["cond"] = Tensor(rng.normal(0.0, 0.02, size=H), requires_grad=True)
    else:
        _linear(p, "t_embed.0", rng, FREQ_DIM, H)
        _linear(p, "t_embed.1", rng, H, H)
    n_mod = 6 if v.scene else 9
    for i in range(cfg.depth):
        b = f"blocks.{i}"
        _linear(p, f"{b}.ada", rng, H, n_mod * W, zero=True)
        for nm in ("self.q", "self.k", "self.v", "self.o"):
            _linear(p, f"{b}.{nm}", rng, W, W)
        if not v.scene:
            _linear(p, f"{b}.cross.q", rng, W, W)
            _linear(p, f"{b}.cross.k", rng, H, W)
            _linear(p, f"{b}.cross.v", rng, H, W)
            _linear(p, f"{b}.cross.o", rng, W, W)
        _linear(p, f"{b}.mlp.0", rng, W, MLP_RATIO * W)
        _linear(p, f"{b}.mlp.1", rng, MLP_RATIO * W, W)
    _linear(p, "final.ada", rng, H, 2 * W, zero=True)
    _linear(p, "final.out", rng, W, cfg.out_channels)
    return p


def num_params(p: Params) -> int:
    return sum(t.size for t in p.values())


# ---------------------------------------------------------------- layers


def linear(p: Params, name: str, x):
    return ad.matmul(x, p[f"{name}.w"]) + p[f"{name}.b"]


def encode_points(p: Params, name: str, x):
    """Shared per-point MLP 3 -> encoder_width -> hidden with SiLU."""
    return linear(p, f"{name}.1", ad.silu(linear(p, f"{name}.0", x)))


def timestep_frequencies(t, dim: int = FREQ_DIM) -> np.ndarray:
    """``[cos(t f), sin(t f)]`` with geometric frequencies down to ``1 / MAX_PERIOD``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    half = dim // 2
    freqs = np.exp(-np.log(MAX_PERIOD) * np.arange(half) / half)
    args = t[:, None] * freqs[None]
    return np.concatenate([np.cos(args), np.sin(args)], axis=-1)


def timestep_embedding(p: Params, t):
    return linear(p, "t_embed.1", ad.silu(linear(p, "t_embed.0", timestep_frequencies(t))))


def modulate(x, shift, scale):
    """``LN(x) * (1 + scale) + shift``; shift/scale are per sample, broadcast over points."""
    return ad.layer_norm(x) * (1.0 + scale) + shift


def attention(q, k, v, num_heads: int):
    """Dense multi-head softmax attention; inputs (B, n, W) after projection."""
    B, n, W = q.shape
    m = k.shape[1]
    d = W // num_heads
    q = q.reshape(B, n, num_heads, d).transpose(0, 2, 1, 3)
    k = k.reshape(B, m, num_heads, d).transpose(0, 2, 3, 1)
    v = v.reshape(B, m, num_heads, d).transpose(0, 2, 1, 3)
    w = ad.softmax(ad.matmul(q, k) * (1.0 / np.sqrt(d)), axis=-1)
    return ad.matmul(w, v).transpose(0, 2, 1, 3).reshape(B, n, W)


def _chunk(x, n: int):
    """Split the last axis of a (B, n*W) tensor into n (B, 1, W) pieces."""
    B, total = x.shape
    W = total // n
    x = x.reshape(B, 1, total)
    return [x[:, :, k * W:(k + 1) * W] for k in range(n)]


def dit_block(p: Params, cfg: ModelConfig, i: int, x, anchor, c):
    """One block: adaLN self-attention, cross-attention to ``anchor`` (if any), MLP.

    ``x`` is (B, N, W), ``anchor`` is (B, M, H) or None, ``c`` is (B, H).
    """
    b = f"blocks.{i}"
    n_mod = 9 if anchor is not None else 6
    mods = _chunk(linear(p, f"{b}.ada", ad.silu(c)), n_mod)
    h = cfg.num_heads

    sh, sc, g = mods[0:3]
    y = modulate(x, sh, sc)
    y = attention(linear(p, f"{b}.self.q", y), linear(p, f"{b}.self.k", y), linear(p, f"{b}.self.v", y), h)
    x = x + g * linear(p, f"{b}.self.o", y)

    if anchor is not None:
        sh, sc, g = mods[3:6]
        y = modulate(x, sh, sc)
        y = attention(linear(p, f"{b}.cross.q", y), linear(p, f"{b}.cross.k", anchor), linear(p, f"{b}.cross.v", anchor), h)
        x = x + g * linear(p, f"{b}.cross.o", y)

    sh, sc, g = mods[-3:]
    y = linear(p, f"{b}.mlp.1", ad.gelu(linear(p, f"{b}.mlp.0", modulate(x, sh, sc))))
    return x + g * y


def encode(p: Params, cfg: ModelConfig, x_t, p_a, p_b):
    """Action tokens and anchor tokens (None for scene variants).

    Scene variants treat the anchor points as extra tokens with a zero
    displacement input; their rows are dropped after the head.
    """
    v = cfg.spec
    if v.scene:
        pts = ad.concat([p_a, p_b], axis=-2)
        if x_t is not None:
            x_t = ad.concat([x_t, Tensor(np.zeros(p_b.shape))], axis=-2)
        anchor = None
    else:
        pts = p_a
        anchor = encode_points(p, "enc_anchor", p_b)
    feats = []
    if v.action_context or v.regression:
        feats.append(encode_points(p, "enc_action", pts))
    if not v.regression:
        feats.append(encode_points(p, "enc_disp", x_t))
    tokens = feats[0] if len(feats) == 1 else ad.concat(feats, axis=-1)
    return tokens, anchor


def _check_inputs(cfg, x_t, p_a, p_b):
    if p_a.ndim != 3 or p_a.shape[-1] != 3 or p_b.ndim != 3 or p_b.shape[-1] != 3:
        raise ValueError(f"expected (B, N, 3) action and (B, M, 3) anchor clouds, got {p_a.shape} and {p_b.shape}")
    if p_a.shape[0] != p_b.shape[0]:
        raise ValueError(f"batch mismatch {p_a.shape[0]} vs {p_b.shape[0]}")
    if not cfg.spec.regression and x_t.shape != p_a.shape:
        raise ValueError(f"x_t shape {x_t.shape} != action cloud shape {p_a.shape}")


def forward(p: Params, cfg: ModelConfig, x_t, p_a, p_b, t):
    """Returns ``(eps, v)`` each (B, N, 3), or ``(prediction, None)`` for regression variants.

    Accepts unbatched (N, 3)/(M, 3) inputs with scalar ``t`` as well. ``v`` is
    squashed to [0, 1] with a sigmoid.
    """
    x_t = None if x_t is None else ad.as_tensor(x_t)
    p_a, p_b = ad.as_tensor(p_a), ad.as_tensor(p_b)
    unbatched = p_a.ndim == 2
    if unbatched:
        x_t = None if x_t is None else x_t.reshape(1, *x_t.shape)
        p_a, p_b = p_a.reshape(1, *p_a.shape), p_b.reshape(1, *p_b.shape)
    _check_inputs(cfg, x_t, p_a, p_b)
    B, N = p_a.shape[:2]

    if cfg.spec.regression:
        c = p["cond"].reshape(1, -1) + Tensor(np.zeros((B, 1)))
    else:
        t = np.broadcast_to(np.asarray(t, dtype=float), (B,))
        c = timestep_embedding(p, t)

    x, anchor = encode(p, cfg, x_t, p_a, p_b)
    for i in range(cfg.depth):
        x = dit_block(p, cfg, i, x, anchor, c)
    shift, scale = _chunk(linear(p, "final.ada", ad.silu(c)), 2)
    out = linear(p, "final.out", modulate(x, shift, scale))
    if out.shape[1] != N:
        out = out[:, :N]
    if unbatched:
        out = out.reshape(N, cfg.out_channels)
    if cfg.spec.regression:
        return out, None
    return out[..., :3], ad.sigmoid(out[..., 3:])


class Model:
    """Config plus parameters, with array-in/array-out helpers for sampling."""

    def __init__(self, cfg: ModelConfig, params: Params | None = None, seed: int = 0):
        self.cfg = cfg
        self.params = init_params(cfg, seed) if params is None else params

    @property
    def variant(self) -> Variant:
        return self.cfg.spec

    def __call__(self, x_t, p_a, p_b, t):
        return forward(self.params, self.cfg, x_t, p_a, p_b, t)

    def denoise(self, x_t, p_a, p_b, t):
        """Inference forward without recording: returns numpy ``(eps, v)``."""
        with ad.no_grad():
            eps, v = forward(self.params, self.cfg, x_t, p_a, p_b, t)
        return eps.data, None if v is None else v.data
