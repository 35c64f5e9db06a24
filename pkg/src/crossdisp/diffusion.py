"""DDPM over per-point displacement fields with learned variance interpolation.

Timesteps index noised states ``t = 1..T``; ``t = 0`` is clean data with
``alpha_bar[0] = 1``. All schedule arrays therefore have length ``T + 1`` and
are indexed directly by ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .dataset import decode_prediction, frame_inputs

BETA_START_T1000 = 1e-4
BETA_END_T1000 = 0.02
BETA_MAX = 0.999
HYBRID_LAMBDA = 1e-3
LOG_2PI = float(np.log(2 * np.pi))


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    betas: np.ndarray  # [0] unused (0), [t] = beta_t
    alphas: np.ndarray
    alpha_bars: np.ndarray  # [0] = 1
    posterior_variances: np.ndarray  # [1] = 0
    beta_start: float
    beta_end: float

    @property
    def log_posterior_variance_clipped(self) -> np.ndarray:
        """log of the posterior variance with the zero at ``t = 1`` replaced by ``t = 2``'s value."""
        pv = self.posterior_variances.copy()
        pv[1] = pv[2] if self.T > 1 else self.betas[1]
        pv[0] = pv[1]
        return np.log(pv)

    def posterior_coefs(self, t):
        """Coefficients of ``x0`` and ``x_t`` in the true posterior mean of ``x_{t-1}``."""
        ab, ab_prev = self.alpha_bars[t], self.alpha_bars[np.asarray(t) - 1]
        c0 = self.betas[t] * np.sqrt(ab_prev) / (1.0 - ab)
        ct = (1.0 - ab_prev) * np.sqrt(self.alphas[t]) / (1.0 - ab)
        return c0, ct

    def to_dict(self) -> dict:
        return {"T": self.T, "beta_start": self.beta_start, "beta_end": self.beta_end}


def make_linear_schedule(T: int = 100, beta_start: float | None = None, beta_end: float | None = None) -> NoiseSchedule:
    """Linear betas; endpoints default to the T=1000 DDPM values rescaled by 1000/T.

    Rescaled defaults are capped at ``BETA_MAX`` so very short schedules stay valid.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    scale = 1000.0 / T
    b0 = min(BETA_START_T1000 * scale, BETA_MAX) if beta_start is None else beta_start
    b1 = min(BETA_END_T1000 * scale, BETA_MAX) if beta_end is None else beta_end
    if not (0 < b0 < 1 and 0 < b1 < 1 and b0 <= b1):
        raise ValueError(f"invalid beta endpoints {b0}, {b1}")
    betas = np.concatenate([[0.0], np.linspace(b0, b1, T)])
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    post = np.zeros(T + 1)
    post[1:] = betas[1:] * (1.0 - alpha_bars[:-1]) / (1.0 - alpha_bars[1:])
    return NoiseSchedule(T, betas, alphas, alpha_bars, post, float(b0), float(b1))


def _tcol(s: NoiseSchedule, arr: np.ndarray, t, ndim: int):
    """Gather per-sample schedule values for (batched) ``t`` shaped to broadcast."""
    t = np.asarray(t)
    vals = arr[t]
    return vals.reshape(vals.shape + (1,) * (ndim - vals.ndim)) if t.ndim else vals


def _check_t(t, s: NoiseSchedule, lo: int) -> None:
    t = np.asarray(t)
    if np.any(t < lo) or np.any(t > s.T):
        raise ValueError(f"timestep out of range [{lo}, {s.T}]: {t}")


def q_sample(x0, t, eps, s: NoiseSchedule) -> np.ndarray:
    """``sqrt(ab_t) x0 + sqrt(1 - ab_t) eps``; batched ``t`` indexes the leading axis."""
    x0 = np.asarray(x0, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if x0.shape != eps.shape:
        raise ValueError(f"q_sample: shape mismatch {x0.shape} vs {eps.shape}")
    _check_t(t, s, 0)
    ab = _tcol(s, s.alpha_bars, t, x0.ndim)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def model_mean(x_t, t, eps_pred, s: NoiseSchedule):
    """Posterior mean implied by a noise prediction. Works on arrays or Tensors."""
    nd = x_t.ndim
    c1 = 1.0 / np.sqrt(_tcol(s, s.alphas, t, nd))
    c2 = _tcol(s, s.betas, t, nd) / np.sqrt(1.0 - _tcol(s, s.alpha_bars, t, nd))
    return c1 * (x_t - c2 * eps_pred)


def model_log_variance(v, t, s: NoiseSchedule):
    """``v log(beta_t) + (1 - v) log(posterior variance)``, componentwise."""
    nd = v.ndim
    log_b = _tcol(s, np.log(np.maximum(s.betas, 1e-300)), t, nd)
    log_p = _tcol(s, s.log_posterior_variance_clipped, t, nd)
    return v * log_b + (1.0 - v) * log_p


def reverse_step(x_t, t: int, eps_pred, v_pred, s: NoiseSchedule, noise) -> np.ndarray:
    """One ancestral step ``x_t -> x_{t-1}``; no noise is added at ``t = 1``."""
    if not 1 <= int(t) <= s.T:
        raise ValueError(f"timestep {t} out of range [1, {s.T}]")
    x_t = np.asarray(x_t, dtype=float)
    mu = model_mean(x_t, t, np.asarray(eps_pred, dtype=float), s)
    if t == 1:
        return mu
    logvar = model_log_variance(np.asarray(v_pred, dtype=float), t, s)
    return mu + np.exp(0.5 * logvar) * np.asarray(noise, dtype=float)


def posterior_mean_variance(x0, x_t, t, s: NoiseSchedule):
    nd = np.ndim(x_t)
    c0, ct = s.posterior_coefs(np.asarray(t))
    c0 = np.reshape(c0, np.shape(c0) + (1,) * (nd - np.ndim(c0)))
    ct = np.reshape(ct, np.shape(ct) + (1,) * (nd - np.ndim(ct)))
    mean = c0 * np.asarray(x0) + ct * np.asarray(x_t)
    return mean, _tcol(s, s.log_posterior_variance_clipped, t, nd)


def gaussian_kl(mean1, logvar1, mean2, logvar2):
    """Elementwise KL(N(mean1, e^logvar1) || N(mean2, e^logvar2)); Tensor-aware in the second argument pair."""
    return 0.5 * (-1.0 + logvar2 - logvar1 + ad.exp(logvar1 - logvar2) + ad.square(mean1 - mean2) * ad.exp(-logvar2))


def gaussian_nll(x, mean, logvar):
    return 0.5 * (LOG_2PI + logvar + ad.square(x - mean) * ad.exp(-logvar))


def _batch_mean(x: ad.Tensor) -> ad.Tensor:
    """Mean over all non-batch axes, giving one value per sample."""
    return ad.mean(x.reshape(x.shape[0], -1), axis=1)


def hybrid_loss(eps_pred, v_pred, x0, x_t, t, eps, s: NoiseSchedule, lam: float = HYBRID_LAMBDA, mean_eps=None, reduce: bool = True):
    """Noise MSE plus ``lam`` times the variational bound term.

    The bound term trains only ``v_pred``: the model mean is computed from
    ``mean_eps`` (``eps_pred`` detached by default). It is the Gaussian KL to the
    true posterior for ``t >= 2`` and the Gaussian NLL of ``x0`` at ``t = 1``.
    Inputs carry a leading batch axis and ``t`` is one step per sample
    (an unbatched single sample is also accepted). Losses are in nats,
    averaged over elements.
    """
    eps_pred, v_pred = ad.as_tensor(eps_pred), ad.as_tensor(v_pred)
    x0, x_t, eps = (np.asarray(a, dtype=float) for a in (x0, x_t, eps))
    for name, a in (("v_pred", v_pred.shape), ("x0", x0.shape), ("x_t", x_t.shape), ("eps", eps.shape)):
        if a != eps_pred.shape:
            raise ValueError(f"hybrid_loss: {name} shape {a} != eps_pred shape {eps_pred.shape}")
    _check_t(t, s, 1)
    t = np.asarray(t)
    if t.ndim == 0:
        out = hybrid_loss(
            eps_pred.reshape((1,) + eps_pred.shape), v_pred.reshape((1,) + v_pred.shape),
            x0[None], x_t[None], t[None], eps[None], s, lam,
            None if mean_eps is None else np.asarray(mean_eps)[None], reduce,
        )
        return out

    mse = _batch_mean(ad.square(eps_pred - eps))
    if lam == 0.0:
        return ad.mean(mse) if reduce else mse

    frozen = eps_pred.data if mean_eps is None else np.asarray(mean_eps, dtype=float)
    mu = model_mean(x_t, t, frozen, s)
    logvar = model_log_variance(v_pred, t, s)
    true_mean, true_logvar = posterior_mean_variance(x0, x_t, t, s)
    kl = _batch_mean(gaussian_kl(true_mean, true_logvar, mu, logvar))
    nll = _batch_mean(gaussian_nll(x0, mu, logvar))
    first = (t == 1).astype(float)
    vb = kl * (1.0 - first) + nll * first
    per_sample = mse + lam * vb
    return ad.mean(per_sample) if reduce else per_sample


def sample_loop(denoise, shape, s: NoiseSchedule, rng: np.random.Generator) -> np.ndarray:
    """Ancestral sampling from ``N(0, I)`` at ``t = T`` down to ``t = 0``.

    ``denoise(x_t, t)`` returns ``(eps_pred, v_pred)`` as arrays. Exactly ``T``
    reverse steps run; noise for step ``t`` is drawn even at ``t = 1`` (and
    discarded) so the random stream does not depend on branch structure.
    """
    x = rng.standard_normal(shape)
    for t in range(s.T, 0, -1):
        eps_pred, v_pred = denoise(x, t)
        noise = rng.standard_normal(shape)
        x = reverse_step(x, t, eps_pred, v_pred, s, noise)
    return x


def sample(model, p_a, p_b, s: NoiseSchedule, seed: int, n_samples: int | None = None) -> np.ndarray:
    """World-frame goal clouds predicted for the action cloud ``p_a`` placed against ``p_b``.

    The clouds are framed per the model's variant, a displacement (or goal
    position) field is denoised from pure noise, and the result is mapped
    back to the world frame. With ``n_samples`` the samples run as one batch
    but each draws its noise from its own child seed, so sample ``j`` does not
    depend on how many others are drawn alongside it (up to float rounding of
    batched matrix products). Returns (N, 3), or (n_samples, N, 3).
    """
    variant = model.variant
    pa, pb, info = frame_inputs(variant, p_a, p_b)
    n = 1 if n_samples is None else int(n_samples)
    if n < 1:
        raise ValueError(f"n_samples must be >= 1, got {n}")
    pa_b = np.broadcast_to(pa, (n,) + pa.shape)
    pb_b = np.broadcast_to(pb, (n,) + pb.shape)
    if variant.regression:
        x0 = model.denoise(None, pa_b, pb_b, np.zeros(n, dtype=int))[0]
    else:
        rngs = [np.random.default_rng(ss) for ss in np.random.SeedSequence(seed).spawn(n)]

        def draw():
            return np.stack([r.standard_normal(pa.shape) for r in rngs])

        x0 = draw()
        for t in range(s.T, 0, -1):
            eps_pred, v_pred = model.denoise(x0, pa_b, pb_b, np.full(n, t))
            x0 = reverse_step(x0, t, eps_pred, v_pred, s, draw())
    out = np.stack([decode_prediction(variant, x, p_a, info) for x in x0])
    return out[0] if n_samples is None else out
