from dataclasses import dataclass
from typing import TYPE_CHECKING, List, Sequence, Tuple, Union

import numpy as np

from MaskUtil import MaskError
from Util import setup_logger
from numerics import ops
from numerics.adam import AdamState, adam_step, clip_grad_norm
from numerics.tensor import Tensor, ShapeError, backward

if TYPE_CHECKING:
    from EpsilonModel import EpsilonModel

logger = setup_logger('DiffusionUtil')

RngLike = Union[np.random.Generator, Sequence[np.random.Generator]]


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step tables for t = 1..T, stored at index t - 1."""
    T: int
    beta_start: float
    beta_end: float
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    sigmas: np.ndarray

    def beta(self, t: int) -> float:
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        return float(self.alphas[t - 1])

    def alpha_bar(self, t: int) -> float:
        # ᾱ_0 = 1: step 0 is the clean image
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])

    def sigma(self, t: int) -> float:
        # the last reverse step returns the mean itself
        return 0.0 if t == 1 else float(self.sigmas[t - 1])


def make_linear_schedule(T: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    if T < 2:
        raise ValueError(f"noise schedule needs T >= 2, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError(f"noise schedule needs 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alphas = 1.0 - betas
    return NoiseSchedule(T=T, beta_start=beta_start, beta_end=beta_end, betas=betas, alphas=alphas,
                         alpha_bars=np.cumprod(alphas), sigmas=np.sqrt(betas))


def time_embedding_batch(ts, dim: int) -> np.ndarray:
    """Sinusoidal embeddings, one row per step: interleaved (sin(t·ω_i), cos(t·ω_i)), ω_i = 10000^(-2i/dim)."""
    if dim <= 0 or dim % 2:
        raise ValueError(f"time embedding dimension must be positive and even, got {dim}")
    ts = np.asarray(ts, dtype=np.float64).reshape(-1)
    if np.any(ts < 1):
        raise ValueError(f"time embedding is defined for t >= 1, got {ts.min():g}")
    omegas = 10000.0 ** (-2.0 * np.arange(dim // 2) / dim)
    angles = ts[:, None] * omegas[None, :]
    out = np.empty((ts.size, dim), dtype=np.float64)
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out.astype(np.float32)


def time_embedding(t: int, dim: int) -> np.ndarray:
    return time_embedding_batch([t], dim)[0]


def diffuse_to(x0: np.ndarray, t: int, noise: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Closed-form marginal x_t = sqrt(ᾱ_t)·x0 + sqrt(1 - ᾱ_t)·noise."""
    if noise.shape != x0.shape:
        raise ShapeError(f"diffuse_to: image shape {x0.shape} and noise shape {noise.shape} do not conform")
    if not 0 <= t <= schedule.T:
        raise ValueError(f"diffuse_to: step {t} outside [0, {schedule.T}]")
    if t == 0:
        return x0.copy()
    alpha_bar = schedule.alpha_bar(t)
    return (np.sqrt(alpha_bar) * x0 + np.sqrt(1.0 - alpha_bar) * noise).astype(x0.dtype, copy=False)


def _rng_list(rng: RngLike, batch: int) -> List[np.random.Generator]:
    rngs = [rng] if isinstance(rng, np.random.Generator) else list(rng)
    if len(rngs) == 1 and batch > 1:
        return rngs * batch
    if len(rngs) != batch:
        raise ValueError(f"{len(rngs)} rng streams for a batch of {batch}")
    return rngs


def standard_normal(rng: RngLike, shape: Tuple[int, ...]) -> np.ndarray:
    """Draw a (B, ...) batch, row b from stream b, so each row depends only on its own stream."""
    rngs = _rng_list(rng, shape[0])
    if len(set(map(id, rngs))) == 1:
        return rngs[0].standard_normal(shape, dtype=np.float32)
    return np.stack([r.standard_normal(shape[1:], dtype=np.float32) for r in rngs])


def denoise_step(x_t: np.ndarray, t: int, model: 'EpsilonModel', schedule: NoiseSchedule, rng: RngLike) -> np.ndarray:
    """One ancestral step x_t -> x_{t-1} on a (B, C, H, W) batch."""
    if not 1 <= t <= schedule.T:
        raise ValueError(f"denoise_step: step {t} outside [1, {schedule.T}]")
    eps = model.predict(x_t, t)
    if eps.shape != x_t.shape:
        raise ShapeError(f"denoise_step: prediction shape {eps.shape} and input shape {x_t.shape} do not conform")
    beta, alpha = schedule.beta(t), schedule.alpha(t)
    mean = (x_t - (beta / np.sqrt(1.0 - schedule.alpha_bar(t))) * eps) / np.sqrt(alpha)
    sigma = schedule.sigma(t)
    if sigma > 0.0:
        mean = mean + sigma * standard_normal(rng, x_t.shape)
    return mean.astype(np.float32, copy=False)


def denoise_from(x_t: np.ndarray, t_start: int, model: 'EpsilonModel', schedule: NoiseSchedule, rng: RngLike) -> np.ndarray:
    """Run the reverse chain from step t_start down to 0 and clamp to the image range."""
    x = x_t
    for t in range(t_start, 0, -1):
        x = denoise_step(x, t, model, schedule, rng)
    return np.clip(x, -1.0, 1.0)


def sample_batch(model: 'EpsilonModel', schedule: NoiseSchedule, shape: Tuple[int, ...], rng: RngLike) -> np.ndarray:
    x_T = standard_normal(rng, tuple(shape))
    return denoise_from(x_T, schedule.T, model, schedule, rng)


def sample(model: 'EpsilonModel', schedule: NoiseSchedule, shape: Tuple[int, int, int], rng: np.random.Generator) -> np.ndarray:
    return sample_batch(model, schedule, (1, *shape), rng)[0]


def _check_mask(mask: np.ndarray):
    if not np.all((mask == 0) | (mask == 1)):
        raise MaskError("inpaint: mask must be binary (1 = keep, 0 = inpaint)")


def inpaint_batch(x_orig: np.ndarray, masks: np.ndarray, model: 'EpsilonModel', schedule: NoiseSchedule,
                  rng: RngLike) -> np.ndarray:
    """
    Inpaint a (B, C, H, W) batch; masks are (B, H, W) with 1 = keep and 0 = inpaint.

    Each step diffuses the original to t - 1, denoises the running image from t, and keeps the diffused
    original wherever the mask is 1. The reverse chain draws from the given streams exactly as sampling
    does; the per-step noise for the original comes from child streams spawned off them.
    """
    if masks.shape != (x_orig.shape[0], *x_orig.shape[2:]):
        raise ShapeError(f"inpaint: mask shape {masks.shape} and image shape {x_orig.shape} do not conform")
    _check_mask(masks)
    rngs = _rng_list(rng, x_orig.shape[0])
    lift_rngs = [r.spawn(1)[0] for r in rngs]
    keep = np.broadcast_to(masks[:, None, :, :].astype(bool), x_orig.shape)

    x = standard_normal(rngs, x_orig.shape)
    for t in range(schedule.T, 0, -1):
        if t - 1 > 0:
            known = diffuse_to(x_orig, t - 1, standard_normal(lift_rngs, x_orig.shape), schedule)
        else:
            known = x_orig
        x = denoise_step(x, t, model, schedule, rngs)
        x = np.where(keep, known, x)
    return np.where(keep, x_orig, np.clip(x, -1.0, 1.0)).astype(np.float32, copy=False)


def inpaint(x_orig: np.ndarray, mask: np.ndarray, model: 'EpsilonModel', schedule: NoiseSchedule,
            rng: np.random.Generator) -> np.ndarray:
    """Inpaint one (C, H, W) image under an (H, W) mask."""
    if mask.shape != x_orig.shape[1:]:
        raise ShapeError(f"inpaint: mask shape {mask.shape} and image shape {x_orig.shape} do not conform")
    return inpaint_batch(x_orig[None], mask[None], model, schedule, [rng])[0]


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 32
    learning_rate: float = 2e-3
    T: int = 200
    beta_start: float = 5e-4
    beta_end: float = 0.1
    seed: int = 0
    grad_clip: float = 1.0
    log_every: int = 25

    def validate(self):
        if self.epochs < 0 or self.batch_size <= 0 or self.learning_rate <= 0 or self.grad_clip <= 0:
            raise ValueError(f"train config needs non-negative epochs and positive batch_size, learning_rate, grad_clip: {self}")
        if self.T < 2:
            raise ValueError(f"train.T must be at least 2, got {self.T}")

    def schedule(self) -> NoiseSchedule:
        return make_linear_schedule(self.T, self.beta_start, self.beta_end)


def train(model: 'EpsilonModel', images: np.ndarray, config: TrainConfig) -> Tuple['EpsilonModel', List[float]]:
    """
    Fit ε_θ with the simplified objective: mean squared error between drawn noise and the prediction at a
    uniformly drawn step. Returns the model and the mean batch loss of every epoch.
    """
    config.validate()
    images = np.asarray(images, dtype=np.float32)
    if images.ndim != 4 or images.shape[0] == 0:
        raise ValueError(f"train needs a non-empty (N, C, H, W) image stack, got shape {images.shape}")
    schedule = config.schedule()
    rng = np.random.default_rng(config.seed)
    state = AdamState.for_params(model.params, lr=config.learning_rate)
    sqrt_ab = np.sqrt(schedule.alpha_bars).astype(np.float32)
    sqrt_1mab = np.sqrt(1.0 - schedule.alpha_bars).astype(np.float32)

    logger.info(f"train. images: {images.shape}, epochs: {config.epochs}, batch_size: {config.batch_size}, "
                f"T: {config.T}, parameters: {model.num_parameters()}")
    losses = []
    n = images.shape[0]
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        batch_losses = []
        for batch_index, start in enumerate(range(0, n, config.batch_size)):
            x0 = images[order[start:start + config.batch_size]]
            t = rng.integers(1, config.T + 1, size=x0.shape[0])
            noise = rng.standard_normal(x0.shape, dtype=np.float32)
            x_t = sqrt_ab[t - 1, None, None, None] * x0 + sqrt_1mab[t - 1, None, None, None] * noise

            loss = ops.mse_loss(model(Tensor(x_t), t), Tensor(noise))
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDivergedError(f"train: non-finite loss at epoch {epoch + 1}, batch {batch_index + 1}")
            grads = backward(loss)
            clip_grad_norm(grads, config.grad_clip)
            adam_step(model.params, grads, state)
            batch_losses.append(value)

        losses.append(float(np.mean(batch_losses)))
        if (epoch + 1) % config.log_every == 0 or epoch == 0 or epoch + 1 == config.epochs:
            logger.info(f"train. epoch {epoch + 1}/{config.epochs}, loss: {losses[-1]:.5f}")
    return model, losses
