"""Waveform-level MixUp and background-noise mixing.

Both run on raw waveforms before spectrogram conversion.  Under
distillation the trainer feeds the identical augmented spectrogram to
teacher and student (consistent teaching), so augmentation lives entirely
upstream of the models.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio_io import AudioClip


@dataclass(frozen=True)
class AugmentConfig:
    mixup_prob: float = 0.6
    mixup_alpha: float = 0.2
    noise_prob: float = 0.5
    noise_snr_db: tuple = (-5.0, 20.0)
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.mixup_prob <= 1.0 and 0.0 <= self.noise_prob <= 1.0):
            raise ValueError("probabilities must be in [0, 1]")
        if self.mixup_alpha <= 0:
            raise ValueError("mixup_alpha must be positive")
        lo, hi = self.noise_snr_db
        if lo > hi:
            raise ValueError(f"empty SNR interval {self.noise_snr_db}")


def mixup(x1: AudioClip, y1: np.ndarray, x2: AudioClip, y2: np.ndarray, lam: float):
    """Convex combination of two waveforms and their label vectors."""
    if len(x1) != len(x2) or x1.sample_rate != x2.sample_rate:
        raise ValueError("mixup inputs must share length and sample rate")
    y1 = np.asarray(y1, dtype=np.float64)
    y2 = np.asarray(y2, dtype=np.float64)
    if y1.shape != y2.shape:
        raise ValueError("mixup label vectors must share the vocabulary")
    if lam == 1.0:
        return x1, y1
    if lam == 0.0:
        return x2, y2
    samples = lam * x1.samples + (1.0 - lam) * x2.samples
    clip = AudioClip(samples.astype(np.float32), x1.sample_rate, x1.source_path)
    return clip, lam * y1 + (1.0 - lam) * y2


def draw_lam(alpha: float, rng: np.random.Generator) -> float:
    """Beta(alpha, alpha) mixing ratio."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return float(rng.beta(alpha, alpha))


def mix_noise(
    x: AudioClip, noise: AudioClip, snr_db: float, rng: np.random.Generator = None
) -> AudioClip:
    """Add a random aligned noise window at the requested SNR.

    Gain g satisfies 20*log10(rms(x) / (g*rms(window))) = snr_db; the sum is
    clipped to [-1, 1].  Zero-RMS signal (or noise) skips the augmentation.
    """
    if len(noise) < len(x):
        raise ValueError("noise must be at least as long as the signal")
    rms_x = float(np.sqrt(np.mean(x.samples.astype(np.float64) ** 2)))
    if rms_x == 0.0:
        return x
    if rng is None:
        rng = np.random.default_rng()
    offset = int(rng.integers(0, len(noise) - len(x) + 1))
    window = noise.samples[offset : offset + len(x)].astype(np.float64)
    rms_n = float(np.sqrt(np.mean(window**2)))
    if rms_n == 0.0:
        return x
    g = rms_x / (rms_n * 10.0 ** (snr_db / 20.0))
    mixed = np.clip(x.samples.astype(np.float64) + g * window, -1.0, 1.0)
    return AudioClip(mixed.astype(np.float32), x.sample_rate, x.source_path)


def item_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    """Per-item stream derived from (seed, epoch, index); worker count and
    batch partitioning therefore never change results."""
    return np.random.default_rng([seed & 0xFFFFFFFF, epoch, index])


def apply(
    batch: list,
    cfg: AugmentConfig,
    epoch: int = 0,
    noise_bank: list = None,
    item_indices: list = None,
) -> list:
    """Augment a batch of (AudioClip, label vector) pairs.

    Per item: MixUp against another uniformly drawn item with probability
    mixup_prob, then independently noise mixing with probability
    noise_prob and SNR uniform over cfg.noise_snr_db.  Partners are the
    original (pre-augmentation) batch items.  item_indices are the
    dataset-level indices feeding the per-item RNG streams; they default to
    batch positions.
    """
    if item_indices is None:
        item_indices = range(len(batch))
    out = []
    for i, (x, y) in enumerate(batch):
        rng = item_rng(cfg.seed, epoch, int(item_indices[i]))
        xi, yi = x, np.asarray(y, dtype=np.float64)
        if rng.random() < cfg.mixup_prob and len(batch) > 1:
            j = int(rng.integers(0, len(batch) - 1))
            if j >= i:
                j += 1
            lam = draw_lam(cfg.mixup_alpha, rng)
            xi, yi = mixup(xi, yi, batch[j][0], batch[j][1], lam)
        if rng.random() < cfg.noise_prob and noise_bank:
            noise = noise_bank[int(rng.integers(0, len(noise_bank)))]
            snr = float(rng.uniform(*cfg.noise_snr_db))
            xi = mix_noise(xi, noise, snr, rng)
        out.append((xi, yi))
    return out
