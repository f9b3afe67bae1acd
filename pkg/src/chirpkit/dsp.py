"""Log-mel spectrograms under the two model-input configurations.

Pinned conventions (regression-tested via goldens): periodic Hann window,
HTK mel scale, natural log with floor 1e-10, no normalization.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .audio_io import AudioClip
from .errors import ConfigError


@dataclass(frozen=True)
class MelConfig:
    n_mels: int
    sample_rate: int
    win_length: int
    hop_length: int
    n_fft: int
    fmin: float = 50.0
    fmax: float = None
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.fmax is None:
            object.__setattr__(self, "fmax", self.sample_rate / 2)
        if self.win_length > self.n_fft:
            raise ConfigError(f"win_length {self.win_length} > n_fft {self.n_fft}")
        if self.hop_length < 1 or self.n_mels < 1:
            raise ConfigError("hop_length and n_mels must be >= 1")
        if not (0 <= self.fmin < self.fmax <= self.sample_rate / 2):
            raise ConfigError(
                f"need 0 <= fmin < fmax <= rate/2, got fmin={self.fmin} fmax={self.fmax}"
            )

    def n_frames(self, n_samples: int) -> int:
        return (n_samples - self.win_length) // self.hop_length + 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MelConfig":
        return cls(**d)


@dataclass(frozen=True)
class MelSpectrogram:
    """Log-mel energies, shape (n_mels, n_frames)."""

    values: np.ndarray
    config: MelConfig

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


_PRESETS = {
    "passt": dict(n_mels=128, sample_rate=16000, win_length=400, hop_length=160, n_fft=512),
    "psla": dict(n_mels=128, sample_rate=32000, win_length=800, hop_length=320, n_fft=1024),
}


def preset(name: str) -> MelConfig:
    """The two model-input mel configurations, by name."""
    if name not in _PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(_PRESETS)}")
    return MelConfig(**_PRESETS[name])


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_edges(cfg: MelConfig) -> np.ndarray:
    """The n_mels+2 Hz breakpoints: filter m spans (edges[m], edges[m+2]),
    peaking at edges[m+1]."""
    return mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2))


def mel_filterbank(cfg: MelConfig) -> np.ndarray:
    """Triangular mel filterbank, shape (n_mels, n_fft//2+1), peak 1.0.

    Filters too narrow to catch any FFT bin (possible at low frequency with
    many bands) get weight 1.0 at the bin nearest their center so every
    filter stays live.
    """
    edges = mel_edges(cfg)
    bin_freqs = np.arange(cfg.n_fft // 2 + 1) * cfg.sample_rate / cfg.n_fft
    fb = np.zeros((cfg.n_mels, len(bin_freqs)), dtype=np.float64)
    for m in range(cfg.n_mels):
        lo, center, hi = edges[m], edges[m + 1], edges[m + 2]
        up = (bin_freqs - lo) / (center - lo)
        down = (hi - bin_freqs) / (hi - center)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
        if fb[m].max() == 0.0:
            fb[m, np.argmin(np.abs(bin_freqs - center))] = 1.0
    return fb


def _hann_periodic(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def mel_spectrogram(clip: AudioClip, cfg: MelConfig) -> MelSpectrogram:
    """STFT power -> mel filterbank -> natural log with floor."""
    if clip.sample_rate != cfg.sample_rate:
        raise ConfigError(
            f"clip rate {clip.sample_rate} != config rate {cfg.sample_rate}"
        )
    if len(clip) < cfg.win_length:
        raise ValueError(
            f"clip too short: {len(clip)} samples < win_length {cfg.win_length}"
        )

    x = clip.samples.astype(np.float64)
    frames = sliding_window_view(x, cfg.win_length)[:: cfg.hop_length]
    window = _hann_periodic(cfg.win_length)
    spectrum = np.fft.rfft(frames * window, n=cfg.n_fft, axis=1)
    power = spectrum.real**2 + spectrum.imag**2
    mel_energy = power @ mel_filterbank(cfg).T
    values = np.log(mel_energy + cfg.log_floor).T.astype(np.float32)
    return MelSpectrogram(values=values, config=cfg)


def write_golden(path: str, mel: MelSpectrogram) -> None:
    """Persist a spectrogram as raw little-endian float32 + JSON sidecar."""
    path = Path(path)
    mel.values.astype("<f4").tofile(path)
    sidecar = {"shape": list(mel.values.shape), "config": mel.config.to_dict()}
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(sidecar, indent=2) + "\n", encoding="utf-8"
    )


def read_golden(path: str) -> MelSpectrogram:
    path = Path(path)
    sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text(encoding="utf-8"))
    values = np.fromfile(path, dtype="<f4").reshape(sidecar["shape"])
    return MelSpectrogram(values=values, config=MelConfig.from_dict(sidecar["config"]))
