"""3-second chunking and bird-activity segment selection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio_io import AudioClip
from .dsp import MelConfig, mel_edges, mel_spectrogram

CHUNK_SECONDS = 3.0

# Band the energy detector listens to, Hz.
DETECTOR_BAND = (500.0, 10000.0)


@dataclass(frozen=True)
class Chunk:
    parent: str
    start_time: float
    samples: AudioClip

    @property
    def chunk_id(self) -> str:
        return f"{self.parent}:{self.start_time:.3f}"


@dataclass(frozen=True)
class DetectorDecision:
    chunk_id: str
    score: float
    keep: bool


def chunk(clip: AudioClip, stride: float = CHUNK_SECONDS, parent: str = "") -> list:
    """Cut a clip into 3 s chunks.

    A tail shorter than 3 s becomes one final chunk ending exactly at the
    clip end (overlapping its predecessor).  Clips shorter than 3 s are
    tiled up to 3 s and yield a single chunk.
    """
    if len(clip) == 0:
        raise ValueError("cannot chunk an empty clip")
    rate = clip.sample_rate
    n_chunk = int(round(CHUNK_SECONDS * rate))
    n_stride = int(round(stride * rate))
    if n_stride < 1:
        raise ValueError(f"stride too small: {stride}")

    if len(clip) < n_chunk:
        reps = int(np.ceil(n_chunk / len(clip)))
        tiled = np.tile(clip.samples, reps)[:n_chunk]
        looped = AudioClip(tiled, rate, clip.source_path)
        return [Chunk(parent=parent, start_time=0.0, samples=looped)]

    chunks = []
    start = 0
    covered_end = 0
    while start + n_chunk <= len(clip):
        piece = AudioClip(clip.samples[start : start + n_chunk], rate, clip.source_path)
        chunks.append(Chunk(parent=parent, start_time=start / rate, samples=piece))
        covered_end = start + n_chunk
        start += n_stride
    if covered_end < len(clip):
        tail_start = len(clip) - n_chunk
        piece = AudioClip(clip.samples[tail_start:], rate, clip.source_path)
        chunks.append(Chunk(parent=parent, start_time=tail_start / rate, samples=piece))
    return chunks


def _band_rows(cfg: MelConfig) -> np.ndarray:
    centers = mel_edges(cfg)[1:-1]
    lo, hi = DETECTOR_BAND
    return (centers >= lo) & (centers <= hi)


def _frame_peaks(clip: AudioClip, cfg: MelConfig) -> np.ndarray:
    """Per-frame peak log-mel energy restricted to the detector band."""
    mel = mel_spectrogram(clip, cfg)
    rows = _band_rows(cfg)
    if not rows.any():
        rows = np.ones(cfg.n_mels, dtype=bool)
    return mel.values[rows].max(axis=0)


def recording_stats(clip: AudioClip, cfg: MelConfig) -> tuple:
    """(median, MAD) of banded per-frame peaks over the whole recording."""
    peaks = _frame_peaks(clip, cfg)
    med = float(np.median(peaks))
    mad = float(np.median(np.abs(peaks - med)))
    return med, mad


def energy_detector(
    chunk: Chunk, cfg: MelConfig, k: float = 3.0, file_stats: tuple = None
) -> DetectorDecision:
    """Keep a chunk iff its banded peak exceeds median + k*MAD of the
    parent recording.

    file_stats comes from recording_stats on the parent; when omitted the
    chunk is treated as its own (single-chunk) recording.  The rule works
    on log energies, so the keep mask is invariant to global gain.
    """
    med, mad = file_stats if file_stats is not None else recording_stats(chunk.samples, cfg)
    peak = float(_frame_peaks(chunk.samples, cfg).max())
    if mad == 0.0:
        # uniform recordings are never filtered
        return DetectorDecision(chunk_id=chunk.chunk_id, score=1.0, keep=True)
    threshold = med + k * mad
    z = (peak - threshold) / mad
    score = float(1.0 / (1.0 + np.exp(-np.clip(z, -500, 500))))
    return DetectorDecision(chunk_id=chunk.chunk_id, score=score, keep=peak >= threshold)


def detect_chunks(
    clip: AudioClip,
    cfg: MelConfig,
    k: float = 3.0,
    stride: float = CHUNK_SECONDS,
    parent: str = "",
) -> list:
    """Chunk a recording and score every chunk against recording-level
    statistics (computed once)."""
    stats = recording_stats(clip, cfg)
    return [energy_detector(c, cfg, k, stats) for c in chunk(clip, stride, parent)]


def external_detector_filter(chunks: list, scores: list, threshold: float = 0.3) -> list:
    """Retain chunks whose externally supplied score crosses threshold."""
    if len(chunks) != len(scores):
        raise ValueError(f"{len(chunks)} chunks but {len(scores)} scores")
    return [c for c, s in zip(chunks, scores) if s >= threshold]
