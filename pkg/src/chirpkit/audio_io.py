"""WAV decoding, sinc resampling, and dataset manifests.

Only RIFF/WAVE containers with 16-bit PCM or 32-bit float payloads are
supported; anything else is the caller's job to convert first.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DecodeError, ManifestError, UnsupportedFormatError

WAVE_FORMAT_PCM = 1
WAVE_FORMAT_IEEE_FLOAT = 3

SPLITS = ("train", "val", "test")

MANIFEST_HEADER = ["filepath", "primary_label", "secondary_labels", "split"]

NOISE_CLASS = "noise"


@dataclass(frozen=True)
class AudioClip:
    """Mono waveform in [-1, 1] with its sample rate."""

    samples: np.ndarray
    sample_rate: int
    source_path: str = ""

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        samples = np.asarray(self.samples, dtype=np.float32)
        if samples.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {samples.shape}")
        if samples.size and not np.isfinite(samples).all():
            raise ValueError("samples contain non-finite values")
        if samples.size and (np.abs(samples) > 1.0).any():
            raise ValueError("samples exceed [-1, 1]")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class LabelVocabulary:
    """Ordered class list; index assignment is sorted and stable.

    The reserved "noise" class is always present.
    """

    names: tuple

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ValueError("duplicate class names in vocabulary")
        if NOISE_CLASS not in self.names:
            raise ValueError(f"vocabulary must include the reserved {NOISE_CLASS!r} class")
        if tuple(sorted(self.names)) != tuple(self.names):
            raise ValueError("vocabulary names must be in sorted order")

    @classmethod
    def from_class_names(cls, names) -> "LabelVocabulary":
        return cls(tuple(sorted(set(names) | {NOISE_CLASS})))

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown class {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self.names

    def __len__(self) -> int:
        return len(self.names)


@dataclass(frozen=True)
class Recording:
    """One audio file with its weak labels and split assignment."""

    clip_ref: str
    primary_label: str
    secondary_labels: frozenset = field(default_factory=frozenset)
    split: str = "train"

    def __post_init__(self):
        object.__setattr__(self, "secondary_labels", frozenset(self.secondary_labels))
        if self.primary_label in self.secondary_labels:
            raise ValueError(
                f"primary label {self.primary_label!r} repeated in secondary labels"
            )
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")


def _read_exact(data: bytes, offset: int, n: int, what: str) -> bytes:
    if offset + n > len(data):
        raise DecodeError(f"truncated while reading {what} at offset {offset}")
    return data[offset : offset + n]


def decode_wav(path: str) -> AudioClip:
    """Decode a RIFF/WAVE file to a mono AudioClip.

    Multi-channel input is averaged to mono.  16-bit PCM samples are
    scaled by 1/32768; 32-bit float samples are clipped to [-1, 1].
    """
    with open(path, "rb") as fh:
        data = fh.read()

    if _read_exact(data, 0, 4, "RIFF tag") != b"RIFF":
        raise DecodeError(f"{path}: not a RIFF file (bad magic at offset 0)")
    if _read_exact(data, 8, 4, "WAVE tag") != b"WAVE":
        raise DecodeError(f"{path}: missing WAVE form type at offset 8")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos : pos + 4]
        (size,) = struct.unpack("<I", data[pos + 4 : pos + 8])
        body = _read_exact(data, pos + 8, size, f"chunk {cid!r}")
        if cid == b"fmt ":
            if size < 16:
                raise DecodeError(f"{path}: fmt chunk too short at offset {pos}")
            fmt = struct.unpack("<HHIIHH", body[:16])
        elif cid == b"data":
            payload = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned

    if fmt is None:
        raise DecodeError(f"{path}: no fmt chunk found")
    if payload is None:
        raise DecodeError(f"{path}: no data chunk found")

    audio_format, n_channels, sample_rate, _, _, bits = fmt
    if n_channels < 1:
        raise DecodeError(f"{path}: zero channels in fmt chunk")

    if audio_format == WAVE_FORMAT_PCM and bits == 16:
        raw = np.frombuffer(payload[: len(payload) - len(payload) % (2 * n_channels)], dtype="<i2")
        samples = raw.astype(np.float32) / 32768.0
    elif audio_format == WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        raw = np.frombuffer(payload[: len(payload) - len(payload) % (4 * n_channels)], dtype="<f4")
        samples = np.clip(raw.astype(np.float32), -1.0, 1.0)
    else:
        raise UnsupportedFormatError(
            f"{path}: unsupported encoding (format tag {audio_format}, {bits}-bit); "
            "only 16-bit PCM and 32-bit float are handled"
        )

    if n_channels > 1:
        samples = samples.reshape(-1, n_channels).mean(axis=1)
    if not np.isfinite(samples).all():
        samples = np.nan_to_num(samples, nan=0.0, posinf=1.0, neginf=-1.0)
    return AudioClip(samples=samples, sample_rate=sample_rate, source_path=str(path))


def encode_wav(path: str, clip: AudioClip, encoding: str = "pcm16") -> None:
    """Write a mono WAV file ("pcm16" or "float32")."""
    if encoding == "pcm16":
        fmt_tag, bits = WAVE_FORMAT_PCM, 16
        payload = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2").tobytes()
    elif encoding == "float32":
        fmt_tag, bits = WAVE_FORMAT_IEEE_FLOAT, 32
        payload = clip.samples.astype("<f4").tobytes()
    else:
        raise ValueError(f"unknown encoding {encoding!r}")

    byte_rate = clip.sample_rate * bits // 8
    header = b"".join(
        [
            b"RIFF",
            struct.pack("<I", 36 + len(payload)),
            b"WAVE",
            b"fmt ",
            struct.pack("<IHHIIHH", 16, fmt_tag, 1, clip.sample_rate, byte_rate, bits // 8, bits),
            b"data",
            struct.pack("<I", len(payload)),
        ]
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


# Windowed-sinc resampler: 64 taps, Kaiser beta=8.
_RESAMPLE_TAPS = 64
_KAISER_BETA = 8.0


def _kaiser(x: np.ndarray, beta: float) -> np.ndarray:
    # I0-based Kaiser window evaluated at x in [-1, 1]
    x = np.clip(x, -1.0, 1.0)
    return np.i0(beta * np.sqrt(1.0 - x * x)) / np.i0(beta)


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Band-limited resampling to target_rate; identity when rates match."""
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == clip.sample_rate:
        return clip

    x = clip.samples.astype(np.float64)
    n_in = len(x)
    ratio = target_rate / clip.sample_rate
    n_out = int(round(n_in * ratio))
    cutoff = min(1.0, ratio)
    half = _RESAMPLE_TAPS // 2

    out = np.empty(n_out, dtype=np.float64)
    block = 65536
    for start in range(0, n_out, block):
        idx = np.arange(start, min(start + block, n_out))
        t = idx / ratio  # position in input samples
        k0 = np.floor(t).astype(np.int64) - (half - 1)
        taps = k0[:, None] + np.arange(_RESAMPLE_TAPS)[None, :]
        u = t[:, None] - taps
        w = cutoff * np.sinc(cutoff * u) * _kaiser(u / half, _KAISER_BETA)
        valid = (taps >= 0) & (taps < n_in)
        gathered = np.where(valid, x[np.clip(taps, 0, n_in - 1)], 0.0)
        out[idx] = (gathered * w).sum(axis=1)

    out = np.clip(out, -1.0, 1.0).astype(np.float32)
    return AudioClip(samples=out, sample_rate=target_rate, source_path=clip.source_path)


def load_manifest(path: str, vocab: LabelVocabulary) -> list:
    """Parse a manifest CSV into Recordings, validating labels against vocab.

    Columns: filepath,primary_label,secondary_labels,split with secondary
    labels semicolon-joined.  Row numbers in errors are 1-based data rows.
    """
    recordings = []
    seen = set()
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{path}: empty manifest") from None
        if header != MANIFEST_HEADER:
            raise ManifestError(
                f"{path}: bad header {header!r}, expected {MANIFEST_HEADER!r}"
            )
        for row_num, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != 4:
                raise ManifestError(f"{path}: row {row_num}: expected 4 fields, got {len(row)}")
            filepath, primary, secondary_field, split = row
            if primary not in vocab:
                raise ManifestError(f"{path}: row {row_num}: unknown label {primary!r}")
            secondary = [s for s in secondary_field.split(";") if s]
            for s in secondary:
                if s not in vocab:
                    raise ManifestError(f"{path}: row {row_num}: unknown label {s!r}")
            if split not in SPLITS:
                raise ManifestError(f"{path}: row {row_num}: unknown split {split!r}")
            key = (filepath, split)
            if key in seen:
                raise ManifestError(
                    f"{path}: row {row_num}: duplicate filepath+split {key!r}"
                )
            seen.add(key)
            try:
                rec = Recording(filepath, primary, frozenset(secondary), split)
            except ValueError as exc:
                raise ManifestError(f"{path}: row {row_num}: {exc}") from None
            recordings.append(rec)
    return recordings


def save_manifest(path: str, recordings) -> None:
    """Write recordings in the manifest CSV format (UTF-8, LF endings)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for rec in recordings:
            writer.writerow(
                [
                    rec.clip_ref,
                    rec.primary_label,
                    ";".join(sorted(rec.secondary_labels)),
                    rec.split,
                ]
            )
