"""Deterministic synthetic multi-species corpus.

Species are frequency-banded chirp sequences: separable enough for a tiny
CNN to learn in minutes, overlapping enough that polyphony is nontrivial.
A focal-style scene renders one foreground species at gain 1.0 over faint
background species and a pink-noise floor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import AudioClip, LabelVocabulary, Recording, encode_wav, save_manifest
from .errors import ConfigError

SPECIES_BAND = (500.0, 8000.0)
MIN_FREQ_SEPARATION = 1.15  # ratio between neighboring base frequencies
MAX_FREQ_MULT = 1.35  # chirp segments stay within this factor of base_freq


@dataclass(frozen=True)
class ChirpSegment:
    duration: float  # seconds
    freq_mult: float
    amplitude: float  # peak of the Hann envelope


@dataclass(frozen=True)
class SpeciesModel:
    id: str
    base_freq: float
    pattern: tuple  # of ChirpSegment
    call_rate: float  # calls per second


@dataclass(frozen=True)
class SceneSpec:
    duration: float
    foreground: SpeciesModel
    background: tuple  # of (SpeciesModel, gain)
    noise_level: float
    seed: int
    sample_rate: int = 16000

    def __post_init__(self):
        bg_ids = {sp.id for sp, _ in self.background}
        if self.foreground.id in bg_ids:
            raise ConfigError("foreground species repeated in background list")


def default_species(n_classes: int) -> list:
    """n species with base frequencies >= 15% apart, all energy in band."""
    if n_classes < 2:
        raise ConfigError("need at least 2 species")
    lo = 600.0
    hi = SPECIES_BAND[1] / MAX_FREQ_MULT  # headroom for the chirp multipliers
    ratio = (hi / lo) ** (1.0 / (n_classes - 1))
    if ratio < MIN_FREQ_SEPARATION:
        raise ConfigError(f"{n_classes} classes cannot keep 15% frequency separation")
    species = []
    for i in range(n_classes):
        rng = np.random.default_rng([0xB1AD, i])
        base = lo * ratio**i
        n_seg = int(rng.integers(2, 5))
        pattern = tuple(
            ChirpSegment(
                duration=float(rng.uniform(0.04, 0.12)),
                freq_mult=float(rng.uniform(0.9, MAX_FREQ_MULT)),
                amplitude=float(rng.uniform(0.6, 1.0)),
            )
            for _ in range(n_seg)
        )
        species.append(
            SpeciesModel(
                id=f"sp{i + 1:02d}",
                base_freq=float(base),
                pattern=pattern,
                call_rate=float(rng.uniform(0.8, 2.0)),
            )
        )
    return species


def render_call(species: SpeciesModel, sample_rate: int) -> np.ndarray:
    """One call: the chirp segments back to back, each Hann-enveloped."""
    parts = []
    for seg in species.pattern:
        n = max(8, int(round(seg.duration * sample_rate)))
        t = np.arange(n) / sample_rate
        freq = min(species.base_freq * seg.freq_mult, SPECIES_BAND[1] * 0.98)
        env = seg.amplitude * 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / n))
        parts.append(env * np.sin(2.0 * np.pi * freq * t))
    return np.concatenate(parts)


def pink_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    """1/f-shaped noise, unit peak."""
    spectrum = rng.standard_normal(n // 2 + 1) + 1j * rng.standard_normal(n // 2 + 1)
    freqs = np.arange(n // 2 + 1, dtype=np.float64)
    freqs[0] = 1.0
    spectrum /= np.sqrt(freqs)
    out = np.fft.irfft(spectrum, n=n)
    peak = np.abs(out).max()
    return out / peak if peak > 0 else out


def _place_calls(timeline: np.ndarray, species: SpeciesModel, gain: float,
                 rng: np.random.Generator, sample_rate: int) -> None:
    call = render_call(species, sample_rate)
    duration = len(timeline) / sample_rate
    n_calls = max(1, int(rng.poisson(species.call_rate * duration)))
    max_start = len(timeline) - len(call)
    if max_start <= 0:
        timeline[: len(call)] += gain * call[: len(timeline)]
        return
    for _ in range(n_calls):
        start = int(rng.integers(0, max_start + 1))
        timeline[start : start + len(call)] += gain * call


def render_scene(spec: SceneSpec):
    """Deterministic (AudioClip, Recording) for a scene; foreground becomes
    the primary label, backgrounds the secondary labels."""
    rng = np.random.default_rng([spec.seed & 0xFFFFFFFF, 0x5CE])
    n = int(round(spec.duration * spec.sample_rate))
    timeline = np.zeros(n, dtype=np.float64)
    _place_calls(timeline, spec.foreground, 1.0, rng, spec.sample_rate)
    for species, gain in spec.background:
        _place_calls(timeline, species, float(gain), rng, spec.sample_rate)
    if spec.noise_level > 0:
        timeline += spec.noise_level * pink_noise(n, rng)
    peak = np.abs(timeline).max()
    if peak > 0.95:
        timeline *= 0.95 / peak
    clip = AudioClip(timeline.astype(np.float32), spec.sample_rate)
    rec = Recording(
        clip_ref="",
        primary_label=spec.foreground.id,
        secondary_labels=frozenset(sp.id for sp, _ in spec.background),
        split="train",
    )
    return clip, rec


def _split_counts(per_class: int, ratios) -> list:
    """Largest-remainder apportionment so counts sum to per_class exactly."""
    raw = [per_class * r for r in ratios]
    counts = [int(np.floor(x)) for x in raw]
    remainder = per_class - sum(counts)
    order = np.argsort([c - x for c, x in zip(counts, raw)], kind="stable")
    for i in range(remainder):
        counts[order[i]] += 1
    return counts


@dataclass(frozen=True)
class CorpusPaths:
    root: str
    wav_dir: str
    manifest: str  # truth-complete
    manifest_incomplete: str
    vocab_file: str
    meta_file: str


def make_corpus(
    out_dir: str,
    n_classes: int = 8,
    per_class: int = 20,
    bg_rate: float = 0.5,
    split_ratios=(0.7, 0.1, 0.2),
    seed: int = 0,
    duration: float = 6.0,
    sample_rate: int = 16000,
    incomplete_fraction: float = 0.5,
    secondary_counts=(1, 2, 3),
    noise_level: float = 0.02,
    bg_gain_range=(0.05, 0.3),
) -> CorpusPaths:
    """Balanced corpus of WAV scenes plus two manifests.

    manifest.csv carries the complete truth; manifest_incomplete.csv has
    round(incomplete_fraction * total) secondary-label entries deleted by a
    seeded choice, modeling missing background annotations.
    """
    if n_classes < 2:
        raise ConfigError("n_classes must be >= 2")
    if abs(sum(split_ratios)) == 0 or abs(sum(split_ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {split_ratios}")
    if not (0.0 <= bg_rate <= 1.0 and 0.0 <= incomplete_fraction <= 1.0):
        raise ConfigError("bg_rate and incomplete_fraction must be in [0, 1]")

    out = Path(out_dir)
    wav_dir = out / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)
    species = default_species(n_classes)
    by_id = {sp.id: sp for sp in species}
    split_counts = _split_counts(per_class, split_ratios)
    corpus_rng = np.random.default_rng([seed & 0xFFFFFFFF, 0xC0])

    recordings = []
    file_index = 0
    for sp in species:
        splits = [s for s, count in zip(("train", "val", "test"), split_counts) for _ in range(count)]
        n_bg = int(round(bg_rate * per_class))
        bg_flags = np.zeros(per_class, dtype=bool)
        bg_flags[corpus_rng.choice(per_class, size=n_bg, replace=False)] = True
        for k in range(per_class):
            background = []
            if bg_flags[k]:
                others = [o for o in species if o.id != sp.id]
                count = int(
                    secondary_counts[corpus_rng.integers(0, len(secondary_counts))]
                )
                count = min(count, len(others))
                chosen = corpus_rng.choice(len(others), size=count, replace=False)
                background = [
                    (others[int(i)], float(corpus_rng.uniform(*bg_gain_range)))
                    for i in sorted(chosen)
                ]
            scene = SceneSpec(
                duration=duration,
                foreground=sp,
                background=tuple(background),
                noise_level=noise_level,
                seed=seed * 1_000_003 + file_index,
                sample_rate=sample_rate,
            )
            clip, rec = render_scene(scene)
            fname = f"{sp.id}_{k:03d}.wav"
            encode_wav(wav_dir / fname, clip, encoding="pcm16")
            recordings.append(
                Recording(
                    clip_ref=f"wav/{fname}",
                    primary_label=rec.primary_label,
                    secondary_labels=rec.secondary_labels,
                    split=splits[k],
                )
            )
            file_index += 1

    manifest = out / "manifest.csv"
    save_manifest(manifest, recordings)

    # incomplete variant: delete a seeded, exact-count choice of secondary entries
    entries = [
        (i, label)
        for i, rec in enumerate(recordings)
        for label in sorted(rec.secondary_labels)
    ]
    n_remove = int(round(incomplete_fraction * len(entries)))
    remove_rng = np.random.default_rng([seed & 0xFFFFFFFF, 0x1AB])
    removed = set()
    if entries:
        for idx in remove_rng.choice(len(entries), size=n_remove, replace=False):
            removed.add(entries[int(idx)])
    incomplete = []
    for i, rec in enumerate(recordings):
        kept = frozenset(s for s in rec.secondary_labels if (i, s) not in removed)
        incomplete.append(
            Recording(rec.clip_ref, rec.primary_label, kept, rec.split)
        )
    manifest_incomplete = out / "manifest_incomplete.csv"
    save_manifest(manifest_incomplete, incomplete)

    vocab = LabelVocabulary.from_class_names([sp.id for sp in species])
    vocab_file = out / "vocab.json"
    vocab_file.write_text(json.dumps(list(vocab.names), indent=2) + "\n", encoding="utf-8")

    meta = {
        "n_classes": n_classes,
        "per_class": per_class,
        "bg_rate": bg_rate,
        "split_ratios": list(split_ratios),
        "seed": seed,
        "duration": duration,
        "sample_rate": sample_rate,
        "incomplete_fraction": incomplete_fraction,
        "secondary_counts": list(secondary_counts),
        "noise_level": noise_level,
        "bg_gain_range": list(bg_gain_range),
        "species": [
            {"id": sp.id, "base_freq": sp.base_freq, "call_rate": sp.call_rate}
            for sp in species
        ],
    }
    meta_file = out / "corpus.json"
    meta_file.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    return CorpusPaths(
        root=str(out),
        wav_dir=str(wav_dir),
        manifest=str(manifest),
        manifest_incomplete=str(manifest_incomplete),
        vocab_file=str(vocab_file),
        meta_file=str(meta_file),
    )


def make_noise_bank(out_dir: str, n_files: int = 8, duration: float = 6.0,
                    sample_rate: int = 16000, seed: int = 0):
    """Pink-noise WAVs plus a one-column manifest listing them."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(n_files):
        rng = np.random.default_rng([seed & 0xFFFFFFFF, 0x4015E, i])
        samples = 0.5 * pink_noise(int(round(duration * sample_rate)), rng)
        fname = out / f"noise_{i:02d}.wav"
        encode_wav(fname, AudioClip(samples.astype(np.float32), sample_rate), "pcm16")
        paths.append(fname.name)
    manifest = out / "noise_manifest.csv"
    manifest.write_text("\n".join(["filepath"] + paths) + "\n", encoding="utf-8")
    return str(out), str(manifest)
