"""Chunked inference, recording-level max pooling, and all reported metrics.

Tie handling is deterministic: AP breaks score ties by original index,
AUROC gives ties 0.5 credit (rank statistics), argmax takes the lowest
class index.  Classes without positives are excluded from macro averages
rather than scored zero.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import dsp, model, segmenter
from .audio_io import LabelVocabulary, decode_wav, resample
from .errors import ConfigError

DEFAULT_THRESHOLD = 0.2
DEFAULT_REGIME_CUTOFFS = (25, 100)


@dataclass(frozen=True)
class ScoreMatrix:
    """Pooled detection scores, recordings x classes, values in [0, 1]."""

    values: np.ndarray
    recording_ids: tuple
    class_names: tuple

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape != (len(self.recording_ids), len(self.class_names)):
            raise ValueError(f"score matrix shape {v.shape} inconsistent with ids")
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise ValueError("scores must lie in [0, 1]")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "recording_ids", tuple(self.recording_ids))
        object.__setattr__(self, "class_names", tuple(self.class_names))


def pool_recording(chunk_scores: np.ndarray) -> np.ndarray:
    """Per-class max over the chunks of one recording."""
    chunk_scores = np.asarray(chunk_scores, dtype=np.float64)
    if chunk_scores.ndim != 2 or chunk_scores.shape[0] == 0:
        raise ValueError("need a non-empty (chunks x classes) array")
    return chunk_scores.max(axis=0)


def score_recordings(
    net: model.Network,
    recordings,
    vocab: LabelVocabulary,
    mel_cfg: dsp.MelConfig,
    clip_loader=None,
    stride: float = segmenter.CHUNK_SECONDS,
    batch_size: int = 64,
) -> ScoreMatrix:
    """Chunk -> score -> max-pool for every recording.

    clip_loader maps a Recording to an AudioClip (defaults to decoding
    clip_ref from disk); clips are resampled to the mel config's rate.
    """
    if clip_loader is None:
        clip_loader = lambda rec: decode_wav(rec.clip_ref)
    if tuple(vocab.names) != tuple(sorted(vocab.names)):
        raise ConfigError("vocabulary must be sorted")
    rows = []
    for rec in recordings:
        clip = resample(clip_loader(rec), mel_cfg.sample_rate)
        chunks = segmenter.chunk(clip, stride=stride, parent=rec.clip_ref)
        mels = np.stack(
            [dsp.mel_spectrogram(c.samples, mel_cfg).values for c in chunks]
        )
        scores = []
        for i in range(0, len(mels), batch_size):
            logits, _ = model.forward(net, mels[i : i + batch_size])
            scores.append(model.activate(logits, net.spec.activation))
        rows.append(pool_recording(np.concatenate(scores, axis=0)))
    return ScoreMatrix(
        values=np.stack(rows) if rows else np.zeros((0, len(vocab))),
        recording_ids=tuple(r.clip_ref for r in recordings),
        class_names=vocab.names,
    )


def truth_matrix(recordings, vocab: LabelVocabulary, include_secondary: bool = True) -> np.ndarray:
    t = np.zeros((len(recordings), len(vocab)), dtype=np.int64)
    for i, rec in enumerate(recordings):
        t[i, vocab.index(rec.primary_label)] = 1
        if include_secondary:
            for s in rec.secondary_labels:
                t[i, vocab.index(s)] = 1
    return t


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def f1_single_label(scores, truth_idx, average: str = "micro") -> float:
    """F1 with one argmax prediction per recording (ties -> lowest index).

    Micro averaging equals accuracy under exactly one prediction and one
    truth per item; macro averages per-class F1 over classes present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth_idx = np.asarray(truth_idx, dtype=np.int64)
    pred = scores.argmax(axis=1)
    if average == "micro":
        return float((pred == truth_idx).mean())
    if average != "macro":
        raise ValueError(f"unknown average {average!r}")
    f1s = []
    for c in np.unique(truth_idx):
        tp = int(((pred == c) & (truth_idx == c)).sum())
        fp = int(((pred == c) & (truth_idx != c)).sum())
        fn = int(((pred != c) & (truth_idx == c)).sum())
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(f1s))


def average_precision(scores, truth) -> float:
    """AP = mean of precision@k over the ranks k of the positives, ranking
    by descending score with ties in original-index order."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.int64)
    n_pos = int(truth.sum())
    if n_pos == 0:
        raise ValueError("average precision needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    hits = truth[order]
    cum_pos = np.cumsum(hits)
    ranks = np.arange(1, len(scores) + 1)
    return float((cum_pos[hits == 1] / ranks[hits == 1]).mean())


def auroc(scores, truth) -> float:
    """Probability a random positive outranks a random negative, ties at
    0.5; computed with average ranks in O(n log n)."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.int64)
    n_pos = int(truth.sum())
    n_neg = len(truth) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs at least one positive and one negative")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average 1-based rank
        i = j + 1
    pos_rank_sum = ranks[truth == 1].sum()
    u = pos_rank_sum - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def per_class_table(scores: ScoreMatrix, truth: np.ndarray) -> dict:
    """AP and AUROC per class, restricted to classes with >= 1 positive."""
    out = {}
    for c, name in enumerate(scores.class_names):
        col_truth = truth[:, c]
        if col_truth.sum() == 0:
            continue
        entry = {"ap": average_precision(scores.values[:, c], col_truth)}
        entry["auroc"] = (
            auroc(scores.values[:, c], col_truth) if col_truth.sum() < len(col_truth) else None
        )
        entry["n_pos"] = int(col_truth.sum())
        out[name] = entry
    return out


def mean_average_precision(scores: ScoreMatrix, truth: np.ndarray) -> float:
    table = per_class_table(scores, truth)
    if not table:
        raise ValueError("no class has a positive test instance")
    return float(np.mean([e["ap"] for e in table.values()]))


def macro_auroc(scores: ScoreMatrix, truth: np.ndarray) -> float:
    table = per_class_table(scores, truth)
    vals = [e["auroc"] for e in table.values() if e["auroc"] is not None]
    if not vals:
        raise ValueError("no class has both positives and negatives")
    return float(np.mean(vals))


def precision_recall_at(scores: ScoreMatrix, truth: np.ndarray, threshold: float = DEFAULT_THRESHOLD):
    """Micro precision/recall over the (recording, class) prediction set at
    a fixed threshold; zero denominators give 0.0."""
    pred = scores.values >= threshold
    truth = np.asarray(truth, dtype=bool)
    tp = int((pred & truth).sum())
    fp = int((pred & ~truth).sum())
    fn = int((~pred & truth).sum())
    precision = tp / (tp + fp) if (tp + fp) else 0.0
    recall = tp / (tp + fn) if (tp + fn) else 0.0
    return precision, recall


def regime_breakdown(per_class_ap: dict, train_counts: dict, cutoffs=DEFAULT_REGIME_CUTOFFS) -> dict:
    """AP distribution summary per data regime.

    Regimes by training recording count: low <= cutoffs[0] < medium <=
    cutoffs[1] < high.
    """
    lo, hi = cutoffs
    regimes = {"low": [], "medium": [], "high": []}
    for name, ap in per_class_ap.items():
        if name not in train_counts:
            raise ValueError(f"no train count for class {name!r}")
        count = train_counts[name]
        key = "low" if count <= lo else ("medium" if count <= hi else "high")
        regimes[key].append(float(ap))
    out = {}
    for key, vals in regimes.items():
        if not vals:
            out[key] = {"n_classes": 0}
            continue
        arr = np.asarray(vals)
        out[key] = {
            "n_classes": len(vals),
            "min": float(arr.min()),
            "q1": float(np.quantile(arr, 0.25)),
            "median": float(np.median(arr)),
            "q3": float(np.quantile(arr, 0.75)),
            "max": float(arr.max()),
        }
    return out


def foreground_background_recall(
    scores: ScoreMatrix, recordings, vocab: LabelVocabulary, threshold: float = DEFAULT_THRESHOLD
) -> dict:
    """Recall per species over its foreground vs background instances,
    restricted to recordings labeled with exactly two species.

    A species/category with zero qualifying instances is omitted (None),
    not reported as zero.
    """
    if len(recordings) != len(scores.recording_ids):
        raise ValueError("recordings must align with the score matrix rows")
    fg_hits, fg_total = {}, {}
    bg_hits, bg_total = {}, {}
    for row, rec in enumerate(recordings):
        if len(rec.secondary_labels) != 1:
            continue
        secondary = next(iter(rec.secondary_labels))
        for species, hits, totals in (
            (rec.primary_label, fg_hits, fg_total),
            (secondary, bg_hits, bg_total),
        ):
            c = vocab.index(species)
            totals[species] = totals.get(species, 0) + 1
            if scores.values[row, c] >= threshold:
                hits[species] = hits.get(species, 0) + 1
    out = {}
    for species in sorted(set(fg_total) | set(bg_total)):
        out[species] = {
            "foreground_recall": (
                fg_hits.get(species, 0) / fg_total[species] if species in fg_total else None
            ),
            "background_recall": (
                bg_hits.get(species, 0) / bg_total[species] if species in bg_total else None
            ),
            "n_foreground": fg_total.get(species, 0),
            "n_background": bg_total.get(species, 0),
        }
    return out


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class MetricsReport:
    mode: str
    map: float = None
    macro_auroc: float = None
    micro_f1: float = None
    precision_at_threshold: float = None
    recall_at_threshold: float = None
    threshold: float = DEFAULT_THRESHOLD
    per_class: dict = field(default_factory=dict)
    regimes: dict = None
    foreground_background: dict = None

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "map": self.map,
            "macro_auroc": self.macro_auroc,
            "micro_f1": self.micro_f1,
            "precision_at_threshold": self.precision_at_threshold,
            "recall_at_threshold": self.recall_at_threshold,
            "threshold": self.threshold,
            "per_class": self.per_class,
            "regimes": self.regimes,
            "foreground_background": self.foreground_background,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        lines = [f"mode: {self.mode}"]
        for label, value in [
            ("mAP", self.map),
            ("macro AUROC", self.macro_auroc),
            ("micro F1", self.micro_f1),
            (f"precision@{self.threshold:g}", self.precision_at_threshold),
            (f"recall@{self.threshold:g}", self.recall_at_threshold),
        ]:
            if value is not None:
                lines.append(f"{label:<16} {value:.4f}")
        if self.per_class:
            lines.append("")
            lines.append(f"{'class':<12} {'AP':>8} {'AUROC':>8} {'n_pos':>6}")
            for name, entry in sorted(self.per_class.items()):
                au = f"{entry['auroc']:.4f}" if entry.get("auroc") is not None else "   -"
                lines.append(f"{name:<12} {entry['ap']:>8.4f} {au:>8} {entry['n_pos']:>6}")
        if self.regimes:
            lines.append("")
            lines.append(f"{'regime':<8} {'n':>4} {'min':>7} {'q1':>7} {'median':>7} {'q3':>7} {'max':>7}")
            for key in ("low", "medium", "high"):
                r = self.regimes.get(key, {"n_classes": 0})
                if r["n_classes"] == 0:
                    lines.append(f"{key:<8} {0:>4}")
                else:
                    lines.append(
                        f"{key:<8} {r['n_classes']:>4} {r['min']:>7.4f} {r['q1']:>7.4f}"
                        f" {r['median']:>7.4f} {r['q3']:>7.4f} {r['max']:>7.4f}"
                    )
        if self.foreground_background:
            lines.append("")
            lines.append(f"{'species':<12} {'fg recall':>10} {'bg recall':>10} {'n_fg':>5} {'n_bg':>5}")
            for name, entry in sorted(self.foreground_background.items()):
                fg = "-" if entry["foreground_recall"] is None else f"{entry['foreground_recall']:.3f}"
                bg = "-" if entry["background_recall"] is None else f"{entry['background_recall']:.3f}"
                lines.append(f"{name:<12} {fg:>10} {bg:>10} {entry['n_foreground']:>5} {entry['n_background']:>5}")
        return "\n".join(lines) + "\n"


def build_report(
    scores: ScoreMatrix,
    recordings,
    vocab: LabelVocabulary,
    mode: str,
    threshold: float = DEFAULT_THRESHOLD,
    regime_cutoffs=DEFAULT_REGIME_CUTOFFS,
    train_counts: dict = None,
    fg_bg: bool = False,
) -> MetricsReport:
    truth = truth_matrix(recordings, vocab, include_secondary=(mode == "multi_label"))
    report = MetricsReport(mode=mode, threshold=threshold)
    report.per_class = per_class_table(scores, truth)
    if report.per_class:
        report.map = float(np.mean([e["ap"] for e in report.per_class.values()]))
        aucs = [e["auroc"] for e in report.per_class.values() if e["auroc"] is not None]
        if aucs:
            report.macro_auroc = float(np.mean(aucs))
    if mode == "single_label":
        truth_idx = np.array([vocab.index(r.primary_label) for r in recordings])
        report.micro_f1 = f1_single_label(scores.values, truth_idx)
    p, r = precision_recall_at(scores, truth, threshold)
    report.precision_at_threshold = p
    report.recall_at_threshold = r
    if train_counts is not None and report.per_class:
        report.regimes = regime_breakdown(
            {k: v["ap"] for k, v in report.per_class.items()}, train_counts, regime_cutoffs
        )
    if fg_bg:
        report.foreground_background = foreground_background_recall(
            scores, recordings, vocab, threshold
        )
    return report


def save_scores_csv(path: str, scores: ScoreMatrix) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["recording"] + list(scores.class_names))
        for rid, row in zip(scores.recording_ids, scores.values):
            writer.writerow([rid] + [f"{v:.8f}" for v in row])


def load_scores_csv(path: str) -> ScoreMatrix:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        class_names = tuple(header[1:])
        ids, rows = [], []
        for row in reader:
            ids.append(row[0])
            rows.append([float(v) for v in row[1:]])
    return ScoreMatrix(np.asarray(rows), tuple(ids), class_names)
