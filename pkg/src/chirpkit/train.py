"""Transfer strategies and losses: ground-truth training, layer-frozen
shallow fine-tuning, and teacher-student distillation with consistent
teaching.

The distillation total is lambda * L_g + (1 - lambda) * L_kd with the
temperature dividing the teacher logits only; a symmetric_tau switch
tempers the student too for comparison runs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import augment as augment_mod
from . import dsp, evaluation, segmenter
from .audio_io import AudioClip, LabelVocabulary, Recording
from .errors import ConfigError, TrainingDivergedError
from .model import Network, activate, backward, forward, freeze

LOG_CLAMP = 1e-12

STRATEGIES = ("shallow_ft", "deep_ft", "distill")
MODES = ("single_label", "multi_label")


@dataclass(frozen=True)
class DistillConfig:
    lam: float = 0.5
    tau: float = 1.0
    mode: str = "single_label"
    symmetric_tau: bool = False

    def __post_init__(self):
        if not (0.0 <= self.lam <= 1.0):
            raise ConfigError(f"lambda must be in [0, 1], got {self.lam}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")


@dataclass(frozen=True)
class TrainConfig:
    strategy: str = "deep_ft"
    mode: str = "single_label"
    use_secondary_labels: bool = False
    epochs: int = 10
    batch_size: int = 16
    seed: int = 0
    augment: augment_mod.AugmentConfig = field(default_factory=augment_mod.AugmentConfig)
    lr: float = None  # None -> 1e-2 head-only, 1e-3 full
    momentum: float = 0.9
    distill: DistillConfig = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.strategy == "distill" and self.distill is None:
            object.__setattr__(self, "distill", DistillConfig(mode=self.mode))
        if self.distill is not None and self.distill.mode != self.mode:
            object.__setattr__(self, "distill", replace(self.distill, mode=self.mode))

    def resolved_lr(self) -> float:
        if self.lr is not None:
            return self.lr
        return 1e-2 if self.strategy == "shallow_ft" else 1e-3


# ---------------------------------------------------------------------------
# Targets and losses
# ---------------------------------------------------------------------------

def make_targets(rec: Recording, vocab: LabelVocabulary, mode: str, use_secondary: bool) -> np.ndarray:
    """Label vector for one recording; single-label mode always ignores
    secondary labels."""
    y = np.zeros(len(vocab), dtype=np.float64)
    y[vocab.index(rec.primary_label)] = 1.0
    if mode == "multi_label" and use_secondary:
        for s in rec.secondary_labels:
            y[vocab.index(s)] = 1.0
    return y


def loss_ground_truth(scores: np.ndarray, y: np.ndarray, mode: str) -> float:
    """CE over softmax scores (single_label) or BCE over sigmoid scores
    (multi_label); log arguments clamped at 1e-12."""
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if scores.shape != y.shape:
        raise ConfigError(f"scores {scores.shape} vs labels {y.shape}")
    if mode == "single_label":
        return float(-(y * np.log(np.maximum(scores, LOG_CLAMP))).sum(axis=1).mean())
    if mode == "multi_label":
        s = np.clip(scores, LOG_CLAMP, 1.0 - LOG_CLAMP)
        return float(-(y * np.log(s) + (1.0 - y) * np.log(1.0 - s)).mean())
    raise ConfigError(f"unknown mode {mode!r}")


def loss_ground_truth_grad(logits: np.ndarray, y: np.ndarray, mode: str):
    """(loss, dLoss/dLogits) with the activation fused analytically."""
    y = np.asarray(y, dtype=np.float64)
    b = logits.shape[0]
    if mode == "single_label":
        p = activate(logits, "softmax")
        loss = loss_ground_truth(p, y, mode)
        return loss, (p - y) / b
    p = activate(logits, "sigmoid")
    loss = loss_ground_truth(p, y, mode)
    return loss, (p - y) / (b * logits.shape[1])


def loss_distill(student_logits: np.ndarray, teacher_logits: np.ndarray, y: np.ndarray,
                 cfg: DistillConfig) -> float:
    loss, _ = loss_distill_grad(student_logits, teacher_logits, y, cfg)
    return loss


def loss_distill_grad(student_logits: np.ndarray, teacher_logits: np.ndarray, y: np.ndarray,
                      cfg: DistillConfig):
    """(total loss, dTotal/dStudentLogits).

    single_label: L_kd = KL(teacher softmax at tau || student softmax)
    multi_label:  L_kd = BCE(student sigmoid vs teacher sigmoid soft targets)
    """
    student_logits = np.asarray(student_logits, dtype=np.float64)
    teacher_logits = np.asarray(teacher_logits, dtype=np.float64)
    if student_logits.shape != teacher_logits.shape:
        raise ConfigError(
            f"student {student_logits.shape} vs teacher {teacher_logits.shape} logits"
        )
    b, c = student_logits.shape
    lam, tau = cfg.lam, cfg.tau

    g_loss, g_grad = loss_ground_truth_grad(student_logits, y, cfg.mode)
    if lam == 1.0:
        return g_loss, lam * g_grad

    s_logits = student_logits / tau if cfg.symmetric_tau else student_logits
    s_scale = (1.0 / tau) if cfg.symmetric_tau else 1.0
    if cfg.mode == "single_label":
        p_t = activate(teacher_logits / tau, "softmax")
        p_s = activate(s_logits, "softmax")
        kd = float(
            (p_t * (np.log(np.maximum(p_t, LOG_CLAMP)) - np.log(np.maximum(p_s, LOG_CLAMP))))
            .sum(axis=1)
            .mean()
        )
        kd_grad = s_scale * (p_s - p_t) / b
    else:
        t = activate(teacher_logits / tau, "sigmoid")
        s = activate(s_logits, "sigmoid")
        s_clip = np.clip(s, LOG_CLAMP, 1.0 - LOG_CLAMP)
        kd = float(-(t * np.log(s_clip) + (1.0 - t) * np.log(1.0 - s_clip)).mean())
        kd_grad = s_scale * (s - t) / (b * c)

    total = lam * g_loss + (1.0 - lam) * kd
    return total, lam * g_grad + (1.0 - lam) * kd_grad


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

class MomentumSGD:
    """Mini-batch gradient descent, momentum 0.9, cosine-decayed lr.

    Frozen parameters are never written, so they stay bit-identical."""

    def __init__(self, net: Network, lr: float, momentum: float, total_steps: int):
        self.net = net
        self.lr = lr
        self.momentum = momentum
        self.total_steps = max(1, total_steps)
        self.step_count = 0
        self.velocity = np.zeros_like(net.params)

    def step(self, grad: np.ndarray) -> None:
        lr_t = self.lr * 0.5 * (1.0 + np.cos(np.pi * self.step_count / self.total_steps))
        self.velocity = self.momentum * self.velocity - lr_t * grad
        live = ~self.net.frozen_mask
        self.net.params[live] += self.velocity[live].astype(self.net.params.dtype)
        self.step_count += 1


# ---------------------------------------------------------------------------
# Data packs
# ---------------------------------------------------------------------------

@dataclass
class TrainItem:
    clip: AudioClip  # one 3 s chunk
    target: np.ndarray


@dataclass
class ValPack:
    """Pre-computed validation features: per recording a stack of chunk
    spectrograms plus its targets."""

    mels: list  # list of (n_chunks, n_mels, n_frames) float32 arrays
    truth: np.ndarray  # (R, C)
    primary_idx: np.ndarray  # (R,)


def prepare_train_items(
    recordings,
    clips: dict,
    vocab: LabelVocabulary,
    cfg: TrainConfig,
    mel_cfg: dsp.MelConfig,
    detector: str = "none",
    detector_k: float = 3.0,
    external_scores: dict = None,
) -> list:
    """Chunk every training recording and attach its weak-label target.

    detector: none | energy | external.  External scores map chunk_id ->
    score and use the 0.3-threshold contract.
    """
    items = []
    for rec in recordings:
        clip = clips[rec.clip_ref]
        target = make_targets(rec, vocab, cfg.mode, cfg.use_secondary_labels)
        chunks = segmenter.chunk(clip, parent=rec.clip_ref)
        if detector == "energy":
            stats = segmenter.recording_stats(clip, mel_cfg)
            chunks = [
                c for c in chunks
                if segmenter.energy_detector(c, mel_cfg, detector_k, stats).keep
            ]
        elif detector == "external":
            scores = [external_scores[c.chunk_id] for c in chunks]
            chunks = segmenter.external_detector_filter(chunks, scores)
        elif detector != "none":
            raise ConfigError(f"unknown detector {detector!r}")
        items.extend(TrainItem(clip=c.samples, target=target) for c in chunks)
    if not items:
        raise ConfigError("no training chunks left after detector filtering")
    return items


def prepare_val_pack(recordings, clips: dict, vocab: LabelVocabulary, mel_cfg: dsp.MelConfig) -> ValPack:
    mels = []
    for rec in recordings:
        chunks = segmenter.chunk(clips[rec.clip_ref], parent=rec.clip_ref)
        mels.append(
            np.stack([dsp.mel_spectrogram(c.samples, mel_cfg).values for c in chunks])
        )
    truth = evaluation.truth_matrix(recordings, vocab, include_secondary=True)
    primary_idx = np.array([vocab.index(r.primary_label) for r in recordings], dtype=np.int64)
    return ValPack(mels=mels, truth=truth, primary_idx=primary_idx)


def _val_metrics(net: Network, pack: ValPack, vocab: LabelVocabulary, mode: str) -> dict:
    rows = []
    for mel_stack in pack.mels:
        logits, _ = forward(net, mel_stack)
        rows.append(evaluation.pool_recording(activate(logits, net.spec.activation)))
    scores = evaluation.ScoreMatrix(
        np.stack(rows), tuple(str(i) for i in range(len(rows))), vocab.names
    )
    truth = pack.truth if mode == "multi_label" else (
        np.eye(len(vocab), dtype=np.int64)[pack.primary_idx]
    )
    out = {"val_f1": evaluation.f1_single_label(scores.values, pack.primary_idx)}
    try:
        out["val_map"] = evaluation.mean_average_precision(scores, truth)
        out["val_auroc"] = evaluation.macro_auroc(scores, truth)
    except ValueError:
        out["val_map"] = float("nan")
        out["val_auroc"] = float("nan")
    return out


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def run_training(
    train_items: list,
    val_pack: ValPack,
    net,
    cfg: TrainConfig,
    vocab: LabelVocabulary,
    mel_cfg: dsp.MelConfig,
    noise_bank: list = None,
):
    """Optimize under the configured strategy.

    net is a Network, or a (teacher, student) pair for distillation; the
    teacher stays frozen and sees exactly the student's augmented inputs
    (consistent teaching).  Returns (best network, history rows).
    """
    teacher = None
    if cfg.strategy == "distill":
        if not isinstance(net, tuple):
            raise ConfigError("distill needs a (teacher, student) pair")
        teacher, student = net
        freeze(student, "none")
    elif cfg.strategy == "shallow_ft":
        student = net
        freeze(student, "backbone")
    else:
        student = net
        freeze(student, "none")

    aug_cfg = replace(cfg.augment, seed=cfg.seed)
    n = len(train_items)
    steps_per_epoch = (n + cfg.batch_size - 1) // cfg.batch_size
    optimizer = MomentumSGD(
        student, cfg.resolved_lr(), cfg.momentum, cfg.epochs * steps_per_epoch
    )

    history = []
    best_metric = -np.inf
    best_params = student.params.copy()
    metric_key = "val_map" if cfg.mode == "multi_label" else "val_f1"

    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        order = np.random.default_rng([cfg.seed & 0xFFFFFFFF, epoch, 0x0D]).permutation(n)
        epoch_loss = 0.0
        for b_idx in range(steps_per_epoch):
            sel = order[b_idx * cfg.batch_size : (b_idx + 1) * cfg.batch_size]
            batch = [(train_items[i].clip, train_items[i].target) for i in sel]
            batch = augment_mod.apply(
                batch, aug_cfg, epoch=epoch, noise_bank=noise_bank, item_indices=sel
            )
            x = np.stack([dsp.mel_spectrogram(c, mel_cfg).values for c, _ in batch])
            y = np.stack([t for _, t in batch])

            logits, cache = forward(student, x)
            if teacher is not None:
                x_teacher = x
                # consistent teaching: identical augmented input, bit for bit
                assert x_teacher is x
                teacher_logits, _ = forward(teacher, x_teacher)
                loss, dlogits = loss_distill_grad(logits, teacher_logits, y, cfg.distill)
            else:
                loss, dlogits = loss_ground_truth_grad(logits, y, cfg.mode)

            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss {loss} at epoch {epoch}, batch {b_idx}",
                    epoch=epoch,
                    batch=b_idx,
                )
            grad = backward(student, cache, dlogits.astype(student.params.dtype))
            optimizer.step(grad)
            epoch_loss += loss

        row = {"epoch": epoch, "train_loss": epoch_loss / steps_per_epoch}
        row.update(_val_metrics(student, val_pack, vocab, cfg.mode))
        row["seconds"] = time.perf_counter() - started
        history.append(row)
        if row[metric_key] > best_metric:
            best_metric = row[metric_key]
            best_params = student.params.copy()

    best = Network(student.spec, params=best_params)
    best.frozen_mask = student.frozen_mask.copy()
    return best, history


def history_to_csv(history: list) -> str:
    lines = ["epoch,train_loss,val_f1,val_map,val_auroc,seconds"]
    for row in history:
        lines.append(
            f"{row['epoch']},{row['train_loss']:.8f},{row['val_f1']:.6f},"
            f"{row['val_map']:.6f},{row['val_auroc']:.6f},{row['seconds']:.3f}"
        )
    return "\n".join(lines) + "\n"
