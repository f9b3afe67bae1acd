import math

import numpy as np
import pytest

from chirpkit.audio_io import AudioClip, LabelVocabulary, Recording
from chirpkit.augment import AugmentConfig
from chirpkit.dsp import MelConfig
from chirpkit.errors import ConfigError, TrainingDivergedError
from chirpkit.model import Network, activate, build_network, forward, make_spec
from chirpkit.train import (
    DistillConfig,
    TrainConfig,
    TrainItem,
    loss_distill,
    loss_distill_grad,
    loss_ground_truth,
    loss_ground_truth_grad,
    make_targets,
    prepare_train_items,
    prepare_val_pack,
    run_training,
)

MEL = MelConfig(n_mels=16, sample_rate=16000, win_length=400, hop_length=960, n_fft=512, fmax=8000.0)
VOCAB = LabelVocabulary.from_class_names(["sp1", "sp2"])


def tone(freq, seconds=3.0, rate=16000, amp=0.4, noise_seed=None):
    t = np.arange(int(seconds * rate)) / rate
    wave = amp * np.sin(2 * np.pi * freq * t)
    if noise_seed is not None:
        wave = wave + 0.01 * np.random.default_rng(noise_seed).standard_normal(len(t))
    return AudioClip(np.clip(wave, -1, 1).astype(np.float32), rate)


def tiny_dataset(n_per_class=6):
    freqs = {"sp1": 800.0, "sp2": 2400.0}
    items = []
    for label, freq in freqs.items():
        y = np.zeros(len(VOCAB))
        y[VOCAB.index(label)] = 1.0
        for i in range(n_per_class):
            items.append(TrainItem(clip=tone(freq, noise_seed=i), target=y.copy()))
    return items


def tiny_val_pack():
    recs = [
        Recording("a.wav", "sp1", frozenset(), "val"),
        Recording("b.wav", "sp2", frozenset(), "val"),
    ]
    clips = {"a.wav": tone(800.0, noise_seed=91), "b.wav": tone(2400.0, noise_seed=92)}
    return prepare_val_pack(recs, clips, VOCAB, MEL)


def input_shape():
    return (MEL.n_mels, MEL.n_frames(3 * MEL.sample_rate))


def quiet_config(**kw):
    defaults = dict(
        strategy="deep_ft",
        mode="single_label",
        epochs=2,
        batch_size=4,
        seed=1,
        augment=AugmentConfig(mixup_prob=0.0, noise_prob=0.0),
    )
    defaults.update(kw)
    return TrainConfig(**defaults)


class TestMakeTargets:
    def test_multilabel_with_secondary(self):
        rec = Recording("x.wav", "sp1", frozenset({"sp2"}), "train")
        y = make_targets(rec, VOCAB, "multi_label", True)
        assert y[VOCAB.index("sp1")] == 1.0 and y[VOCAB.index("sp2")] == 1.0
        assert y.sum() == 2.0

    def test_multilabel_without_secondary(self):
        rec = Recording("x.wav", "sp1", frozenset({"sp2"}), "train")
        y = make_targets(rec, VOCAB, "multi_label", False)
        assert y[VOCAB.index("sp1")] == 1.0
        assert y.sum() == 1.0

    def test_single_label_ignores_secondary(self):
        rec = Recording("x.wav", "sp1", frozenset({"sp2"}), "train")
        for flag in (True, False):
            y = make_targets(rec, VOCAB, "single_label", flag)
            assert y.sum() == 1.0
            assert y[VOCAB.index("sp1")] == 1.0

    def test_superset_property(self):
        rng = np.random.default_rng(0)
        labels = [n for n in VOCAB.names if n != "noise"]
        for _ in range(10):
            primary = labels[rng.integers(len(labels))]
            secondary = frozenset(l for l in labels if l != primary and rng.random() < 0.5)
            rec = Recording("x.wav", primary, secondary, "train")
            with_sec = make_targets(rec, VOCAB, "multi_label", True)
            without = make_targets(rec, VOCAB, "multi_label", False)
            assert set(np.nonzero(without)[0]) <= set(np.nonzero(with_sec)[0])


class TestLossGroundTruth:
    def test_perfect_prediction_zero_loss(self):
        scores = np.array([[0.0, 1.0, 0.0]])
        y = np.array([[0.0, 1.0, 0.0]])
        assert loss_ground_truth(scores, y, "single_label") == 0.0

    def test_uniform_softmax_ln_c(self):
        c = 7
        scores = np.full((3, c), 1.0 / c)
        y = np.eye(c)[:3]
        assert loss_ground_truth(scores, y, "single_label") == pytest.approx(
            1.9459101490553132, abs=1e-12
        )

    def test_matches_scalar_loop_oracle_single(self):
        rng = np.random.default_rng(8)
        logits = rng.standard_normal((5, 4))
        scores = activate(logits, "softmax")
        y = np.eye(4)[rng.integers(0, 4, 5)]
        expected = 0.0
        for b in range(5):
            for c in range(4):
                if y[b, c]:
                    expected -= y[b, c] * math.log(max(scores[b, c], 1e-12))
        expected /= 5
        assert loss_ground_truth(scores, y, "single_label") == pytest.approx(expected, abs=1e-6)

    def test_matches_scalar_loop_oracle_multi(self):
        rng = np.random.default_rng(9)
        scores = rng.uniform(0.01, 0.99, (5, 4))
        y = rng.integers(0, 2, (5, 4)).astype(float)
        expected = 0.0
        for b in range(5):
            for c in range(4):
                expected -= y[b, c] * math.log(scores[b, c]) + (1 - y[b, c]) * math.log(
                    1 - scores[b, c]
                )
        expected /= 20
        assert loss_ground_truth(scores, y, "multi_label") == pytest.approx(expected, abs=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ConfigError):
            loss_ground_truth(np.zeros((2, 3)), np.zeros((2, 4)), "single_label")


class TestLossDistill:
    def setup_method(self):
        rng = np.random.default_rng(3)
        self.student = rng.standard_normal((4, 5))
        self.teacher = rng.standard_normal((4, 5))
        self.y = np.eye(5)[rng.integers(0, 5, 4)]

    @pytest.mark.parametrize("mode", ["single_label", "multi_label"])
    def test_lambda_one_collapses_to_ground_truth(self, mode):
        cfg = DistillConfig(lam=1.0, tau=3.0, mode=mode)
        total = loss_distill(self.student, self.teacher, self.y, cfg)
        kind = "softmax" if mode == "single_label" else "sigmoid"
        expected = loss_ground_truth(activate(self.student, kind), self.y, mode)
        assert total == expected  # machine precision collapse

    def test_lambda_zero_identical_logits_tau_one_is_zero(self):
        cfg = DistillConfig(lam=0.0, tau=1.0, mode="single_label")
        loss = loss_distill(self.student, self.student.copy(), self.y, cfg)
        assert abs(loss) < 1e-9

    def test_hand_computed_two_class_case(self):
        student = np.array([[1.0, -1.0]])
        teacher = np.array([[2.0, 0.0]])
        y = np.array([[1.0, 0.0]])
        cfg = DistillConfig(lam=0.5, tau=2.0, mode="single_label")
        assert loss_distill(student, teacher, y, cfg) == pytest.approx(
            0.1047678779688588, abs=1e-12
        )

    def test_affine_in_lambda(self):
        cfg0 = DistillConfig(lam=0.0, tau=2.0, mode="single_label")
        cfg1 = DistillConfig(lam=1.0, tau=2.0, mode="single_label")
        l0 = loss_distill(self.student, self.teacher, self.y, cfg0)
        l1 = loss_distill(self.student, self.teacher, self.y, cfg1)
        for lam in (0.25, 0.5, 0.75):
            cfg = DistillConfig(lam=lam, tau=2.0, mode="single_label")
            expected = lam * l1 + (1 - lam) * l0
            assert loss_distill(self.student, self.teacher, self.y, cfg) == pytest.approx(
                expected, abs=1e-12
            )
            lo, hi = sorted((l0, l1))
            assert lo - 1e-12 <= loss_distill(self.student, self.teacher, self.y, cfg) <= hi + 1e-12

    def test_multi_label_kd_matches_scalar_oracle(self):
        cfg = DistillConfig(lam=0.0, tau=2.0, mode="multi_label")
        total = loss_distill(self.student, self.teacher, self.y, cfg)
        t = activate(self.teacher / 2.0, "sigmoid")
        s = activate(self.student, "sigmoid")
        expected = 0.0
        for b in range(4):
            for c in range(5):
                expected -= t[b, c] * math.log(s[b, c]) + (1 - t[b, c]) * math.log(1 - s[b, c])
        expected /= 20
        assert total == pytest.approx(expected, abs=1e-9)

    def test_symmetric_tau_switch(self):
        cfg = DistillConfig(lam=0.0, tau=2.0, mode="single_label", symmetric_tau=True)
        loss = loss_distill(self.student, self.student.copy(), self.y, cfg)
        assert abs(loss) < 1e-9  # same logits, same temperature both sides

    def test_grad_consistency_with_value(self):
        # distill gradient wrt logits matches finite differences on the value
        cfg = DistillConfig(lam=0.4, tau=2.0, mode="single_label")
        _, grad = loss_distill_grad(self.student, self.teacher, self.y, cfg)
        h = 1e-6
        for b in range(2):
            for c in range(3):
                up = self.student.copy()
                up[b, c] += h
                dn = self.student.copy()
                dn[b, c] -= h
                numeric = (
                    loss_distill(up, self.teacher, self.y, cfg)
                    - loss_distill(dn, self.teacher, self.y, cfg)
                ) / (2 * h)
                assert grad[b, c] == pytest.approx(numeric, abs=1e-6)

    def test_bad_tau(self):
        with pytest.raises(ConfigError):
            DistillConfig(lam=0.5, tau=0.0)


class TestRunTraining:
    def test_history_rows_and_loss_decreases(self):
        items = tiny_dataset()
        net = build_network("student_a", input_shape(), len(VOCAB), seed=0, channels=(2, 4))
        best, history = run_training(
            items, tiny_val_pack(), net, quiet_config(epochs=4), VOCAB, MEL
        )
        assert len(history) == 4
        assert history[-1]["train_loss"] < history[0]["train_loss"]
        assert set(history[0]) == {"epoch", "train_loss", "val_f1", "val_map", "val_auroc", "seconds"}

    def test_shallow_keeps_backbone_bit_identical(self):
        items = tiny_dataset()
        net = build_network("student_a", input_shape(), len(VOCAB), seed=0, channels=(2, 4))
        head = net.head_slice()
        backbone_before = np.delete(net.params.copy(), np.s_[head])
        best, _ = run_training(
            items, tiny_val_pack(), net, quiet_config(strategy="shallow_ft", epochs=3), VOCAB, MEL
        )
        backbone_after = np.delete(best.params.copy(), np.s_[head])
        assert backbone_before.tobytes() == backbone_after.tobytes()

    def test_distill_keeps_teacher_bit_identical(self):
        items = tiny_dataset()
        shape = input_shape()
        teacher = build_network("student_a", shape, len(VOCAB), seed=3, channels=(2, 4))
        student = build_network("student_a", shape, len(VOCAB), seed=4, channels=(2, 3))
        teacher_before = teacher.params.copy()
        run_training(
            items,
            tiny_val_pack(),
            (teacher, student),
            quiet_config(strategy="distill", epochs=2, distill=DistillConfig(0.5, 2.0)),
            VOCAB,
            MEL,
        )
        assert teacher_before.tobytes() == teacher.params.tobytes()

    def test_same_seed_identical_history(self):
        metrics = []
        for _ in range(2):
            items = tiny_dataset()
            net = build_network("student_a", input_shape(), len(VOCAB), seed=2, channels=(2, 4))
            _, history = run_training(
                items, tiny_val_pack(), net, quiet_config(seed=9, epochs=3), VOCAB, MEL
            )
            metrics.append([(h["train_loss"], h["val_f1"], h["val_map"]) for h in history])
        assert metrics[0] == metrics[1]

    def test_divergence_raises_with_context(self):
        items = tiny_dataset()
        net = build_network("student_a", input_shape(), len(VOCAB), seed=0, channels=(2, 4))
        with pytest.raises(TrainingDivergedError) as err, np.errstate(all="ignore"):
            run_training(
                items, tiny_val_pack(), net, quiet_config(lr=1e18, epochs=5), VOCAB, MEL
            )
        assert err.value.epoch is not None
        assert err.value.batch is not None

    def test_distill_requires_pair(self):
        items = tiny_dataset()
        net = build_network("student_a", input_shape(), len(VOCAB), seed=0, channels=(2, 4))
        with pytest.raises(ConfigError):
            run_training(
                items, tiny_val_pack(), net, quiet_config(strategy="distill"), VOCAB, MEL
            )


class TestPrepare:
    def test_prepare_counts_chunks(self):
        recs = [
            Recording("a.wav", "sp1", frozenset(), "train"),
            Recording("b.wav", "sp2", frozenset(), "train"),
        ]
        clips = {"a.wav": tone(800, seconds=6.0), "b.wav": tone(2400, seconds=7.5)}
        items = prepare_train_items(recs, clips, VOCAB, quiet_config(), MEL)
        assert len(items) == 2 + 3  # 6 s -> 2 chunks, 7.5 s -> 3 chunks

    def test_external_detector_filters(self):
        recs = [Recording("a.wav", "sp1", frozenset(), "train")]
        clips = {"a.wav": tone(800, seconds=9.0)}
        scores = {"a.wav:0.000": 0.9, "a.wav:3.000": 0.1, "a.wav:6.000": 0.5}
        items = prepare_train_items(
            recs, clips, VOCAB, quiet_config(), MEL, detector="external", external_scores=scores
        )
        assert len(items) == 2
