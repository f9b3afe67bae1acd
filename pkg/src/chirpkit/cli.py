"""Experiment runner: synth, train, eval, grid, detect.

Exit codes: 0 success, 1 partial grid failure, 2 config/validation error,
3 runtime divergence.  Every command writes the exact resolved config it
ran with next to its outputs; re-running a command from that snapshot with
the same seed reproduces the output files (timing columns aside).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

import jsonschema
import numpy as np

from . import augment as augment_mod
from . import dsp, evaluation, segmenter, synthgen, train as train_mod
from .audio_io import LabelVocabulary, decode_wav, load_manifest, resample
from .errors import ChirpkitError, ConfigError, TrainingDivergedError
from .model import Network, build_network, load_checkpoint, save_checkpoint

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3

_SCHEMA_DIR = Path(__file__).parent / "schemas"


def load_schema(name: str) -> dict:
    return json.loads((_SCHEMA_DIR / f"{name}.schema.json").read_text(encoding="utf-8"))


def validate_config(doc: dict, schema_name: str) -> None:
    try:
        jsonschema.validate(doc, load_schema(schema_name))
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config does not match {schema_name} schema: {exc.message}") from None


# ---------------------------------------------------------------------------
# Config resolution
# ---------------------------------------------------------------------------

_CONFIG_DEFAULTS = {
    "data": {
        "vocab": None,
        "detector": "none",
        "detector_k": 3.0,
        "detector_scores": None,
        "use_secondary_labels": False,
        "noise_bank": None,
    },
    "model": {"sizes": {}, "init_checkpoint": None, "teacher_checkpoint": None},
    "train": {
        "batch_size": 16,
        "seed": 0,
        "lr": None,
        "momentum": 0.9,
        "distill": {"lambda": 0.5, "tau": 1.0, "symmetric_tau": False},
        "augment": {
            "mixup_prob": 0.6,
            "mixup_alpha": 0.2,
            "noise_prob": 0.5,
            "noise_snr_db": [-5.0, 20.0],
        },
    },
    "eval": {"threshold": 0.2, "regime_cutoffs": [25, 100]},
}

_PATH_KEYS = {
    ("out_dir",),
    ("data", "manifest"),
    ("data", "vocab"),
    ("data", "detector_scores"),
    ("data", "noise_bank"),
    ("model", "init_checkpoint"),
    ("model", "teacher_checkpoint"),
}


def _merge_defaults(doc: dict, defaults: dict) -> dict:
    out = dict(defaults)
    for key, value in doc.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge_defaults(value, out[key])
        else:
            out[key] = value
    return out


def resolve_config(doc: dict, base_dir: Path) -> dict:
    """Validate, fill defaults, and absolutize paths against base_dir."""
    validate_config(doc, "experiment_config")
    resolved = _merge_defaults(doc, {"eval": _CONFIG_DEFAULTS["eval"]})
    for section in ("data", "model", "train"):
        resolved[section] = _merge_defaults(resolved[section], _CONFIG_DEFAULTS[section])
    for keys in _PATH_KEYS:
        node = resolved
        for k in keys[:-1]:
            node = node[k]
        value = node.get(keys[-1])
        if value is not None:
            node[keys[-1]] = str((base_dir / value).resolve())
    validate_config(resolved, "experiment_config")
    return resolved


def config_checksum(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode("utf-8")).hexdigest()


def mel_from_config(mel_doc: dict) -> dsp.MelConfig:
    if "preset" in mel_doc:
        return dsp.preset(mel_doc["preset"])
    return dsp.MelConfig(**mel_doc)


def load_vocab(resolved: dict) -> LabelVocabulary:
    vocab_path = resolved["data"]["vocab"]
    if vocab_path:
        names = json.loads(Path(vocab_path).read_text(encoding="utf-8"))
        return LabelVocabulary(tuple(names))
    # fall back to the labels present in the manifest
    labels = set()
    with open(resolved["data"]["manifest"], encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            labels.add(row["primary_label"])
            labels.update(s for s in row["secondary_labels"].split(";") if s)
    return LabelVocabulary.from_class_names(labels)


def load_clips(manifest_path: str, recordings, sample_rate: int) -> dict:
    """Decode and resample every referenced WAV once, keyed by clip_ref."""
    base = Path(manifest_path).parent
    clips = {}
    for rec in recordings:
        if rec.clip_ref not in clips:
            clip = decode_wav(str(base / rec.clip_ref))
            clips[rec.clip_ref] = resample(clip, sample_rate)
    return clips


def load_noise_bank(manifest_path: str, sample_rate: int) -> list:
    base = Path(manifest_path).parent
    lines = Path(manifest_path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "filepath":
        raise ConfigError(f"{manifest_path}: expected a one-column filepath manifest")
    return [resample(decode_wav(str(base / name)), sample_rate) for name in lines[1:] if name]


def load_detector_scores(path: str) -> dict:
    scores = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["chunk_id", "score"]:
            raise ConfigError(f"{path}: expected header chunk_id,score")
        for row in reader:
            scores[row[0]] = float(row[1])
    return scores


# ---------------------------------------------------------------------------
# train command
# ---------------------------------------------------------------------------

def _build_networks(resolved: dict, vocab, input_shape):
    """Returns (net_or_pair, activation) per the configured strategy."""
    tr = resolved["train"]
    md = resolved["model"]
    activation = "softmax" if tr["mode"] == "single_label" else "sigmoid"
    seed = tr["seed"]
    strategy = tr["strategy"]

    def fresh():
        return build_network(
            md["spec"], input_shape, len(vocab), activation, seed=seed, **md["sizes"]
        )

    def load_init(path):
        net, ck_vocab, _ = load_checkpoint(path)
        if list(ck_vocab) != list(vocab.names):
            raise ConfigError(f"checkpoint vocab does not match dataset vocab ({path})")
        if net.spec.input_shape != tuple(input_shape):
            raise ConfigError(
                f"checkpoint input shape {net.spec.input_shape} != mel shape {tuple(input_shape)}"
            )
        if net.spec.activation != activation:
            net = _with_activation(net, activation)
        return net

    if strategy == "distill":
        teacher_path = md["teacher_checkpoint"]
        if not teacher_path or not Path(teacher_path).exists():
            raise ConfigError("distill strategy requires an existing teacher_checkpoint")
        teacher = load_init(teacher_path)
        student = fresh()
        return (teacher, student), activation
    net = load_init(md["init_checkpoint"]) if md["init_checkpoint"] else fresh()
    if strategy == "shallow_ft" and md["init_checkpoint"]:
        _reinit_head(net, seed)
    return net, activation


def _with_activation(net: Network, activation: str) -> Network:
    spec = replace(net.spec, activation=activation)
    out = Network(spec, params=net.params.copy())
    out.frozen_mask = net.frozen_mask.copy()
    return out


def _reinit_head(net: Network, seed: int) -> None:
    """Fresh dense head on top of the (to be frozen) backbone."""
    rng = np.random.default_rng([seed & 0xFFFFFFFF, 0xEAD])
    sl = net.head_slice()
    emb, n_classes = net.spec.embedding_dim, net.spec.n_classes
    bound = np.sqrt(6.0 / emb)
    w = rng.uniform(-bound, bound, emb * n_classes).astype(net.params.dtype)
    net.params[sl] = np.concatenate([w, np.zeros(n_classes, dtype=net.params.dtype)])


def run_train_config(resolved: dict) -> dict:
    """Train per a resolved config; returns a result summary dict."""
    out_dir = Path(resolved["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.resolved.json").write_text(
        json.dumps(resolved, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    mel_cfg = mel_from_config(resolved["mel"])
    vocab = load_vocab(resolved)
    recordings = load_manifest(resolved["data"]["manifest"], vocab)
    train_recs = [r for r in recordings if r.split == "train"]
    val_recs = [r for r in recordings if r.split == "val"]
    if not train_recs or not val_recs:
        raise ConfigError("manifest needs non-empty train and val splits")

    clips = load_clips(resolved["data"]["manifest"], train_recs + val_recs, mel_cfg.sample_rate)
    tr = resolved["train"]
    cfg = train_mod.TrainConfig(
        strategy=tr["strategy"],
        mode=tr["mode"],
        use_secondary_labels=resolved["data"]["use_secondary_labels"],
        epochs=tr["epochs"],
        batch_size=tr["batch_size"],
        seed=tr["seed"],
        augment=augment_mod.AugmentConfig(
            mixup_prob=tr["augment"]["mixup_prob"],
            mixup_alpha=tr["augment"]["mixup_alpha"],
            noise_prob=tr["augment"]["noise_prob"],
            noise_snr_db=tuple(tr["augment"]["noise_snr_db"]),
            seed=tr["seed"],
        ),
        lr=tr["lr"],
        momentum=tr["momentum"],
        distill=train_mod.DistillConfig(
            lam=tr["distill"]["lambda"],
            tau=tr["distill"]["tau"],
            mode=tr["mode"],
            symmetric_tau=tr["distill"]["symmetric_tau"],
        )
        if tr["strategy"] == "distill"
        else None,
    )

    external_scores = None
    if resolved["data"]["detector"] == "external":
        if not resolved["data"]["detector_scores"]:
            raise ConfigError("external detector requires data.detector_scores")
        external_scores = load_detector_scores(resolved["data"]["detector_scores"])

    n_frames = mel_cfg.n_frames(int(round(segmenter.CHUNK_SECONDS * mel_cfg.sample_rate)))
    input_shape = (mel_cfg.n_mels, n_frames)
    net, activation = _build_networks(resolved, vocab, input_shape)

    items = train_mod.prepare_train_items(
        train_recs,
        clips,
        vocab,
        cfg,
        mel_cfg,
        detector=resolved["data"]["detector"],
        detector_k=resolved["data"]["detector_k"],
        external_scores=external_scores,
    )
    val_pack = train_mod.prepare_val_pack(val_recs, clips, vocab, mel_cfg)

    noise_bank = None
    if resolved["data"]["noise_bank"]:
        noise_bank = load_noise_bank(resolved["data"]["noise_bank"], mel_cfg.sample_rate)

    best, history = train_mod.run_training(
        items, val_pack, net, cfg, vocab, mel_cfg, noise_bank=noise_bank
    )

    meta = {
        "mel": mel_cfg.to_dict(),
        "mode": cfg.mode,
        "strategy": cfg.strategy,
        "config_checksum": config_checksum(resolved),
    }
    ckpt_path = out_dir / "checkpoint.ckpt"
    save_checkpoint(ckpt_path, best, vocab.names, meta)
    (out_dir / "history.csv").write_text(train_mod.history_to_csv(history), encoding="utf-8")

    return {
        "checkpoint": str(ckpt_path),
        "history": str(out_dir / "history.csv"),
        "epochs": len(history),
        "seconds_per_epoch": float(np.mean([h["seconds"] for h in history])),
        "total_seconds": float(np.sum([h["seconds"] for h in history])),
        "final_train_loss": history[-1]["train_loss"],
        "best_val": max(
            h["val_map" if cfg.mode == "multi_label" else "val_f1"] for h in history
        ),
    }


def cmd_train(args) -> int:
    config_path = Path(args.config)
    try:
        doc = json.loads(config_path.read_text(encoding="utf-8"))
        resolved = resolve_config(doc, config_path.parent.resolve())
        result = run_train_config(resolved)
    except TrainingDivergedError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ChirpkitError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"checkpoint: {result['checkpoint']}")
    print(f"history:    {result['history']}")
    print(
        f"epochs={result['epochs']} best_val={result['best_val']:.4f} "
        f"final_train_loss={result['final_train_loss']:.4f}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval command
# ---------------------------------------------------------------------------

def run_eval(
    checkpoint: str,
    manifest: str,
    out_dir: str,
    split: str = "test",
    threshold: float = None,
    regime_cutoffs=None,
    fg_bg: bool = False,
    average: str = "micro",
    mode: str = None,
) -> dict:
    net, ck_vocab, meta = load_checkpoint(checkpoint)
    vocab = LabelVocabulary(tuple(ck_vocab))
    recordings = load_manifest(manifest, vocab)  # raises on labels outside vocab
    mel_cfg = dsp.MelConfig.from_dict(meta["mel"])
    mode = mode or meta.get("mode", "single_label")
    threshold = evaluation.DEFAULT_THRESHOLD if threshold is None else threshold
    cutoffs = tuple(regime_cutoffs or evaluation.DEFAULT_REGIME_CUTOFFS)

    train_counts = {}
    for rec in recordings:
        if rec.split == "train":
            train_counts[rec.primary_label] = train_counts.get(rec.primary_label, 0) + 1
    for name in vocab.names:
        train_counts.setdefault(name, 0)

    subset = recordings if split == "all" else [r for r in recordings if r.split == split]
    if not subset:
        raise ConfigError(f"no recordings in split {split!r}")
    base = Path(manifest).parent
    scores = evaluation.score_recordings(
        net,
        subset,
        vocab,
        mel_cfg,
        clip_loader=lambda rec: decode_wav(str(base / rec.clip_ref)),
    )
    report = evaluation.build_report(
        scores,
        subset,
        vocab,
        mode,
        threshold=threshold,
        regime_cutoffs=cutoffs,
        train_counts=train_counts,
        fg_bg=fg_bg,
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
    evaluation.save_scores_csv(out / "scores.csv", scores)
    return {"report": report, "scores": scores, "out_dir": str(out)}


def cmd_eval(args) -> int:
    try:
        result = run_eval(
            args.checkpoint,
            args.manifest,
            args.out_dir,
            split=args.split,
            threshold=args.threshold,
            regime_cutoffs=args.regime_cutoffs,
            fg_bg=args.fg_bg,
            mode=args.mode,
        )
    except (ChirpkitError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    report = result["report"]
    print(f"reports written to {result['out_dir']}")
    for key in ("map", "macro_auroc", "micro_f1", "precision_at_threshold", "recall_at_threshold"):
        value = getattr(report, key)
        if value is not None:
            print(f"{key}: {value:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# synth command
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    try:
        if abs(sum(args.split_ratios) - 1.0) > 1e-9:
            raise ConfigError(f"split ratios must sum to 1, got {args.split_ratios}")
        paths = synthgen.make_corpus(
            args.out,
            n_classes=args.n_classes,
            per_class=args.per_class,
            bg_rate=args.bg_rate,
            split_ratios=tuple(args.split_ratios),
            seed=args.seed,
            duration=args.duration,
            sample_rate=args.sample_rate,
            incomplete_fraction=args.incomplete_fraction,
            secondary_counts=tuple(args.secondary_counts),
            noise_level=args.noise_level,
            bg_gain_range=tuple(args.bg_gain_range),
        )
        noise_msg = ""
        if args.noise_files > 0:
            _, noise_manifest = synthgen.make_noise_bank(
                Path(args.out) / "noise",
                n_files=args.noise_files,
                duration=max(args.duration, segmenter.CHUNK_SECONDS),
                sample_rate=args.sample_rate,
                seed=args.seed,
            )
            noise_msg = noise_manifest
    except (ChirpkitError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"manifest: {paths.manifest}")
    print(f"manifest_incomplete: {paths.manifest_incomplete}")
    print(f"vocab: {paths.vocab_file}")
    if noise_msg:
        print(f"noise_bank: {noise_msg}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# detect command
# ---------------------------------------------------------------------------

def cmd_detect(args) -> int:
    try:
        mel_cfg = (
            dsp.preset(args.mel_preset)
            if args.mel_preset
            else dsp.MelConfig.from_dict(json.loads(Path(args.mel_config).read_text()))
        )
        labels = set()
        with open(args.manifest, encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                labels.add(row["primary_label"])
                labels.update(s for s in row["secondary_labels"].split(";") if s)
        vocab = LabelVocabulary.from_class_names(labels)
        recordings = load_manifest(args.manifest, vocab)
        base = Path(args.manifest).parent
        rows = []
        for rec in recordings:
            clip = resample(decode_wav(str(base / rec.clip_ref)), mel_cfg.sample_rate)
            for decision in segmenter.detect_chunks(
                clip, mel_cfg, k=args.k, stride=args.stride, parent=rec.clip_ref
            ):
                rows.append((decision.chunk_id, decision.score, decision.keep))
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["chunk_id", "score", "keep"])
            for cid, score, keep in rows:
                writer.writerow([cid, f"{score:.8f}", int(keep)])
    except (ChirpkitError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    kept = sum(1 for _, _, k in rows if k)
    print(f"{args.out}: {kept}/{len(rows)} chunks kept")
    return EXIT_OK


# ---------------------------------------------------------------------------
# grid command
# ---------------------------------------------------------------------------

def _grid_run_once(name: str, run_config: dict, run_dir: Path) -> dict:
    """Train + test-split eval for one grid entry, resumable by checksum."""
    checksum = config_checksum(run_config)
    result_path = run_dir / "result.json"
    if result_path.exists():
        prior = json.loads(result_path.read_text(encoding="utf-8"))
        if prior.get("config_checksum") == checksum:
            return prior
    run_dir.mkdir(parents=True, exist_ok=True)
    train_result = run_train_config(run_config)
    eval_result = run_eval(
        train_result["checkpoint"],
        run_config["data"]["manifest"],
        str(run_dir / "eval"),
        split="test",
        threshold=run_config["eval"]["threshold"],
        regime_cutoffs=run_config["eval"]["regime_cutoffs"],
    )
    report = eval_result["report"]
    result = {
        "name": name,
        "status": "ok",
        "config_checksum": checksum,
        "strategy": run_config["train"]["strategy"],
        "map": report.map,
        "auroc": report.macro_auroc,
        "micro_f1": report.micro_f1,
        "epochs": train_result["epochs"],
        "seconds_per_epoch": train_result["seconds_per_epoch"],
        "total_seconds": train_result["total_seconds"],
    }
    result_path.write_text(json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return result


def cmd_grid(args) -> int:
    grid_path = Path(args.config)
    try:
        doc = json.loads(grid_path.read_text(encoding="utf-8"))
        validate_config(doc, "grid_config")
    except (ChirpkitError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    base_dir = grid_path.parent.resolve()
    out_dir = (base_dir / doc["out_dir"]).resolve()
    out_dir.mkdir(parents=True, exist_ok=True)
    results = []
    any_failed = False
    for entry in doc["runs"]:
        name = entry["name"]
        run_dir = out_dir / name
        try:
            raw = entry["config"]
            if isinstance(raw, str):
                cfg_path = base_dir / raw
                run_doc = json.loads(cfg_path.read_text(encoding="utf-8"))
                cfg_base = cfg_path.parent.resolve()
            else:
                run_doc = dict(raw)
                cfg_base = base_dir
            run_doc["out_dir"] = str(run_dir)
            resolved = resolve_config(run_doc, cfg_base)
            resolved["out_dir"] = str(run_dir)
            results.append(_grid_run_once(name, resolved, run_dir))
        except (ChirpkitError, OSError, json.JSONDecodeError) as exc:
            any_failed = True
            results.append({"name": name, "status": f"failed: {exc}", "strategy": ""})

    summary = out_dir / "summary.csv"
    with open(summary, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["name", "strategy", "map", "auroc", "epochs", "seconds_per_epoch", "total_seconds", "status"]
        )
        for r in results:
            if r["status"] == "ok":
                writer.writerow(
                    [
                        r["name"],
                        r["strategy"],
                        f"{r['map']:.4f}" if r["map"] is not None else "",
                        f"{r['auroc']:.4f}" if r["auroc"] is not None else "",
                        r["epochs"],
                        f"{r['seconds_per_epoch']:.3f}",
                        f"{r['total_seconds']:.3f}",
                        "ok",
                    ]
                )
            else:
                writer.writerow([r["name"], "", "", "", "", "", "", r["status"]])
    print(f"summary: {summary}")
    for r in results:
        print(f"  {r['name']}: {r['status']}")
    return EXIT_PARTIAL if any_failed else EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chirpkit",
        description="Desk-scale bird-sound transfer-learning experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus and noise bank")
    p.add_argument("--out", required=True)
    p.add_argument("--n-classes", type=int, default=8)
    p.add_argument("--per-class", type=int, default=20)
    p.add_argument("--bg-rate", type=float, default=0.5)
    p.add_argument("--split-ratios", type=float, nargs=3, default=[0.7, 0.1, 0.2])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=float, default=6.0)
    p.add_argument("--sample-rate", type=int, default=16000)
    p.add_argument("--incomplete-fraction", type=float, default=0.5)
    p.add_argument("--secondary-counts", type=int, nargs="+", default=[1, 2, 3])
    p.add_argument("--noise-level", type=float, default=0.02)
    p.add_argument("--bg-gain-range", type=float, nargs=2, default=[0.05, 0.3])
    p.add_argument("--noise-files", type=int, default=8)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train per an experiment config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="chunked inference + pooled metrics")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--regime-cutoffs", type=int, nargs=2, default=None)
    p.add_argument("--fg-bg", action="store_true", help="foreground/background recall analysis")
    p.add_argument("--mode", choices=["single_label", "multi_label"], default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grid", help="run an experiment grid sequentially")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("detect", help="energy detector over a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--mel-preset", choices=["passt", "psla"])
    group.add_argument("--mel-config", help="path to a MelConfig JSON")
    p.add_argument("--k", type=float, default=3.0)
    p.add_argument("--stride", type=float, default=3.0)
    p.set_defaults(func=cmd_detect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
