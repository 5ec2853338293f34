"""Command-line entry point for the full pipeline.

Subcommands: synth, ingest, pairs, train-ocr, train-fusion, eval, match.
Configuration comes from an INI file (``--config``), ``VRID_*``
environment overrides, then command-line flags; every run writes a
manifest recording the resolved configuration and library versions.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import cv2
import numpy as np

from .config import ConfigError, PipelineConfig, load_config, config_hash, write_manifest
from .evalkit import run_cross_validation
from .fusion import load_bundle, save_bundle
from .ingest import (PLATE_HEIGHT, PLATE_WIDTH, SHAPE_SIZE, GroundTruthError,
                     annotation_counts, parse_ground_truth, to_unit_float)
from .ocr_stream import build_cnn_ocr, build_ocr_descriptor, fit_cnn_ocr, labels_from_text, read_plate
from .pairgen import make_split_plan, pairs_to_csv
from .pipeline import CorpusPairSource, DatasetView, FusionClassifier, ReadingBank
from .checkpoints import CheckpointError, load_weights, save_weights
from .shape_stream import patches_to_tensor
from .synthgen import generate, video_name


def _say(msg: str) -> None:
    print(msg, flush=True)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vrid",
        description="Two-stream vehicle re-identification pipeline")
    parser.add_argument("--config", help="INI config file (env prefix VRID_)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", help="output directory (default: config data_dir)")
    p.add_argument("--seed", type=int)
    p.add_argument("--vehicles", type=int, help="vehicles per camera per set")

    p = sub.add_parser("ingest", help="parse and validate ground truth; report counts")
    p.add_argument("--data", help="corpus directory")

    p = sub.add_parser("pairs", help="write per-set pair manifests")
    p.add_argument("--data")
    p.add_argument("--out")

    p = sub.add_parser("train-ocr", help="train the character detector")
    p.add_argument("--data", help="directory of plate .png + .txt label files")
    p.add_argument("--out")
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("train-fusion", help="train the two-stream matcher")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--round", type=int, default=1, choices=range(1, 6))
    p.add_argument("--ocr-weights", help="frozen detector checkpoint")
    p.add_argument("--shape-only", action="store_true", help="train the shape-only ablation")

    p = sub.add_parser("eval", help="run cross-validation and write reports")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--rounds", default="all", help="'all' or a round number 1-5")
    p.add_argument("--ocr-weights")

    p = sub.add_parser("match", help="classify one pair of shape/plate images")
    p.add_argument("images", nargs=4, metavar=("IMG_A", "IMG_B", "PLATE_A", "PLATE_B"))
    p.add_argument("--bundle", required=True, help="trained two-stream bundle")
    return parser


def _load_image(path: str, width: int, height: int) -> np.ndarray:
    img = cv2.imread(path, cv2.IMREAD_COLOR)
    if img is None:
        raise FileNotFoundError(f"image not found or unreadable: {path}")
    return cv2.resize(to_unit_float(img), (width, height), interpolation=cv2.INTER_LINEAR)


def _dataset(cfg: PipelineConfig, data_dir: str | None) -> DatasetView:
    root = Path(data_dir or cfg.data_dir)
    sets = sorted({p.stem.split("_set")[1] for p in root.glob("cam1_set*.xml")})
    if not sets:
        raise FileNotFoundError(f"no ground-truth XML files under {root}")
    return DatasetView.from_directory(root, tuple(sets), cfg.shape_expand)


def cmd_synth(cfg: PipelineConfig, args) -> int:
    synth = cfg.synth
    if args.seed is not None:
        synth = dataclasses.replace(synth, seed=args.seed)
    if args.vehicles is not None:
        synth = dataclasses.replace(synth, vehicles_per_camera=args.vehicles)
    cfg.synth = synth
    outdir = Path(args.out or cfg.data_dir)
    corpus = generate(synth)
    corpus.write(outdir)
    n_ocr = corpus.write_ocr_training_set(outdir / "ocr_train")
    write_manifest(outdir, cfg, "synth", extra={
        "vehicles": len(corpus.vehicles),
        "clone_pairs": corpus.clone_pairs,
        "hamming1_pairs": corpus.hamming1_pairs,
    })
    _say(f"wrote {len(corpus.vehicles)} vehicles over {len(corpus.set_ids())} sets to {outdir} "
         f"({len(corpus.clone_pairs)} clone pairs, {len(corpus.hamming1_pairs)} hamming-1 pairs, "
         f"{n_ocr} detector training samples)")
    return 0


def cmd_ingest(cfg: PipelineConfig, args) -> int:
    root = Path(args.data or cfg.data_dir)
    stats = {}
    totals = {1: [0, 0], 2: [0, 0]}
    for xml_path in sorted(root.glob("cam*_set*.xml")):
        annotations = parse_ground_truth(xml_path.read_text())
        n, legible = annotation_counts(annotations)
        camera = annotations[0].camera_id if annotations else int(xml_path.stem[3])
        stats[xml_path.stem] = {"vehicles": n, "legible_plates": legible}
        totals[camera][0] += n
        totals[camera][1] += legible
        _say(f"{xml_path.stem}: {n} vehicles, {legible} legible plates")
    if not stats:
        raise FileNotFoundError(f"no ground-truth XML files under {root}")
    for camera in (1, 2):
        _say(f"camera {camera} totals: {totals[camera][0]} vehicles, {totals[camera][1]} plates")
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "ingest_stats.json").write_text(json.dumps(stats, indent=2) + "\n")
    write_manifest(outdir, cfg, "ingest", extra={"stats": stats})
    return 0


def cmd_pairs(cfg: PipelineConfig, args) -> int:
    dataset = _dataset(cfg, args.data)
    outdir = Path(args.out or cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    summary = {}
    for set_id in dataset.set_ids():
        pairs = dataset.pairs_for_set(set_id, cfg.pair_negative_ratio, seed=cfg.train.seed)
        n_match = sum(p.is_matching for p in pairs)
        (outdir / f"pairs_{set_id}.csv").write_text(pairs_to_csv(pairs))
        summary[set_id] = {"matching": n_match, "non_matching": len(pairs) - n_match}
        _say(f"set {set_id}: {n_match} matching, {len(pairs) - n_match} non-matching")
    write_manifest(outdir, cfg, "pairs", extra={"pairs": summary})
    return 0


def cmd_train_ocr(cfg: PipelineConfig, args) -> int:
    data_dir = Path(args.data or (Path(cfg.data_dir) / "ocr_train"))
    samples = []
    for png in sorted(data_dir.glob("*.png")):
        labels = labels_from_text(png.with_suffix(".txt").read_text())
        samples.append((to_unit_float(cv2.imread(str(png), cv2.IMREAD_COLOR)), labels))
    if not samples:
        raise FileNotFoundError(f"no training samples under {data_dir}")
    epochs = args.epochs or cfg.ocr.epochs
    net = build_cnn_ocr(seed=cfg.ocr.seed)
    history = fit_cnn_ocr(net, samples, epochs=epochs, learning_rate=cfg.ocr.learning_rate,
                          batch_size=cfg.ocr.batch_size, seed=cfg.ocr.seed,
                          augment=cfg.ocr.augment, log=_say)
    outdir = Path(args.out or cfg.output_dir)
    save_weights(net, outdir / "ocr.pt", kind="cnn_ocr", extra={"loss_history": history})
    write_manifest(outdir, cfg, "train-ocr", extra={"samples": len(samples), "final_loss": history[-1]})
    _say(f"saved detector weights to {outdir / 'ocr.pt'} (final loss {history[-1]:.4f})")
    return 0


def _reading_bank(cfg: PipelineConfig, dataset: DatasetView, ocr_weights: str | None):
    path = Path(ocr_weights or (Path(cfg.output_dir) / "ocr.pt"))
    net = build_cnn_ocr()
    load_weights(net, path, kind="cnn_ocr")
    net.eval()
    return net, ReadingBank(dataset, net, cfg.conf_threshold, cfg.nms_iou)


def cmd_train_fusion(cfg: PipelineConfig, args) -> int:
    dataset = _dataset(cfg, args.data)
    plan = make_split_plan()
    rnd = plan.rounds[args.round - 1]
    ocr_net, bank = (None, None)
    if not args.shape_only:
        ocr_net, bank = _reading_bank(cfg, dataset, args.ocr_weights)
    source = CorpusPairSource(dataset, bank, augment_seed=cfg.train.seed)
    classifier = FusionClassifier(source, cfg.train, use_ocr=not args.shape_only, log=_say)
    train_pairs = [p for s in rnd.train for p in
                   dataset.pairs_for_set(s, cfg.pair_negative_ratio, cfg.train.seed)]
    val_pairs = [p for s in rnd.val for p in
                 dataset.pairs_for_set(s, cfg.pair_negative_ratio, cfg.train.seed)]
    classifier.fit(train_pairs, val_pairs)
    outdir = Path(args.out or cfg.output_dir)
    name = "bundle_shape_only.pt" if args.shape_only else "bundle.pt"
    save_bundle(outdir / name, classifier.model, ocr_net, config_hash(cfg))
    write_manifest(outdir, cfg, "train-fusion", extra={
        "round": args.round,
        "best_epoch": classifier.result.best_epoch + 1,
        "best_val_fscore": classifier.result.best_val_f,
    })
    _say(f"saved {outdir / name} (best val F {classifier.result.best_val_f:.4f} "
         f"at epoch {classifier.result.best_epoch + 1})")
    return 0


def cmd_eval(cfg: PipelineConfig, args) -> int:
    dataset = _dataset(cfg, args.data)
    plan = make_split_plan()
    if args.rounds != "all":
        index = int(args.rounds)
        if not 1 <= index <= len(plan.rounds):
            raise ConfigError(f"--rounds must be 'all' or 1..{len(plan.rounds)}")
        plan = dataclasses.replace(plan, rounds=(plan.rounds[index - 1],))
    ocr_net, bank = _reading_bank(cfg, dataset, args.ocr_weights)
    source = CorpusPairSource(dataset, bank, augment_seed=cfg.train.seed)
    pair_sets = {s: dataset.pairs_for_set(s, cfg.pair_negative_ratio, cfg.train.seed)
                 for s in dataset.set_ids()}
    report = run_cross_validation(
        pair_sets, plan,
        model_factory=lambda: FusionClassifier(source, cfg.train, log=_say),
        log=_say)
    outdir = Path(args.out or cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "report.csv").write_text(report.to_csv())
    (outdir / "report.json").write_text(report.to_json() + "\n")
    report.save_plot(outdir / "report.png")
    write_manifest(outdir, cfg, "eval", extra={"average_fscore": report.avg_fscore})
    _say(f"average precision {report.avg_precision:.4f}, recall {report.avg_recall:.4f}, "
         f"F-score {report.avg_fscore:.4f}; reports under {outdir}")
    return 0


def cmd_match(cfg: PipelineConfig, args) -> int:
    model, ocr_net, _ = load_bundle(args.bundle)
    img_a, img_b, plate_a, plate_b = args.images
    shapes = patches_to_tensor([_load_image(img_a, SHAPE_SIZE, SHAPE_SIZE),
                                _load_image(img_b, SHAPE_SIZE, SHAPE_SIZE)])
    descriptor = None
    if model.use_ocr:
        if ocr_net is None:
            raise CheckpointError("bundle lacks detector weights needed for the text stream")
        r1 = read_plate(ocr_net, _load_image(plate_a, PLATE_WIDTH, PLATE_HEIGHT),
                        cfg.conf_threshold, cfg.nms_iou)
        r2 = read_plate(ocr_net, _load_image(plate_b, PLATE_WIDTH, PLATE_HEIGHT),
                        cfg.conf_threshold, cfg.nms_iou)
        descriptor = build_ocr_descriptor(r1, r2)
        _say(f"plate A: {r1.text!r}  plate B: {r2.text!r}")
        _say("descriptor: [" + ", ".join(f"{v:.3f}" for v in descriptor) + "]")
    import torch
    ocr_tensor = (torch.from_numpy(descriptor.astype(np.float32))[None]
                  if descriptor is not None else None)
    decision = model.decide(shapes[0:1], shapes[1:2], ocr_tensor)[0]
    _say(f"decision: {decision.label} (p_match={decision.p_match:.4f}, "
         f"p_nonmatch={decision.p_nonmatch:.4f})")
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "pairs": cmd_pairs,
    "train-ocr": cmd_train_ocr,
    "train-fusion": cmd_train_fusion,
    "eval": cmd_eval,
    "match": cmd_match,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        return _COMMANDS[args.command](cfg, args)
    except (ConfigError, GroundTruthError, CheckpointError, FileNotFoundError, ValueError,
            RuntimeError) as exc:
        sys.stderr.write(json.dumps({"error": str(exc), "command": args.command}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
