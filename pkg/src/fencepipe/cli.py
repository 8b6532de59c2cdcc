"""Command line entry point.

Every subcommand prints one JSON object on stdout so scripts can parse the
result. Exit codes: 0 success, 1 data problems (missing/corrupt files,
bad annotations), 2 configuration problems (bad flags or values). The
FENCEPIPE_SEED environment variable supplies the default seed when --seed
is not given.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import datapipe, detect, metrics, optim, report, synthgen, weights
from .errors import ConfigError, FencePipeError, SceneSpecError
from .models import ClassifierConfig, UNetConfig, build_classifier, build_unet

CLASSES = ("double", "single")


def _seed_of(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("FENCEPIPE_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"FENCEPIPE_SEED must be an integer, got {env!r}") from None
    return 0


def _pair(text: str, what: str) -> tuple[int, int]:
    for sep in (",", "x"):
        if sep in text:
            a, b = text.split(sep, 1)
            try:
                return int(a), int(b)
            except ValueError:
                break
    raise ConfigError(f"{what}: expected two integers like '40,40', got {text!r}")


def _resolve(manifest_path: str, p: str) -> str:
    if os.path.isabs(p) or os.path.exists(p):
        return p
    return os.path.join(os.path.dirname(os.path.abspath(manifest_path)), p)


def _entries_for(entries, split: str | None):
    if split is None or not any(e.split for e in entries):
        return list(entries)
    return [e for e in entries if e.split == split]


def _seg_samples(manifest_path: str, entries):
    samples = []
    for e in entries:
        if e.mask_path is None:
            raise FencePipeError(f"manifest entry {e.id}: no mask_path for segmentation")
        img = datapipe.load_image(_resolve(manifest_path, e.path))
        mask = datapipe.load_mask(_resolve(manifest_path, e.mask_path))
        samples.append((img, mask))
    return samples


def _cls_samples(manifest_path: str, entries, input_size: int):
    samples = []
    for e in entries:
        if e.fence not in CLASSES:
            raise FencePipeError(f"manifest entry {e.id}: unknown fence label {e.fence!r}")
        img = datapipe.load_image(_resolve(manifest_path, e.path))
        if img.shape[:2] != (input_size, input_size):
            img = datapipe.resize_for_classification(img, input_size)
        samples.append((img, CLASSES.index(e.fence)))
    return samples


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_synth(args) -> dict:
    seed = _seed_of(args)
    balance = _pair(args.balance, "--balance") if args.balance else None
    size = _pair(args.size, "--size")
    entries = synthgen.gen_dataset(args.out, args.count, balance, seed,
                                   args.source, size)
    return {
        "out": args.out,
        "images": len(entries),
        "manifest": os.path.join(args.out, "manifest.json"),
        "annotations": os.path.join(args.out, "annotations.json"),
        "seed": seed,
    }


def cmd_slice(args) -> dict:
    img = datapipe.load_image(args.image)
    tiles, grid = datapipe.slice_image(img, args.tile_size)
    os.makedirs(args.out, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.image))[0]
    for i, tile in enumerate(tiles):
        r, c = i // grid.cols, i % grid.cols
        datapipe.save_image(os.path.join(args.out, f"{stem}_r{r:03d}_c{c:03d}.png"), tile)
    written = len(tiles)
    if args.mask:
        mask = datapipe.load_mask(args.mask)
        if mask.shape != img.shape[:2]:
            raise FencePipeError(
                f"mask {mask.shape} does not match image {img.shape[:2]}"
            )
        mtiles, _ = datapipe.slice_image(mask, args.tile_size)
        for i, tile in enumerate(mtiles):
            r, c = i // grid.cols, i % grid.cols
            datapipe.save_mask(
                os.path.join(args.out, f"{stem}_r{r:03d}_c{c:03d}_mask.png"), tile
            )
    grid_path = os.path.join(args.out, f"{stem}_grid.json")
    datapipe.atomic_write_text(grid_path, json.dumps({
        "tile_size": grid.tile_size, "rows": grid.rows, "cols": grid.cols,
        "height": grid.height, "width": grid.width,
        "pad_bottom": grid.pad_bottom, "pad_right": grid.pad_right,
    }, sort_keys=True, indent=2) + "\n")
    return {"tiles": written, "rows": grid.rows, "cols": grid.cols,
            "pad_bottom": grid.pad_bottom, "pad_right": grid.pad_right,
            "grid": grid_path, "out": args.out}


def cmd_import_annotations(args) -> dict:
    docs = datapipe.load_annotations(args.annotations)
    os.makedirs(args.out, exist_ok=True)
    written = []
    for filename, regions in sorted(docs.items()):
        img_path = os.path.join(args.images, filename)
        img = datapipe.load_image(img_path)
        mask = datapipe.import_annotations(regions, img.shape[:2])
        out_path = os.path.join(args.out, os.path.splitext(filename)[0] + "_mask.png")
        datapipe.save_mask(out_path, mask)
        written.append(out_path)
    return {"masks": len(written), "out": args.out}


def cmd_augment(args) -> dict:
    seed = _seed_of(args)
    entries = datapipe.load_manifest(args.manifest)
    targets = _entries_for(entries, "train" if args.train_only else None)
    os.makedirs(os.path.join(args.out, "images"), exist_ok=True)
    os.makedirs(os.path.join(args.out, "masks"), exist_ok=True)
    rng = np.random.default_rng(seed)
    new_entries = []
    for e in targets:
        img = datapipe.load_image(_resolve(args.manifest, e.path))
        mask = None
        if e.mask_path is not None:
            mask = datapipe.load_mask(_resolve(args.manifest, e.mask_path))
        for k in range(args.per_image):
            plan = datapipe.plan_augment(rng, channels=img.shape[2])
            aug_img, aug_mask = datapipe.apply_augment(img, mask, plan)
            aug_id = f"{e.id}_aug{k}"
            ipath = os.path.join(args.out, "images", aug_id + ".png")
            datapipe.save_image(ipath, aug_img)
            mpath = None
            if aug_mask is not None:
                mpath = os.path.join(args.out, "masks", aug_id + ".png")
                datapipe.save_mask(mpath, aug_mask)
            new_entries.append(datapipe.ManifestEntry(
                aug_id, ipath, e.source, e.fence, e.split, mpath))
    out_manifest = os.path.join(args.out, "manifest.json")
    datapipe.save_manifest(out_manifest, list(entries) + new_entries)
    return {"written": len(new_entries), "manifest": out_manifest, "seed": seed}


def cmd_split(args) -> dict:
    seed = _seed_of(args)
    parts = args.fractions.split(",")
    if len(parts) != 3:
        raise ConfigError(f"--fractions: expected three values, got {args.fractions!r}")
    try:
        fractions = tuple(float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"--fractions: not numbers: {args.fractions!r}") from None
    entries = datapipe.load_manifest(args.manifest)
    out = datapipe.split_dataset(entries, fractions, seed)
    out_path = args.out or args.manifest
    datapipe.save_manifest(out_path, out)
    counts: dict[str, int] = {}
    for e in out:
        counts[e.split] = counts.get(e.split, 0) + 1
    return {"manifest": out_path, "seed": seed, **counts}


def _write_run_sidecar(log_path: str, config: dict) -> None:
    sidecar = os.path.splitext(log_path)[0] + ".run.json"
    datapipe.atomic_write_text(sidecar, json.dumps(config, sort_keys=True, indent=2) + "\n")


def cmd_train_seg(args) -> dict:
    seed = _seed_of(args)
    entries = datapipe.load_manifest(args.manifest)
    train_s = _seg_samples(args.manifest, _entries_for(entries, "train"))
    val_entries = [e for e in entries if e.split == "val"]
    val_s = _seg_samples(args.manifest, val_entries) if val_entries else ()
    cfg = UNetConfig(depth=args.depth, base_filters=args.filters)
    model = build_unet(cfg, seed)

    checkpoint = None
    if args.checkpoint_dir:
        os.makedirs(args.checkpoint_dir, exist_ok=True)

        def checkpoint(m, epoch, _row):
            weights.save_weights(m, os.path.join(args.checkpoint_dir, f"epoch{epoch:04d}.wfpv"))

    log = optim.train(model, train_s, val_s, loss=args.loss, epochs=args.epochs,
                      batch_size=args.batch_size, lr=args.lr,
                      optimizer=args.optimizer, seed=seed, checkpoint=checkpoint)
    weights.save_weights(model, args.out)
    result = {"weights": args.out, "seed": seed, "epochs": args.epochs}
    if args.log:
        log.to_csv(args.log)
        _write_run_sidecar(args.log, {
            "task": "segmentation", "loss": args.loss, "epochs": args.epochs,
            "batch_size": args.batch_size, "lr": args.lr, "optimizer": args.optimizer,
            "seed": seed, "depth": args.depth, "filters": args.filters,
        })
        result["log"] = args.log
    final = optim.evaluate_segmentation(model, train_s, args.loss)
    result["train"] = final
    if val_s:
        result["val"] = optim.evaluate_segmentation(model, list(val_s), args.loss)
    return result


def cmd_train_cls(args) -> dict:
    seed = _seed_of(args)
    entries = datapipe.load_manifest(args.manifest)
    train_s = _cls_samples(args.manifest, _entries_for(entries, "train"), args.input_size)
    val_entries = [e for e in entries if e.split == "val"]
    val_s = _cls_samples(args.manifest, val_entries, args.input_size) if val_entries else ()
    cfg = ClassifierConfig(kind=args.kind, num_classes=len(CLASSES),
                           input_size=args.input_size, blocks=args.blocks,
                           base_filters=args.filters)
    model = build_classifier(cfg, seed)
    log = optim.train(model, train_s, val_s, loss="ce", epochs=args.epochs,
                      batch_size=args.batch_size, lr=args.lr,
                      optimizer=args.optimizer, seed=seed)
    weights.save_weights(model, args.out)
    result = {"weights": args.out, "seed": seed, "epochs": args.epochs,
              "train": optim.evaluate_classifier(model, train_s)}
    if val_s:
        result["val"] = optim.evaluate_classifier(model, list(val_s))
    if args.log:
        log.to_csv(args.log)
        _write_run_sidecar(args.log, {
            "task": "classification", "kind": args.kind, "epochs": args.epochs,
            "batch_size": args.batch_size, "lr": args.lr, "optimizer": args.optimizer,
            "seed": seed, "input_size": args.input_size, "blocks": args.blocks,
            "filters": args.filters,
        })
        result["log"] = args.log
    return result


def cmd_eval(args) -> dict:
    model = weights.load_weights(args.weights)
    entries = datapipe.load_manifest(args.manifest)
    chosen = _entries_for(entries, args.split)
    if not chosen:
        raise FencePipeError(f"no manifest entries in split {args.split!r}")
    if model.kind == "unet":
        samples = _seg_samples(args.manifest, chosen)
        result = {"task": "segmentation", "split": args.split,
                  "count": len(samples), **optim.evaluate_segmentation(model, samples)}
    else:
        samples = _cls_samples(args.manifest, chosen, model.config.input_size)
        scores = optim.evaluate_classifier(model, samples)
        preds = optim.classifier_predictions(model, [x for x, _ in samples])
        actual = [CLASSES[y] for _, y in samples]
        predicted = [CLASSES[p] for p in preds]
        cm = metrics.confusion_matrix(actual, predicted, CLASSES)
        rep = metrics.class_report(cm)
        result = {
            "task": "classification", "split": args.split, "count": len(samples),
            **scores,
            "classes": list(CLASSES),
            "confusion": [[int(v) for v in row] for row in cm.counts],
            "report": rep.to_dict(),
        }
    if args.out:
        datapipe.atomic_write_text(args.out, json.dumps(result, sort_keys=True, indent=2) + "\n")
        result["out"] = args.out
    return result


def cmd_detect(args) -> dict:
    model = weights.load_weights(args.weights)
    if model.kind != "unet":
        raise ConfigError(f"detect needs segmentation weights, got kind {model.kind!r}")
    img = datapipe.load_image(args.image)
    tiles, grid = datapipe.slice_image(img, args.tile_size)
    from .models import forward  # local import keeps the module list tidy

    hard_tiles = []
    tile_boxes = []
    for tile in tiles:
        prob = forward(model, tile).data[:, :, 0]
        hard, _ = detect.binarize(prob, args.threshold)
        hard_tiles.append(hard)
        tile_boxes.append(detect.detect_boxes(hard, args.connectivity,
                                              args.min_area, args.pad))
    boxes = detect.map_to_global(tile_boxes, grid, hard_tiles,
                                 connectivity=args.connectivity,
                                 min_area=args.min_area, pad=args.pad)
    full_mask = datapipe.reassemble(hard_tiles, grid)
    os.makedirs(args.out, exist_ok=True)
    mask_path = os.path.join(args.out, "mask.png")
    datapipe.save_mask(mask_path, full_mask)
    overlay_path = os.path.join(args.out, "overlay.png")
    overlay = detect.render_overlay(img, boxes, width=args.line_width)
    datapipe.save_image(overlay_path, overlay)
    boxes_path = os.path.join(args.out, "boxes.json")
    payload = [{"x": b.x, "y": b.y, "w": b.w, "h": b.h} for b in boxes]
    datapipe.atomic_write_text(boxes_path, json.dumps(payload, sort_keys=True, indent=2) + "\n")
    result = {"count": len(boxes), "boxes": payload, "mask": mask_path,
              "overlay": overlay_path, "boxes_file": boxes_path}
    if args.gt_mask:
        gt = datapipe.load_mask(args.gt_mask)
        residual = detect.residual_mask(gt, full_mask)
        residual_path = os.path.join(args.out, "residual.png")
        datapipe.save_mask(residual_path, (residual > 0).astype(np.uint8))
        result["residual"] = residual_path
        result["iou"] = metrics.iou(gt, full_mask)
        result["dice"] = metrics.dice(gt, full_mask)
    return result


def cmd_report(args) -> dict:
    log = optim.TrainingLog.read_csv(args.log)
    batch_size = args.batch_size
    sidecar = os.path.splitext(args.log)[0] + ".run.json"
    if batch_size is None and os.path.exists(sidecar):
        with open(sidecar) as fh:
            batch_size = json.load(fh).get("batch_size")
    if batch_size is None:
        batch_size = 8
    files = report.write_report(args.out, log, batch_size=batch_size, title=args.title)
    if args.eval:
        with open(args.eval) as fh:
            eval_payload = json.load(fh)
        p = os.path.join(args.out, "class_report.json")
        datapipe.atomic_write_text(p, json.dumps(eval_payload, sort_keys=True, indent=2) + "\n")
        files.append(p)
    return {"out": args.out, "files": files, "batch_size": batch_size}


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fencepipe",
                                 description="Fence insulator segmentation and "
                                             "fence-type classification pipeline")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate a synthetic labelled dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--balance", default=None, help="single,double counts (default even)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--source", choices=("still", "drone"), default="still")
    p.add_argument("--size", default="128,128", help="height,width of each scene")
    p.set_defaults(fn=cmd_gen_synth)

    p = sub.add_parser("slice", help="cut an image (and optional mask) into tiles")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--tile-size", type=int, default=512)
    p.set_defaults(fn=cmd_slice)

    p = sub.add_parser("import-annotations",
                       help="rasterize VIA-style annotations into masks")
    p.add_argument("--annotations", required=True)
    p.add_argument("--images", required=True, help="directory with the annotated images")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_import_annotations)

    p = sub.add_parser("augment", help="write augmented copies of manifest images")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--per-image", type=int, default=1)
    p.add_argument("--train-only", action="store_true",
                   help="augment only entries whose split is 'train'")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_augment)

    p = sub.add_parser("split", help="assign stratified train/val/test splits")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=None, help="write here instead of in place")
    p.add_argument("--fractions", default="0.8,0.1,0.1")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_split)

    p = sub.add_parser("train-seg", help="train the segmentation U-Net")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="weights file to write")
    p.add_argument("--log", default=None, help="training log CSV")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--loss", choices=("dice", "bce"), default="dice")
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--filters", type=int, default=8)
    p.add_argument("--checkpoint-dir", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_train_seg)

    p = sub.add_parser("train-cls", help="train a fence-type classifier")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None)
    p.add_argument("--kind", choices=("cnn", "residual"), default="cnn")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--input-size", type=int, default=512)
    p.add_argument("--blocks", type=int, default=3)
    p.add_argument("--filters", type=int, default=8)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_train_cls)

    p = sub.add_parser("eval", help="evaluate weights on a manifest split")
    p.add_argument("--weights", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", default=None, help="also write the result JSON here")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("detect", help="segment an image and emit insulator boxes")
    p.add_argument("--weights", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tile-size", type=int, default=512)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--pad", type=int, default=3)
    p.add_argument("--min-area", type=int, default=1)
    p.add_argument("--connectivity", type=int, choices=(4, 8), default=8)
    p.add_argument("--line-width", type=int, default=1)
    p.add_argument("--gt-mask", default=None, help="ground truth for a residual mask")
    p.set_defaults(fn=cmd_detect)

    p = sub.add_parser("report", help="render tables, curve CSVs and figures from a log")
    p.add_argument("--log", required=True, help="training log CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--batch-size", type=int, default=None,
                   help="override the batch size recorded in the run sidecar")
    p.add_argument("--eval", default=None, help="eval JSON to include as class_report.json")
    p.add_argument("--title", default="training curves")
    p.set_defaults(fn=cmd_report)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        result = args.fn(args)
    except (ConfigError, SceneSpecError) as exc:
        print(f"fencepipe: config error: {exc}", file=sys.stderr)
        return 2
    except (FencePipeError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"fencepipe: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
