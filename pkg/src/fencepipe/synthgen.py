"""Synthetic fence scenes with exact ground truth.

Scenes contain one (single) or two (double) horizontal fence line groups:
a few dark wires, dark posts, and bright insulators where posts cross
wires. Insulator ground truth is produced by rasterizing the very regions
that get written to the annotation file, so re-importing the annotations
reproduces the stored mask bit for bit.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .datapipe import (
    ManifestEntry,
    Region,
    SceneImage,
    rasterize_regions,
    save_annotations,
    save_image,
    save_manifest,
    save_mask,
)
from .detect import BBox, bbox_of, find_components
from .errors import ConfigError, SceneSpecError
from .optim import MetaTask


@dataclass
class SceneSpec:
    fence: str = "double"  # "single" | "double"
    source: str = "still"  # "still" | "drone"
    height: int = 256
    width: int = 256
    insulators: int = 4
    insulator_size: Optional[tuple[int, int]] = None  # fixed (w, h)
    insulator_positions: Optional[list[tuple[int, int]]] = None  # top-left corners
    insulator_shape: str = "mixed"  # "rect" | "polygon" | "mixed"
    wires_per_line: int = 3
    post_spacing: int = 48
    jitter: float = 1.0
    seed: int = 0


@dataclass
class GroundTruth:
    fence: str
    mask: np.ndarray
    instance_masks: list[np.ndarray] = field(default_factory=list)
    boxes: list[BBox] = field(default_factory=list)
    regions: list[Region] = field(default_factory=list)


def _validate(spec: SceneSpec) -> None:
    if spec.fence not in ("single", "double"):
        raise SceneSpecError(f"fence must be 'single' or 'double', got {spec.fence!r}")
    if spec.source not in ("still", "drone"):
        raise SceneSpecError(f"source must be 'still' or 'drone', got {spec.source!r}")
    if spec.height < 16 or spec.width < 16:
        raise SceneSpecError(f"scene must be at least 16x16, got {spec.height}x{spec.width}")
    if spec.insulators < 0:
        raise SceneSpecError(f"insulators must be >= 0, got {spec.insulators}")
    if spec.wires_per_line < 1:
        raise SceneSpecError(f"wires_per_line must be >= 1, got {spec.wires_per_line}")
    if spec.post_spacing < 4:
        raise SceneSpecError(f"post_spacing must be >= 4, got {spec.post_spacing}")
    if spec.insulator_positions is not None and len(spec.insulator_positions) != spec.insulators:
        raise SceneSpecError(
            f"{len(spec.insulator_positions)} positions given for {spec.insulators} insulators"
        )
    if spec.insulator_shape not in ("rect", "polygon", "mixed"):
        raise SceneSpecError(f"unknown insulator shape {spec.insulator_shape!r}")


def _line_centers(spec: SceneSpec, rng: np.random.Generator) -> list[int]:
    h = spec.height
    wiggle = spec.jitter * h / 16.0
    if spec.fence == "single":
        fracs = [0.5]
    else:
        fracs = [0.35, 0.65]
    return [int(np.clip(f * h + rng.uniform(-wiggle, wiggle), h * 0.1, h * 0.9)) for f in fracs]


def _hexagon(x0: int, y0: int, w: int, h: int) -> Region:
    """Flat-topped hexagon inscribed in the box; integer vertices."""
    inset = max(1, w // 4)
    xs = (x0 + inset, x0 + w - inset, x0 + w, x0 + w - inset, x0 + inset, x0)
    ys = (y0, y0, y0 + h // 2, y0 + h, y0 + h, y0 + h // 2)
    return Region("polygon", "insulator", tuple(float(v) for v in xs),
                  tuple(float(v) for v in ys))


def gen_scene(spec: SceneSpec) -> tuple[SceneImage, GroundTruth]:
    """Render one scene and its exact ground truth, fully determined by spec.seed."""
    _validate(spec)
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width

    base = rng.uniform(0.35, 0.55, size=3)
    img = np.empty((h, w, 3))
    img[:] = base
    img += rng.normal(0.0, 0.03, size=(h, w, 3))
    img += np.linspace(-0.04, 0.04, h)[:, None, None]  # soft vertical light gradient

    centers = _line_centers(spec, rng)
    wire_gap = max(3, h // 32)
    wire_dark = rng.uniform(0.08, 0.2)
    wire_rows: list[int] = []
    for cy in centers:
        span = (spec.wires_per_line - 1) * wire_gap
        top = cy - span // 2
        for k in range(spec.wires_per_line):
            row = int(np.clip(top + k * wire_gap, 0, h - 1))
            wire_rows.append(row)
            thick = 2 if spec.source == "drone" else 1
            img[row : min(row + thick, h), :, :] = wire_dark

    # cap the offset so the first post stays in frame even on small scenes
    first = spec.post_spacing // 2
    offset = int(rng.integers(0, min(spec.post_spacing, max(1, w - 2 - first))))
    post_xs = list(range(offset + first, w - 2, spec.post_spacing))
    post_dark = rng.uniform(0.1, 0.22)
    margin = max(4, h // 32)
    for x in post_xs:
        if spec.source == "drone":
            for cy in centers:  # seen from above: posts are stubby ticks on the band
                y0 = max(0, cy - 2)
                img[y0 : min(cy + 3, h), x : min(x + 3, w), :] = post_dark
        else:
            y0 = max(0, min(wire_rows) - margin)
            y1 = min(h, max(wire_rows) + margin + 1)
            img[y0:y1, x : min(x + 2, w), :] = post_dark

    truth = GroundTruth(spec.fence, np.zeros((h, w), dtype=np.uint8))
    anchors = _insulator_anchors(spec, rng, post_xs, wire_rows)
    for x0, y0, bw, bh in anchors:
        if spec.insulator_shape == "rect":
            use_poly = False
        elif spec.insulator_shape == "polygon":
            use_poly = True
        else:
            use_poly = bool(rng.integers(0, 2))
        if use_poly and bw >= 4 and bh >= 2:
            region = _hexagon(x0, y0, bw, bh)
        else:
            region = Region("rect", "insulator",
                            x=float(x0), y=float(y0), width=float(bw), height=float(bh))
        inst = rasterize_regions([region], (h, w))
        tint = rng.uniform(0.82, 0.95, size=3)
        img[inst == 1] = tint
        truth.regions.append(region)
        truth.instance_masks.append(inst)
        blobs = find_components(inst, connectivity=8)
        truth.boxes.append(bbox_of(blobs[0], pad=0, image_shape=(h, w)))
        truth.mask |= inst

    np.clip(img, 0.0, 1.0, out=img)
    return SceneImage(img, spec.source, spec.fence), truth


def _insulator_anchors(spec: SceneSpec, rng: np.random.Generator,
                       post_xs: list[int], wire_rows: list[int]):
    """Choose top-left corners and sizes for the insulators.

    Random placement snaps to post/wire crossings with sizes capped below the
    crossing spacing, so instances never overlap. Explicit positions are
    validated against the image bounds instead.
    """
    h, w = spec.height, spec.width
    wire_gap = max(3, h // 32)
    out = []
    if spec.insulators == 0:
        return out

    if spec.insulator_positions is not None:
        for x0, y0 in spec.insulator_positions:
            bw, bh = spec.insulator_size or (6, 4)
            if x0 < 0 or y0 < 0 or x0 + bw > w or y0 + bh > h:
                raise SceneSpecError(
                    f"insulator at ({x0},{y0}) size {bw}x{bh} exceeds {w}x{h} scene"
                )
            out.append((int(x0), int(y0), int(bw), int(bh)))
        return out

    crossings = [(x, y) for x in post_xs for y in wire_rows]
    if len(crossings) < spec.insulators:
        raise SceneSpecError(
            f"cannot place {spec.insulators} insulators on {len(crossings)} wire/post crossings"
        )
    picks = rng.choice(len(crossings), size=spec.insulators, replace=False)
    for i in sorted(int(p) for p in picks):
        cx, cy = crossings[i]
        if spec.insulator_size is not None:
            bw, bh = spec.insulator_size
        else:
            bw = int(rng.integers(4, max(5, min(spec.post_spacing - 1, w // 16)) + 1))
            bh = int(rng.integers(2, wire_gap + 1))
        bw = min(bw, spec.post_spacing - 1)
        bh = min(bh, wire_gap)
        x0 = int(np.clip(cx - bw // 2, 0, w - bw))
        y0 = int(np.clip(cy - bh // 2, 0, h - bh))
        out.append((x0, y0, bw, bh))
    return out


def gen_dataset(out_dir, n: int, balance: Optional[tuple[int, int]] = None,
                seed: int = 0, source: str = "still",
                size: tuple[int, int] = (128, 128)) -> list[ManifestEntry]:
    """Generate n scenes (single/double per balance), write images, masks,
    one annotation file and a manifest; returns the manifest entries.

    Per-image seeds are derived from the master seed, so any one image can
    be regenerated without the rest.
    """
    if n < 1:
        raise ConfigError(f"gen_dataset: n must be >= 1, got {n}")
    if balance is None:
        balance = (n - n // 2, n // 2)
    if balance[0] + balance[1] != n or min(balance) < 0:
        raise ConfigError(f"gen_dataset: balance {balance} does not sum to n={n}")

    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "masks"), exist_ok=True)
    children = np.random.SeedSequence(seed).spawn(n)
    labels = ["single"] * balance[0] + ["double"] * balance[1]
    entries: list[ManifestEntry] = []
    docs: dict[str, list[Region]] = {}
    for i, (label, child) in enumerate(zip(labels, children)):
        child_seed = int(child.generate_state(1)[0])
        count_rng = np.random.default_rng(child_seed)
        insulators = int(count_rng.integers(1, 5))
        if min(size) < 32:
            insulators = min(insulators, 3)  # a lone post offers 3 crossings
        spec = SceneSpec(
            fence=label, source=source, height=size[0], width=size[1],
            insulators=insulators, post_spacing=max(6, min(48, size[1] // 5)),
            seed=child_seed,
        )
        scene, truth = gen_scene(spec)
        image_id = f"{source}_{label}_{i:04d}"
        img_name = f"{image_id}.png"
        img_path = os.path.join(out_dir, "images", img_name)
        mask_path = os.path.join(out_dir, "masks", img_name)
        save_image(img_path, scene.pixels)
        save_mask(mask_path, truth.mask)
        docs[img_name] = truth.regions
        entries.append(ManifestEntry(
            id=image_id, path=img_path, source=source, fence=label,
            mask_path=mask_path, seed=child_seed,
        ))
    save_annotations(os.path.join(out_dir, "annotations.json"), docs)
    save_manifest(os.path.join(out_dir, "manifest.json"), entries)
    return entries


# ---------------------------------------------------------------------------
# few-shot episodes


def make_episode(seed: int, shots: int = 5, queries: int = 8,
                 size: int = 32, permute_labels: bool = False) -> MetaTask:
    """Build a 2-way fence-type episode with a task-specific rendering style.

    The task seed fixes a style (background, wire look, spacing) and draws
    support and query scenes per class. With permute_labels the fence-to-
    class mapping is shuffled per task, which forces label inference from
    the support set; by default single=0, double=1.
    """
    if shots < 1 or queries < 1:
        raise ConfigError("make_episode: shots and queries must be >= 1")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(2) if permute_labels else np.array([0, 1])
    style_spacing = int(rng.integers(8, 14))
    style_wires = int(rng.integers(2, 4))
    base_offset = int(rng.integers(0, 2 ** 31))

    def render(fence: str, k: int) -> np.ndarray:
        spec = SceneSpec(
            fence=fence, source="still", height=size, width=size,
            insulators=0, wires_per_line=style_wires, post_spacing=style_spacing,
            seed=base_offset + k,
        )
        scene, _ = gen_scene(spec)
        return scene.pixels

    xs_s, ys_s, xs_q, ys_q = [], [], [], []
    for ci, fence in enumerate(("single", "double")):
        label = int(perm[ci])
        for k in range(shots):
            xs_s.append(render(fence, 2 * k + ci * 10007))
            ys_s.append(label)
        for k in range(queries):
            xs_q.append(render(fence, 70001 + 2 * k + ci * 10007))
            ys_q.append(label)
    return MetaTask(xs_s, ys_s, xs_q, ys_q)
