"""Mask post-processing: threshold, label blobs, box them, map to the image.

Components are found with a two-pass union-find labelling written here (no
image library); blobs come back ordered by their first pixel in scan order
so downstream output is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, EmptyInputError
from .datapipe import TileGrid, reassemble


def binarize(mask: np.ndarray, threshold: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Threshold a soft map with >= and return ({0,1} mask, 0/255 render)."""
    arr = np.asarray(mask, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"binarize: expected [H,W], got {arr.shape}")
    if arr.size == 0:
        raise EmptyInputError("binarize: empty mask")
    if not 0.0 <= threshold <= 1.0:
        raise ConfigError(f"binarize: threshold must be in [0,1], got {threshold}")
    hard = (arr >= threshold).astype(np.uint8)
    return hard, hard * 255


@dataclass
class Blob:
    """One connected foreground component."""

    pixels: np.ndarray  # [N,2] array of (row, col), scan order
    connectivity: int

    @property
    def area(self) -> int:
        return self.pixels.shape[0]

    @property
    def first_pixel(self) -> tuple[int, int]:
        return (int(self.pixels[0, 0]), int(self.pixels[0, 1]))


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box: x,y is the top-left corner, w,h the size in pixels."""

    x: int
    y: int
    w: int
    h: int

    def contains(self, row: int, col: int) -> bool:
        return self.x <= col < self.x + self.w and self.y <= row < self.y + self.h

    def translate(self, dx: int, dy: int) -> "BBox":
        return BBox(self.x + dx, self.y + dy, self.w, self.h)


class _UnionFind:
    def __init__(self):
        self.parent: list[int] = []

    def make(self) -> int:
        self.parent.append(len(self.parent))
        return len(self.parent) - 1

    def find(self, a: int) -> int:
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:  # path compression
            self.parent[a], a = root, self.parent[a]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def find_components(mask: np.ndarray, connectivity: int = 8, min_area: int = 1) -> list[Blob]:
    """Label connected foreground components of a binary mask.

    Two-pass union-find over the foreground pixels only. Components smaller
    than min_area are dropped. Output order is by first pixel in scan order.
    """
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise DimensionError(f"find_components: expected [H,W], got {arr.shape}")
    if arr.size == 0:
        raise EmptyInputError("find_components: empty mask")
    if connectivity not in (4, 8):
        raise ConfigError(f"find_components: connectivity must be 4 or 8, got {connectivity}")
    if min_area < 1:
        raise ConfigError(f"find_components: min_area must be >= 1, got {min_area}")

    h, w = arr.shape
    fg = arr != 0
    labels = np.full((h, w), -1, dtype=np.int64)
    uf = _UnionFind()
    if connectivity == 4:
        back = ((-1, 0), (0, -1))
    else:
        back = ((-1, -1), (-1, 0), (-1, 1), (0, -1))
    coords = np.argwhere(fg)
    for r, c in coords:
        best = -1
        for dr, dc in back:
            rr, cc = r + dr, c + dc
            if 0 <= rr < h and 0 <= cc < w and labels[rr, cc] >= 0:
                lab = labels[rr, cc]
                best = lab if best < 0 else best
                if lab != best:
                    uf.union(best, lab)
        labels[r, c] = uf.make() if best < 0 else best

    groups: dict[int, list[tuple[int, int]]] = {}
    order: list[int] = []
    for r, c in coords:  # argwhere is scan order, so first pixel rules hold
        root = uf.find(labels[r, c])
        if root not in groups:
            groups[root] = []
            order.append(root)
        groups[root].append((int(r), int(c)))
    blobs = [Blob(np.asarray(groups[root], dtype=np.int64), connectivity) for root in order]
    return [b for b in blobs if b.area >= min_area]


def bbox_of(blob: Blob, pad: int = 3, image_shape: tuple[int, int] | None = None) -> BBox:
    """Tight box around a blob grown by pad on every side, clamped to the image."""
    if pad < 0:
        raise ConfigError(f"bbox_of: pad must be >= 0, got {pad}")
    if blob.area == 0:
        raise EmptyInputError("bbox_of: blob has no pixels")
    rows = blob.pixels[:, 0]
    cols = blob.pixels[:, 1]
    y0 = int(rows.min()) - pad
    y1 = int(rows.max()) + pad + 1
    x0 = int(cols.min()) - pad
    x1 = int(cols.max()) + pad + 1
    if image_shape is not None:
        h, w = int(image_shape[0]), int(image_shape[1])
        y0, x0 = max(y0, 0), max(x0, 0)
        y1, x1 = min(y1, h), min(x1, w)
    return BBox(x0, y0, x1 - x0, y1 - y0)


def detect_boxes(mask: np.ndarray, connectivity: int = 8, min_area: int = 1,
                 pad: int = 3) -> list[BBox]:
    """binarize-free convenience: boxes of all components of a hard mask."""
    shape = np.asarray(mask).shape
    return [bbox_of(b, pad, shape) for b in find_components(mask, connectivity, min_area)]


def map_to_global(tile_boxes: list[list[BBox]], grid: TileGrid,
                  tile_masks: list[np.ndarray] | None = None, *,
                  connectivity: int = 8, min_area: int = 1, pad: int = 3) -> list[BBox]:
    """Lift per-tile boxes into whole-image coordinates.

    Without tile_masks, each box is offset by its tile origin and boxes that
    lie entirely in the replication padding are dropped; blobs straddling a
    tile edge stay split. With tile_masks, components are recomputed on the
    reassembled mask, which merges straddlers exactly and applies min_area
    at the image level.
    """
    if len(tile_boxes) != grid.rows * grid.cols:
        raise DimensionError(
            f"map_to_global: {len(tile_boxes)} box lists for a "
            f"{grid.rows}x{grid.cols} grid"
        )
    if tile_masks is not None:
        if len(tile_masks) != grid.rows * grid.cols:
            raise DimensionError(
                f"map_to_global: {len(tile_masks)} masks for a "
                f"{grid.rows}x{grid.cols} grid"
            )
        full = reassemble(list(tile_masks), grid)
        return detect_boxes(full, connectivity, min_area, pad)

    out: list[BBox] = []
    for i, boxes in enumerate(tile_boxes):
        x0, y0 = grid.origin(i // grid.cols, i % grid.cols)
        for box in boxes:
            g = box.translate(x0, y0)
            if g.x >= grid.width or g.y >= grid.height:
                continue  # entirely inside the padded border
            out.append(g)
    return out


def render_overlay(image: np.ndarray, boxes: list[BBox],
                   color: tuple[float, float, float] = (1.0, 0.0, 0.0),
                   width: int = 1) -> np.ndarray:
    """Draw box outlines on a copy of the image. Drawing twice is a no-op
    on top of the first pass (pixels are set, not blended)."""
    arr = np.array(image, dtype=np.float64, copy=True)
    if arr.ndim != 3:
        raise DimensionError(f"render_overlay: expected [H,W,C], got {arr.shape}")
    if width < 1:
        raise ConfigError(f"render_overlay: width must be >= 1, got {width}")
    h, w = arr.shape[:2]
    col = np.asarray(color, dtype=np.float64)
    if col.shape != (arr.shape[2],):
        raise DimensionError("render_overlay: color length does not match channels")
    for box in boxes:
        for k in range(width):
            x0, y0 = box.x + k, box.y + k
            x1, y1 = box.x + box.w - k, box.y + box.h - k
            if x1 - x0 <= 0 or y1 - y0 <= 0:
                break
            xs = slice(max(x0, 0), min(x1, w))
            ys = slice(max(y0, 0), min(y1, h))
            if 0 <= y0 < h:
                arr[y0, xs] = col
            if 0 <= y1 - 1 < h:
                arr[y1 - 1, xs] = col
            if 0 <= x0 < w:
                arr[ys, x0] = col
            if 0 <= x1 - 1 < w:
                arr[ys, x1 - 1] = col
    return arr


def residual_mask(gt: np.ndarray, pred: np.ndarray) -> np.ndarray:
    """Absolute difference |gt - pred| of two same-shape masks."""
    g = np.asarray(gt, dtype=np.float64)
    p = np.asarray(pred, dtype=np.float64)
    if g.shape != p.shape:
        raise DimensionError(f"residual_mask: shape mismatch {g.shape} vs {p.shape}")
    if g.size == 0:
        raise EmptyInputError("residual_mask: empty masks")
    return np.abs(g - p)
