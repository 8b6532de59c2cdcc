"""Data plumbing: tiles, annotations, augmentation, splits and file I/O.

Images are float64 [H,W,C] in [0,1]; masks are uint8 [H,W] with values
{0,1}. Tiling is exact: slice then reassemble returns the input
bit-for-bit. Polygon rasterization uses the even-odd rule sampled at
pixel centers, with centers on the boundary counting as inside.
"""

from __future__ import annotations

import io
import json
import math
import os
import tempfile
import warnings
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .errors import (
    AnnotationError,
    ConfigError,
    DataError,
    DimensionError,
    EmptyInputError,
)


# ---------------------------------------------------------------------------
# core records


@dataclass
class SceneImage:
    pixels: np.ndarray  # [H,W,3] float64 in [0,1]
    source: str = "still"  # "drone" | "still"
    fence: str = "unknown"  # "single" | "double"
    id: str = ""


@dataclass
class ManifestEntry:
    id: str
    path: str
    source: str
    fence: str
    split: Optional[str] = None
    mask_path: Optional[str] = None
    seed: Optional[int] = None

    def to_dict(self) -> dict:
        d = {"id": self.id, "path": self.path, "source": self.source, "fence": self.fence}
        if self.split is not None:
            d["split"] = self.split
        if self.mask_path is not None:
            d["mask_path"] = self.mask_path
        if self.seed is not None:
            d["seed"] = self.seed
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestEntry":
        try:
            return cls(d["id"], d["path"], d["source"], d["fence"],
                       d.get("split"), d.get("mask_path"), d.get("seed"))
        except KeyError as exc:
            raise DataError(f"manifest entry missing field {exc}") from None


# ---------------------------------------------------------------------------
# atomic file I/O


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temp file in the same directory and rename into place."""
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def save_image(path, image: np.ndarray) -> None:
    """Save a [H,W,3] float image in [0,1] as 8-bit PNG (or PPM by extension)."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DimensionError(f"save_image: expected [H,W,3], got {arr.shape}")
    u8 = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    fmt = "PPM" if os.fspath(path).lower().endswith((".ppm", ".pnm")) else "PNG"
    Image.fromarray(u8, mode="RGB").save(buf, format=fmt)
    atomic_write_bytes(path, buf.getvalue())


def load_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return arr / 255.0


def save_mask(path, mask: np.ndarray) -> None:
    """Save a binary [H,W] mask as an 8-bit grayscale PNG with values 0/255."""
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise DimensionError(f"save_mask: expected [H,W], got {arr.shape}")
    u8 = ((arr > 0).astype(np.uint8)) * 255
    buf = io.BytesIO()
    Image.fromarray(u8, mode="L").save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def load_mask(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"))
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise DataError(f"cannot read mask {path}: {exc}") from exc
    return (arr >= 128).astype(np.uint8)


def save_manifest(path, entries: Sequence[ManifestEntry]) -> None:
    atomic_write_text(path, json.dumps([e.to_dict() for e in entries], indent=2) + "\n")


def load_manifest(path) -> list[ManifestEntry]:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, list):
        raise DataError(f"manifest {path}: expected a JSON list")
    return [ManifestEntry.from_dict(d) for d in raw]


# ---------------------------------------------------------------------------
# tiling


@dataclass(frozen=True)
class TileGrid:
    tile_size: int
    rows: int
    cols: int
    height: int  # original image height
    width: int
    pad_bottom: int
    pad_right: int

    def origin(self, row: int, col: int) -> tuple[int, int]:
        """Top-left corner (x0, y0) of a tile in original image coordinates."""
        if not (0 <= row < self.rows and 0 <= col < self.cols):
            raise DimensionError(f"tile ({row},{col}) outside {self.rows}x{self.cols} grid")
        return (col * self.tile_size, row * self.tile_size)


def slice_image(image, tile_size: int = 512) -> tuple[list[np.ndarray], TileGrid]:
    """Cut an image (or mask) into row-major tile_size squares.

    The bottom and right edges are padded by edge replication so every tile
    is full size; the grid records the padding so reassemble() can undo it.
    """
    if isinstance(image, SceneImage):
        image = image.pixels
    arr = np.asarray(image)
    if tile_size < 1:
        raise ConfigError(f"slice_image: tile_size must be >= 1, got {tile_size}")
    if arr.ndim not in (2, 3):
        raise DimensionError(f"slice_image: expected 2-d or 3-d array, got {arr.shape}")
    if arr.size == 0:
        raise EmptyInputError("slice_image: empty image")
    h, w = arr.shape[:2]
    rows = -(-h // tile_size)
    cols = -(-w // tile_size)
    pad_b = rows * tile_size - h
    pad_r = cols * tile_size - w
    pad = ((0, pad_b), (0, pad_r)) + (((0, 0),) if arr.ndim == 3 else ())
    padded = np.pad(arr, pad, mode="edge")
    t = tile_size
    tiles = [
        padded[r * t : (r + 1) * t, c * t : (c + 1) * t].copy()
        for r in range(rows)
        for c in range(cols)
    ]
    return tiles, TileGrid(tile_size, rows, cols, h, w, pad_b, pad_r)


def reassemble(tiles: Sequence[np.ndarray], grid: TileGrid) -> np.ndarray:
    """Invert slice_image: stitch row-major tiles and crop the padding off."""
    if len(tiles) != grid.rows * grid.cols:
        raise DimensionError(
            f"reassemble: got {len(tiles)} tiles for a {grid.rows}x{grid.cols} grid"
        )
    t = grid.tile_size
    for tile in tiles:
        if tile.shape[:2] != (t, t):
            raise DimensionError(f"reassemble: tile shape {tile.shape} != {t}x{t}")
        if tile.ndim != tiles[0].ndim or tile.shape != tiles[0].shape:
            raise DimensionError("reassemble: tiles disagree in shape")
    band = [np.concatenate(tiles[r * grid.cols : (r + 1) * grid.cols], axis=1)
            for r in range(grid.rows)]
    full = np.concatenate(band, axis=0)
    return full[: grid.height, : grid.width].copy()


def filter_positive(tiles: Sequence[np.ndarray], masks: Sequence[np.ndarray],
                    min_positive: int = 1):
    """Keep tile/mask pairs whose mask has at least min_positive set pixels.

    Returns (kept_tiles, kept_masks, discarded_count).
    """
    if len(tiles) != len(masks):
        raise DimensionError(f"filter_positive: {len(tiles)} tiles vs {len(masks)} masks")
    if min_positive < 0:
        raise ConfigError(f"filter_positive: min_positive must be >= 0, got {min_positive}")
    kept_t, kept_m = [], []
    for tile, mask in zip(tiles, masks):
        if int(np.count_nonzero(mask)) >= min_positive:
            kept_t.append(tile)
            kept_m.append(mask)
    return kept_t, kept_m, len(tiles) - len(kept_t)


# ---------------------------------------------------------------------------
# annotations (VIA-style JSON subset)


@dataclass(frozen=True)
class Region:
    kind: str  # "polygon" | "rect"
    label: str = ""
    xs: tuple[float, ...] = ()
    ys: tuple[float, ...] = ()
    x: float = 0.0
    y: float = 0.0
    width: float = 0.0
    height: float = 0.0

    def polygon(self) -> tuple[tuple[float, ...], tuple[float, ...]]:
        """Vertices as (xs, ys); rects become their four corners."""
        if self.kind == "polygon":
            return self.xs, self.ys
        x0, y0, x1, y1 = self.x, self.y, self.x + self.width, self.y + self.height
        return (x0, x1, x1, x0), (y0, y0, y1, y1)

    def to_via(self) -> dict:
        if self.kind == "polygon":
            shape = {"name": "polygon",
                     "all_points_x": list(self.xs), "all_points_y": list(self.ys)}
        else:
            shape = {"name": "rect", "x": self.x, "y": self.y,
                     "width": self.width, "height": self.height}
        return {"shape_attributes": shape, "region_attributes": {"label": self.label}}


def region_from_via(raw: dict) -> Region:
    try:
        shape = raw["shape_attributes"]
        name = shape["name"]
    except (KeyError, TypeError):
        raise AnnotationError(f"region missing shape_attributes: {raw!r}") from None
    label = ""
    attrs = raw.get("region_attributes")
    if isinstance(attrs, dict):
        label = str(attrs.get("label", ""))
    if name == "polygon" or name == "polyline":
        try:
            xs = tuple(float(v) for v in shape["all_points_x"])
            ys = tuple(float(v) for v in shape["all_points_y"])
        except (KeyError, TypeError, ValueError):
            raise AnnotationError(f"polygon region with bad points: {shape!r}") from None
        if len(xs) != len(ys):
            raise AnnotationError(
                f"polygon has {len(xs)} x coords but {len(ys)} y coords"
            )
        if len(xs) < 3:
            raise AnnotationError(f"polygon needs >= 3 vertices, got {len(xs)}")
        return Region("polygon", label, xs, ys)
    if name == "rect":
        try:
            return Region("rect", label,
                          x=float(shape["x"]), y=float(shape["y"]),
                          width=float(shape["width"]), height=float(shape["height"]))
        except (KeyError, TypeError, ValueError):
            raise AnnotationError(f"rect region with bad fields: {shape!r}") from None
    raise AnnotationError(f"unsupported region shape {name!r}")


def load_annotations(path) -> dict[str, list[Region]]:
    """Parse a VIA project export into {filename: [Region, ...]}."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise AnnotationError(f"annotation file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise AnnotationError(f"annotation file {path}: expected a JSON object")
    if "_via_img_metadata" in raw:  # full project export wraps the metadata
        raw = raw["_via_img_metadata"]
    out: dict[str, list[Region]] = {}
    for key, entry in raw.items():
        if not isinstance(entry, dict):
            raise AnnotationError(f"annotation entry {key!r} is not an object")
        filename = str(entry.get("filename", key))
        regions = entry.get("regions", [])
        if isinstance(regions, dict):  # older VIA exports index regions by string
            regions = [regions[k] for k in sorted(regions, key=lambda s: int(s))]
        if not isinstance(regions, list):
            raise AnnotationError(f"annotation entry {filename!r}: regions must be a list")
        out[filename] = [region_from_via(r) for r in regions]
    return out


def save_annotations(path, docs: dict[str, list[Region]]) -> None:
    payload = {
        name: {"filename": name, "regions": [r.to_via() for r in regions]}
        for name, regions in docs.items()
    }
    atomic_write_text(path, json.dumps(payload, indent=2) + "\n")


def _fill_polygon(xs, ys, shape: tuple[int, int]) -> np.ndarray:
    """Even-odd fill sampled at pixel centers; boundary centers count inside."""
    h, w = shape
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.min() < 0 or ys.min() < 0 or xs.max() > w or ys.max() > h:
        warnings.warn("polygon vertices outside image bounds; clamping", stacklevel=3)
        xs = np.clip(xs, 0.0, float(w))
        ys = np.clip(ys, 0.0, float(h))
    n = len(xs)
    px = np.arange(w) + 0.5
    py = np.arange(h) + 0.5
    inside = np.zeros((h, w), dtype=bool)
    boundary = np.zeros((h, w), dtype=bool)
    for i in range(n):
        x1, y1 = xs[i], ys[i]
        x2, y2 = xs[(i + 1) % n], ys[(i + 1) % n]
        if y1 != y2:
            hit = (y1 <= py) & (py < y2) if y2 > y1 else (y2 <= py) & (py < y1)
            if hit.any():
                t = (py[hit] - y1) / (y2 - y1)
                xint = x1 + t * (x2 - x1)
                inside[hit] ^= px[None, :] < xint[:, None]
        dx, dy = x2 - x1, y2 - y1
        len2 = dx * dx + dy * dy
        if len2 == 0.0:
            continue
        qx = px[None, :] - x1
        qy = py[:, None] - y1
        cross = qx * dy - qy * dx
        dot = qx * dx + qy * dy
        boundary |= (np.abs(cross) <= 1e-9 * math.sqrt(len2)) & (dot >= 0.0) & (dot <= len2)
    return (inside | boundary).astype(np.uint8)


def rasterize_regions(regions: Sequence[Region], shape: tuple[int, int]) -> np.ndarray:
    """Union of the filled regions as a {0,1} mask of the given (H, W)."""
    h, w = int(shape[0]), int(shape[1])
    if h < 1 or w < 1:
        raise DimensionError(f"rasterize_regions: bad shape {shape}")
    mask = np.zeros((h, w), dtype=np.uint8)
    for region in regions:
        xs, ys = region.polygon()
        mask |= _fill_polygon(xs, ys, (h, w))
    return mask


def import_annotations(regions: Sequence[Region], shape: tuple[int, int]) -> np.ndarray:
    """Rasterize one image's annotation regions into a ground-truth mask."""
    if regions is None:
        raise AnnotationError("import_annotations: regions is None")
    return rasterize_regions(list(regions), shape)


# ---------------------------------------------------------------------------
# mask composition


def concat_masks(masks: Sequence[np.ndarray]) -> np.ndarray:
    """Lay masks side by side: width is the sum, height the max, short masks
    zero-padded at the bottom. A single mask passes through unchanged."""
    if len(masks) == 0:
        raise EmptyInputError("concat_masks: no masks")
    arrs = [np.asarray(m) for m in masks]
    for a in arrs:
        if a.ndim != 2:
            raise DimensionError(f"concat_masks: masks must be 2-d, got {a.shape}")
    if len(arrs) == 1:
        return arrs[0].copy()
    height = max(a.shape[0] for a in arrs)
    width = sum(a.shape[1] for a in arrs)
    out = np.zeros((height, width), dtype=arrs[0].dtype)
    x = 0
    for a in arrs:
        out[: a.shape[0], x : x + a.shape[1]] = a
        x += a.shape[1]
    return out


def union_masks(masks: Sequence[np.ndarray]) -> np.ndarray:
    """Pixelwise maximum of same-shape masks."""
    if len(masks) == 0:
        raise EmptyInputError("union_masks: no masks")
    arrs = [np.asarray(m) for m in masks]
    shape = arrs[0].shape
    for a in arrs[1:]:
        if a.shape != shape:
            raise DimensionError(f"union_masks: shape mismatch {a.shape} vs {shape}")
    out = arrs[0].copy()
    for a in arrs[1:]:
        np.maximum(out, a, out=out)
    return out


# ---------------------------------------------------------------------------
# resizing


def resize_nearest(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbour resize under the pixel-center convention."""
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"resize_nearest: bad target {out_h}x{out_w}")
    h, w = arr.shape[:2]
    rows = np.minimum((np.arange(out_h) + 0.5) * h / out_h, h - 1e-9).astype(np.int64)
    cols = np.minimum((np.arange(out_w) + 0.5) * w / out_w, w - 1e-9).astype(np.int64)
    return arr[rows[:, None], cols[None, :]].copy()


def resize_bilinear(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize; source coords are (i+0.5)*scale-0.5, clamped to the edge."""
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"resize_bilinear: bad target {out_h}x{out_w}")
    a = np.asarray(arr, dtype=np.float64)
    h, w = a.shape[:2]
    sy = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0.0, h - 1.0)
    sx = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0.0, w - 1.0)
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (sy - y0)[:, None]
    fx = (sx - x0)[None, :]
    if a.ndim == 3:
        fy = fy[:, :, None]
        fx = fx[:, :, None]
    tl = a[y0[:, None], x0[None, :]]
    tr = a[y0[:, None], x1[None, :]]
    bl = a[y1[:, None], x0[None, :]]
    br = a[y1[:, None], x1[None, :]]
    return (tl * (1 - fy) * (1 - fx) + tr * (1 - fy) * fx
            + bl * fy * (1 - fx) + br * fy * fx)


def resize_for_classification(image: np.ndarray, size: int = 512) -> np.ndarray:
    """Bilinear resize of a [H,W,C] image to size x size for the classifiers."""
    arr = np.asarray(image)
    if arr.ndim != 3:
        raise DimensionError(f"resize_for_classification: expected [H,W,C], got {arr.shape}")
    if size < 1:
        raise ConfigError(f"resize_for_classification: size must be >= 1, got {size}")
    return resize_bilinear(arr, size, size)


# ---------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class AugmentConfig:
    p_hflip: float = 0.5
    p_vflip: float = 0.5
    p_crop: float = 0.5
    crop_max_frac: float = 0.1
    p_affine: float = 0.5
    scale_range: tuple[float, float] = (0.8, 1.2)
    translate_frac: float = 0.1
    rotate_deg: float = 15.0
    shear_deg: float = 8.0
    p_blur: float = 0.5
    blur_sigma: tuple[float, float] = (0.0, 0.5)
    p_noise: float = 0.5
    noise_sigma: float = 0.03
    p_brightness: float = 0.2
    brightness_range: tuple[float, float] = (0.8, 1.2)


@dataclass(frozen=True)
class AugmentPlan:
    """All randomness of one augmentation draw, frozen for replay."""

    hflip: bool
    vflip: bool
    crop: Optional[tuple[float, float, float, float]]  # frac of H/W per side: t, b, l, r
    affine: Optional[tuple[float, float, float, float, float]]  # scale, tx, ty, rot, shear
    blur_sigma: Optional[float]
    noise_seed: Optional[int]
    brightness: Optional[tuple[float, ...]]


def plan_augment(rng: np.random.Generator, config: AugmentConfig = AugmentConfig(),
                 channels: int = 3) -> AugmentPlan:
    """Draw one augmentation plan. Every parameter is drawn whether or not its
    coin lands, so the stream consumed per call is constant."""
    c = config
    hflip = rng.random() < c.p_hflip
    vflip = rng.random() < c.p_vflip
    do_crop = rng.random() < c.p_crop
    crop = tuple(rng.uniform(0.0, c.crop_max_frac, size=4).tolist())
    do_affine = rng.random() < c.p_affine
    affine = (
        float(rng.uniform(*c.scale_range)),
        float(rng.uniform(-c.translate_frac, c.translate_frac)),
        float(rng.uniform(-c.translate_frac, c.translate_frac)),
        float(rng.uniform(-c.rotate_deg, c.rotate_deg)),
        float(rng.uniform(-c.shear_deg, c.shear_deg)),
    )
    do_blur = rng.random() < c.p_blur
    sigma = float(rng.uniform(*c.blur_sigma))
    do_noise = rng.random() < c.p_noise
    noise_seed = int(rng.integers(0, 2 ** 31))
    do_brightness = rng.random() < c.p_brightness
    brightness = tuple(rng.uniform(*c.brightness_range, size=channels).tolist())
    return AugmentPlan(
        hflip, vflip,
        crop if do_crop else None,
        affine if do_affine else None,
        sigma if do_blur else None,
        noise_seed if do_noise else None,
        brightness if do_brightness else None,
    )


def _crop_pixels(frac: float, dim: int) -> int:
    return min(int(frac * dim), max(dim - 1, 0))


def _apply_geometric(arr: np.ndarray, plan: AugmentPlan) -> np.ndarray:
    out = arr
    if plan.hflip:
        out = out[:, ::-1]
    if plan.vflip:
        out = out[::-1]
    if plan.crop is not None:
        h, w = out.shape[:2]
        t, b, l, r = plan.crop
        ti, bi = _crop_pixels(t, h), _crop_pixels(b, h)
        li, ri = _crop_pixels(l, w), _crop_pixels(r, w)
        if ti + bi < h and li + ri < w:
            out = resize_nearest(out[ti : h - bi, li : w - ri], h, w)
    if plan.affine is not None:
        out = _apply_affine(np.ascontiguousarray(out), plan.affine)
    return np.ascontiguousarray(out)


def _apply_affine(arr: np.ndarray, params) -> np.ndarray:
    """Scale/translate/rotate/shear about the image center, nearest-neighbour
    gather on the inverse map, out-of-frame pixels filled with 0."""
    scale, txf, tyf, rot, shear = params
    h, w = arr.shape[:2]
    cy, cx = h / 2.0, w / 2.0
    th = math.radians(rot)
    sh = math.tan(math.radians(shear))
    # forward = T(center + t) . R . Shear . S . T(-center)
    lin = np.array([
        [math.cos(th), -math.sin(th)],
        [math.sin(th), math.cos(th)],
    ]) @ np.array([[1.0, sh], [0.0, 1.0]]) * scale
    inv = np.linalg.inv(lin)
    yy, xx = np.mgrid[0:h, 0:w]
    dx = (xx + 0.5) - (cx + txf * w)
    dy = (yy + 0.5) - (cy + tyf * h)
    sx = inv[0, 0] * dx + inv[0, 1] * dy + cx
    sy = inv[1, 0] * dx + inv[1, 1] * dy + cy
    ix = np.floor(sx).astype(np.int64)
    iy = np.floor(sy).astype(np.int64)
    valid = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
    out = np.zeros_like(arr)
    out[valid] = arr[iy[valid], ix[valid]]
    return out


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable gaussian blur with reflect padding; sigma <= 0 is a no-op."""
    if sigma <= 0.0:
        return image.copy()
    radius = max(1, int(math.ceil(3.0 * sigma)))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(xs * xs) / (2.0 * sigma * sigma))
    k /= k.sum()
    out = np.asarray(image, dtype=np.float64)
    for axis in (0, 1):
        pad = [(0, 0)] * out.ndim
        pad[axis] = (radius, radius)
        padded = np.pad(out, pad, mode="reflect")
        acc = np.zeros_like(out)
        for i, kv in enumerate(k):
            sl = [slice(None)] * out.ndim
            sl[axis] = slice(i, i + out.shape[axis])
            acc += kv * padded[tuple(sl)]
        out = acc
    return out


def apply_augment(image: np.ndarray, mask: Optional[np.ndarray], plan: AugmentPlan,
                  config: AugmentConfig = AugmentConfig()):
    """Replay a plan. Geometric transforms hit image and mask identically
    (both nearest-neighbour); photometric ones touch only the image."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3:
        raise DimensionError(f"apply_augment: expected [H,W,C] image, got {img.shape}")
    out = _apply_geometric(img, plan)
    if plan.blur_sigma is not None:
        out = gaussian_blur(out, plan.blur_sigma)
    if plan.noise_seed is not None:
        noise = np.random.default_rng(plan.noise_seed).normal(0.0, config.noise_sigma, out.shape)
        out = out + noise
    if plan.brightness is not None:
        if len(plan.brightness) != out.shape[2]:
            raise DimensionError("apply_augment: brightness multipliers do not match channels")
        out = out * np.asarray(plan.brightness)[None, None, :]
    out = np.clip(out, 0.0, 1.0)
    if mask is None:
        return out, None
    m = np.asarray(mask)
    if m.ndim != 2 or m.shape != img.shape[:2]:
        raise DimensionError(f"apply_augment: mask {m.shape} does not match image {img.shape}")
    m_out = _apply_geometric(m.astype(np.float64), plan)
    return out, (m_out >= 0.5).astype(np.uint8)


def augment(image: np.ndarray, mask: Optional[np.ndarray] = None, seed: int = 0,
            config: AugmentConfig = AugmentConfig()):
    """Seeded one-shot augmentation of an image and its optional mask."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3:
        raise DimensionError(f"augment: expected [H,W,C] image, got {img.shape}")
    plan = plan_augment(np.random.default_rng(seed), config, channels=img.shape[2])
    return apply_augment(img, mask, plan, config)


# ---------------------------------------------------------------------------
# dataset splitting


def _apportion(ideals: list[float], caps: list[int], quota: int) -> list[int]:
    """Largest-remainder apportionment of quota items with per-bucket caps."""
    base = [min(int(math.floor(v)), cap) for v, cap in zip(ideals, caps)]
    rem = quota - sum(base)
    frac = sorted(range(len(ideals)),
                  key=lambda i: (-(ideals[i] - math.floor(ideals[i])), i))
    while rem > 0:
        placed = False
        for i in frac:
            if base[i] < caps[i]:
                base[i] += 1
                rem -= 1
                placed = True
                if rem == 0:
                    break
        if not placed:
            raise ConfigError("split quota exceeds available samples")
    return base


def split_dataset(entries: Sequence[ManifestEntry],
                  fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
                  seed: int = 0) -> list[ManifestEntry]:
    """Stratified train/val/test split.

    Totals follow floor(f_train*n) / floor(f_val*n) / remainder; classes are
    then apportioned by largest remainder so each split mirrors the class
    balance as closely as the integers allow. Returns copies with .split set,
    input order preserved.
    """
    entries = list(entries)
    if not entries:
        raise EmptyInputError("split_dataset: no entries")
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split_dataset: fractions must be 3 non-negatives summing to 1, "
                          f"got {fractions}")
    n = len(entries)
    n_train = int(math.floor(fractions[0] * n))
    n_val = int(math.floor(fractions[1] * n))
    n_test = n - n_train - n_val

    classes = sorted({e.fence for e in entries})
    by_class = {c: [i for i, e in enumerate(entries) if e.fence == c] for c in classes}
    counts = [len(by_class[c]) for c in classes]

    train_alloc = _apportion([m * n_train / n for m in counts], counts, n_train)
    left = [m - t for m, t in zip(counts, train_alloc)]
    val_alloc = _apportion([m * n_val / n for m in counts], left, n_val)
    test_alloc = [m - t - v for m, t, v in zip(counts, train_alloc, val_alloc)]
    assert sum(test_alloc) == n_test

    rng = np.random.default_rng(seed)
    split_of = [""] * n
    for c, tr, va in zip(classes, train_alloc, val_alloc):
        idx = by_class[c]
        order = rng.permutation(len(idx))
        for pos, j in enumerate(order):
            if pos < tr:
                split_of[idx[j]] = "train"
            elif pos < tr + va:
                split_of[idx[j]] = "val"
            else:
                split_of[idx[j]] = "test"
    return [replace(e, split=s) for e, s in zip(entries, split_of)]
