"""Independent reference implementations used to check the package.

Everything here is written the slow, obvious way (per-pixel loops,
breadth-first search) so it shares no code path with the library.
"""

from __future__ import annotations

from collections import deque

import numpy as np


def numeric_grad(f, arrays, h=1e-5):
    """Central-difference gradients of scalar f(*arrays) w.r.t. each array."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    grads = []
    for ai, a in enumerate(arrays):
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            fp = f(*arrays)
            flat[i] = keep - h
            fm = f(*arrays)
            flat[i] = keep
            gflat[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def flood_components(mask, connectivity=8):
    """Connected components via BFS; returns a list of sets of (row, col),
    ordered by the first foreground pixel in scan order."""
    mask = np.asarray(mask)
    h, w = mask.shape
    if connectivity == 4:
        neigh = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    else:
        neigh = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0)]
    seen = np.zeros((h, w), dtype=bool)
    out = []
    for r in range(h):
        for c in range(w):
            if mask[r, c] and not seen[r, c]:
                comp = set()
                q = deque([(r, c)])
                seen[r, c] = True
                while q:
                    rr, cc = q.popleft()
                    comp.add((rr, cc))
                    for dr, dc in neigh:
                        nr, nc = rr + dr, cc + dc
                        if 0 <= nr < h and 0 <= nc < w and mask[nr, nc] and not seen[nr, nc]:
                            seen[nr, nc] = True
                            q.append((nr, nc))
                out.append(comp)
    return out


def point_in_polygon(px, py, xs, ys):
    """Even-odd test with a rightward ray; points on the boundary are inside."""
    n = len(xs)
    inside = False
    for i in range(n):
        x1, y1 = xs[i], ys[i]
        x2, y2 = xs[(i + 1) % n], ys[(i + 1) % n]
        # boundary?
        dx, dy = x2 - x1, y2 - y1
        len2 = dx * dx + dy * dy
        if len2 > 0:
            cross = (px - x1) * dy - (py - y1) * dx
            dot = (px - x1) * dx + (py - y1) * dy
            if abs(cross) <= 1e-9 * np.sqrt(len2) and 0 <= dot <= len2:
                return True
        if (y1 <= py < y2) or (y2 <= py < y1):
            xint = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
            if px < xint:
                inside = not inside
    return inside


def rasterize_polygon_reference(xs, ys, shape):
    """Per-pixel polygon fill at pixel centers (clamped vertices)."""
    h, w = shape
    xs = [min(max(float(v), 0.0), float(w)) for v in xs]
    ys = [min(max(float(v), 0.0), float(h)) for v in ys]
    out = np.zeros((h, w), dtype=np.uint8)
    for r in range(h):
        for c in range(w):
            if point_in_polygon(c + 0.5, r + 0.5, xs, ys):
                out[r, c] = 1
    return out


def mask_counts(gt, pred):
    """(tp, fp, fn, tn) by explicit pixel loop."""
    tp = fp = fn = tn = 0
    g = np.asarray(gt).reshape(-1)
    p = np.asarray(pred).reshape(-1)
    for gv, pv in zip(g, p):
        if gv and pv:
            tp += 1
        elif not gv and pv:
            fp += 1
        elif gv and not pv:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def iou_reference(gt, pred):
    tp, fp, fn, _ = mask_counts(gt, pred)
    if tp + fp + fn == 0:
        return 1.0
    return tp / (tp + fp + fn)


def dice_reference(gt, pred):
    tp, fp, fn, _ = mask_counts(gt, pred)
    if 2 * tp + fp + fn == 0:
        return 1.0
    return 2 * tp / (2 * tp + fp + fn)


def miou_reference(gt, pred):
    g = np.asarray(gt).astype(bool)
    p = np.asarray(pred).astype(bool)
    return 0.5 * (iou_reference(g, p) + iou_reference(~g, ~p))


def bilinear_reference(arr, out_h, out_w):
    """Per-pixel bilinear resize with the same center/clamp convention."""
    a = np.asarray(arr, dtype=np.float64)
    h, w = a.shape[:2]
    flat = a.reshape(h, w, -1)
    out = np.zeros((out_h, out_w, flat.shape[2]))
    for r in range(out_h):
        sy = min(max((r + 0.5) * h / out_h - 0.5, 0.0), h - 1.0)
        y0 = int(np.floor(sy))
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for c in range(out_w):
            sx = min(max((c + 0.5) * w / out_w - 0.5, 0.0), w - 1.0)
            x0 = int(np.floor(sx))
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            out[r, c] = (flat[y0, x0] * (1 - fy) * (1 - fx)
                         + flat[y0, x1] * (1 - fy) * fx
                         + flat[y1, x0] * fy * (1 - fx)
                         + flat[y1, x1] * fy * fx)
    return out.reshape((out_h, out_w) + a.shape[2:])
