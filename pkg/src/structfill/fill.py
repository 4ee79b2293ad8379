"""Priority-ordered exemplar fill of whatever the hole still contains."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import cv2
import numpy as np
from scipy import ndimage

from .imagery import RasterImage, to_lab

log = logging.getLogger(__name__)

ALPHA = 255.0
_LUMA = np.array([0.299, 0.587, 0.114])
_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64) / 8.0


class FillError(Exception):
    """Raised when the fill cannot make progress."""


@dataclass
class FrontPixel:
    position: tuple[int, int]
    normal: np.ndarray
    isophote: np.ndarray
    confidence: float
    data: float
    priority: float


@dataclass
class FillStep:
    position: tuple[int, int]
    confidence: float
    priority: float
    source: tuple[int, int]
    written: int


@dataclass
class FillResult:
    image: RasterImage
    confidence: np.ndarray
    steps: list[FillStep] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.steps)


def _window(p, l: int, shape) -> tuple[slice, slice]:
    x, y = p
    h = (l - 1) // 2
    return slice(max(y - h, 0), min(y + h + 1, shape[0])), slice(max(x - h, 0), min(x + h + 1, shape[1]))


def confidence(cmap: np.ndarray, p, l: int, known: np.ndarray) -> float:
    """Sum of confidences over the known pixels of the l x l window at p, over the full window area."""
    rows, cols = _window(p, l, known.shape)
    return float(np.sum(cmap[rows, cols][known[rows, cols]])) / (l * l)


def data_term(isophote, normal, alpha: float = ALPHA) -> float:
    return abs(float(np.dot(isophote, normal))) / alpha


def priority(c: float, d: float) -> float:
    return c * d


def fill_front(hole: np.ndarray) -> np.ndarray:
    """Hole pixels with at least one known 4-neighbour."""
    known = ~hole
    touch = np.zeros_like(hole)
    touch[1:, :] |= known[:-1, :]
    touch[:-1, :] |= known[1:, :]
    touch[:, 1:] |= known[:, :-1]
    touch[:, :-1] |= known[:, 1:]
    return hole & touch


def known_gradient(grey: np.ndarray, known: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradient from known pixels only: Sobel where the 3x3 block is known, else one-sided differences."""
    h, w = grey.shape
    gx = np.zeros_like(grey)
    gy = np.zeros_like(grey)
    pad = np.pad(known, 1, constant_values=False)
    full = ndimage.minimum_filter(pad.astype(np.uint8), size=3, mode="constant", cval=0)[1:-1, 1:-1].astype(bool)
    sx = ndimage.correlate(grey, _SOBEL_X, mode="nearest")
    sy = ndimage.correlate(grey, _SOBEL_X.T, mode="nearest")
    gx[full] = sx[full]
    gy[full] = sy[full]
    g = np.pad(grey, 1)
    k = pad
    for axis, out in ((1, gx), (0, gy)):
        if axis == 1:
            fwd_v, bwd_v = g[1:-1, 2:], g[1:-1, :-2]
            fwd_k, bwd_k = k[1:-1, 2:], k[1:-1, :-2]
        else:
            fwd_v, bwd_v = g[2:, 1:-1], g[:-2, 1:-1]
            fwd_k, bwd_k = k[2:, 1:-1], k[:-2, 1:-1]
        part = known & ~full
        both = part & fwd_k & bwd_k
        only_f = part & fwd_k & ~bwd_k
        only_b = part & bwd_k & ~fwd_k
        out[both] = (fwd_v[both] - bwd_v[both]) / 2.0
        out[only_f] = fwd_v[only_f] - grey[only_f]
        out[only_b] = grey[only_b] - bwd_v[only_b]
    return gx, gy


def front_normal(hole: np.ndarray, p, front: np.ndarray | None = None) -> np.ndarray:
    """Unit normal of the fill front at p from a Sobel pass over the mask."""
    x, y = p
    h, w = hole.shape
    ys = np.clip(np.arange(y - 1, y + 2), 0, h - 1)
    xs = np.clip(np.arange(x - 1, x + 2), 0, w - 1)
    block = hole[np.ix_(ys, xs)].astype(np.float64)
    n = np.array([np.sum(block * _SOBEL_X), np.sum(block * _SOBEL_X.T)])
    norm = math.hypot(*n)
    if norm > 1e-12:
        return n / norm
    # flat mask response: perpendicular to the local run of front pixels
    if front is None:
        front = fill_front(hole)
    fy, fx = np.nonzero(front[np.ix_(ys, xs)])
    pts = np.stack([xs[fx], ys[fy]], axis=1).astype(float)
    if len(pts) >= 2 and np.any(pts - pts.mean(axis=0)):
        _, _, vt = np.linalg.svd(pts - pts.mean(axis=0))
        t = vt[0]
        return np.array([-t[1], t[0]])
    return np.array([1.0, 0.0])


def front_isophote(gx, gy, known, p, l: int) -> np.ndarray:
    """Largest-magnitude known gradient in the window at p, rotated by 90 degrees."""
    rows, cols = _window(p, l, known.shape)
    k = known[rows, cols]
    if not k.any():
        return np.zeros(2)
    mag = np.where(k, gx[rows, cols] ** 2 + gy[rows, cols] ** 2, -1.0)
    i = int(np.argmax(mag))  # row-major first on ties
    g = np.array([gx[rows, cols].flat[i], gy[rows, cols].flat[i]])
    return np.array([-g[1], g[0]])


def front_pixels(image: np.ndarray, hole: np.ndarray, cmap: np.ndarray, l: int) -> list[FrontPixel]:
    """Confidence, data term and priority of every front pixel, in row-major order."""
    known = ~hole
    grey = np.asarray(image, dtype=np.float64)[:, :, :3] @ _LUMA
    gx, gy = known_gradient(grey, known)
    front = fill_front(hole)
    out = []
    for y, x in zip(*np.nonzero(front)):
        p = (int(x), int(y))
        n = front_normal(hole, p, front)
        iso = front_isophote(gx, gy, known, p, l)
        c = confidence(cmap, p, l, known)
        d = data_term(iso, n)
        out.append(FrontPixel(p, n, iso, c, d, priority(c, d)))
    return out


def best_exemplar(lab: np.ndarray, known: np.ndarray, source: np.ndarray, p, l: int, search: str = "full") -> tuple[int, int]:
    """Centre of the fully-source window with least Lab SSD against the known part of the target window.

    Ties go to the first window in row-major order.
    """
    h, w = known.shape
    half = (l - 1) // 2
    x, y = p
    rows, cols = _window(p, l, (h, w))
    # offset of the clipped target inside its nominal window
    oy, ox = rows.start - (y - half), cols.start - (x - half)
    th, tw = rows.stop - rows.start, cols.stop - cols.start
    tmpl = lab[rows, cols].astype(np.float64)
    tmask = known[rows, cols]

    y_lo, y_hi, x_lo, x_hi = 0, h - th, 0, w - tw
    if search == "band":
        r = 6 * l
        y_lo, y_hi = max(0, rows.start - r), min(h - th, rows.start + r)
        x_lo, x_hi = max(0, cols.start - r), min(w - tw, cols.start + r)
    elif search != "full":
        raise ValueError(f"unknown search mode {search!r}")
    if y_hi < y_lo or x_hi < x_lo:
        raise FillError("no source window fits the image")
    region = lab[y_lo : y_hi + th, x_lo : x_hi + tw]
    # window positions that lie entirely in the source region
    bad = ~source[y_lo : y_hi + th, x_lo : x_hi + tw]
    bad_count = cv2.boxFilter(bad.astype(np.float32), -1, (tw, th), normalize=False, anchor=(0, 0), borderType=cv2.BORDER_CONSTANT)
    ok = bad_count[: y_hi - y_lo + 1, : x_hi - x_lo + 1] < 0.5
    if not ok.any():
        raise FillError(f"no fully known source window for the front pixel at {p}")
    if tmask.any():
        m3 = np.repeat(tmask[:, :, None], 3, axis=2).astype(np.float32)
        score = cv2.matchTemplate(region.astype(np.float32), tmpl.astype(np.float32), cv2.TM_SQDIFF, mask=m3)
        score = np.where(ok, score.astype(np.float64), np.inf)
        best = float(score.min())
        # float32 correlation is only a filter; settle close calls exactly
        scale = float(np.sum(tmpl[tmask] ** 2)) + float(tmask.sum()) * 3 * float(np.max(np.abs(region))) ** 2
        near = np.argwhere(score <= best + 1e-5 * scale + 1e-6)
        vals = tmpl[tmask]
        exact = np.empty(len(near))
        for k, (yy, xx) in enumerate(near):
            win = region[yy : yy + th, xx : xx + tw][tmask]
            exact[k] = float(np.sum((win - vals) ** 2))
        order = np.lexsort((near[:, 1], near[:, 0], exact))
        yy, xx = near[order[0]]
    else:
        yy, xx = np.argwhere(ok)[0]
    return int(xx + x_lo + half - ox), int(yy + y_lo + half - oy)


def fill_remaining(
    img,
    mask,
    cmap: np.ndarray | None = None,
    l: int = 9,
    search: str = "full",
    source: np.ndarray | None = None,
    on_step: Callable[[int, np.ndarray, np.ndarray], None] | None = None,
) -> FillResult:
    """Fill the hole front-first by priority, copying whole exemplar windows.

    ``source`` marks the pixels exemplars may come from (defaults to the
    currently known pixels); ``on_step`` receives (iteration, image, hole).
    """
    if l < 3 or l % 2 == 0:
        raise ValueError(f"patch side must be odd and >= 3, got {l}")
    image = np.asarray(img, dtype=np.float64)[:, :, :3].copy()
    hole = np.asarray(mask, dtype=bool).copy()
    if source is None:
        source = ~hole
    source = np.asarray(source, dtype=bool)
    cmap = (~hole).astype(np.float64) if cmap is None else np.asarray(cmap, dtype=np.float64).copy()
    lab = to_lab(np.clip(np.rint(image), 0, 255).astype(np.uint8))
    steps: list[FillStep] = []
    limit = int(hole.sum())
    while hole.any():
        if len(steps) >= limit:
            raise FillError(f"fill stalled with {int(hole.sum())} pixels left")
        front = front_pixels(image, hole, cmap, l)
        if not front:
            raise FillError("hole has no known neighbours; nothing to grow from")
        pr = np.array([f.priority for f in front])
        best = front[int(np.argmax(pr))]  # front is row-major, argmax keeps the first maximum
        q = best_exemplar(lab, ~hole, source, best.position, l, search)
        rows, cols = _window(best.position, l, hole.shape)
        dy, dx = q[1] - best.position[1], q[0] - best.position[0]
        srows = slice(rows.start + dy, rows.stop + dy)
        scols = slice(cols.start + dx, cols.stop + dx)
        todo = hole[rows, cols].copy()
        image[rows, cols][todo] = image[srows, scols][todo]
        lab[rows, cols][todo] = lab[srows, scols][todo]
        cmap[rows, cols][todo] = best.confidence
        hole[rows, cols][todo] = False
        steps.append(FillStep(best.position, best.confidence, best.priority, q, int(todo.sum())))
        if on_step is not None:
            on_step(len(steps), image, hole)
    out = RasterImage(np.clip(np.rint(image), 0, 255).astype(np.uint8))
    return FillResult(out, cmap, steps)
