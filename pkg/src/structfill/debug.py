"""Debug renderings of the intermediate products of a run."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import cv2
import numpy as np
from skimage.segmentation import find_boundaries

from .imagery import ImageError, save_image

HIERARCHY_LEVELS = (0.1, 0.25, 0.5, 0.75)


def _ensure_dir(path) -> Path:
    d = Path(path)
    try:
        d.mkdir(parents=True, exist_ok=True)
        probe = d / ".write-test"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise ImageError(f"debug directory {d} is not writable: {exc}") from exc
    return d


def _grey(grid: np.ndarray) -> np.ndarray:
    g = np.asarray(grid, dtype=float)
    top = float(g.max()) if g.size else 0.0
    if top <= 0:
        return np.zeros(g.shape, dtype=np.uint8)
    return np.clip(np.rint(255.0 * g / top), 0, 255).astype(np.uint8)


def _pt(p) -> tuple[int, int]:
    return int(round(float(p[0]))), int(round(float(p[1])))


class FillSnapshots:
    """Callback for the fill loop that saves every n-th intermediate image."""

    def __init__(self, directory, every: int = 25):
        self.dir = _ensure_dir(directory)
        self.every = max(1, int(every))

    def __call__(self, iteration: int, image: np.ndarray, hole: np.ndarray) -> None:
        if iteration % self.every:
            return
        frame = np.clip(np.rint(image), 0, 255).astype(np.uint8).copy()
        frame[hole] = (255, 0, 255)
        save_image(frame, self.dir / f"fill_{iteration:05d}.png")


def structure_overlay(img, mask, trace) -> np.ndarray:
    """Input with the hole tinted, terminals as arrows, pairs as chords and curves in red."""
    canvas = np.asarray(img)[:, :, :3].copy()
    hole = np.asarray(mask, dtype=bool)
    canvas[hole] = (canvas[hole] // 2 + np.array([0, 0, 64], dtype=np.uint8)).astype(np.uint8)
    bgr = np.ascontiguousarray(canvas[:, :, ::-1])
    for pair in trace.pairs:
        cv2.line(bgr, _pt(pair.source.hit_point), _pt(pair.target.hit_point), (160, 160, 160), 1)
    for curve in trace.curves:
        pts = np.rint(curve.samples).astype(np.int32).reshape(-1, 1, 2)
        cv2.polylines(bgr, [pts], False, (0, 0, 255), 1)
    for term in trace.terminals:
        p = np.asarray(term.hit_point, dtype=float)
        q = p + 8.0 * np.asarray(term.tangent)
        cv2.arrowedLine(bgr, _pt(p - 8.0 * np.asarray(term.tangent)), _pt(q), (0, 255, 0), 1, tipLength=0.3)
    return bgr[:, :, ::-1].copy()


def anchor_overlay(img, mask, trace) -> np.ndarray:
    canvas = np.asarray(trace.propagated if trace.propagated is not None else img)[:, :, :3].copy()
    bgr = np.ascontiguousarray(canvas[:, :, ::-1])
    for anchors in trace.anchors:
        for a in anchors:
            h = a.patch.half
            x, y = a.center
            cv2.rectangle(bgr, (x - h, y - h), (x + h, y + h), (255, 200, 0), 1)
            cv2.circle(bgr, (x, y), 1, (0, 0, 255), -1)
    return bgr[:, :, ::-1].copy()


def emit_debug(trace, img, mask, directory) -> list[Path]:
    """Write every debug artifact available in ``trace``; returns the paths written."""
    d = _ensure_dir(directory)
    written: list[Path] = []

    def put(name, pixels):
        path = d / name
        save_image(pixels, path)
        written.append(path)

    if trace.signal is not None:
        put("edges_gpb.png", _grey(trace.signal.magnitude))
        if trace.signal.gradient is not None:
            put("edges_gaussian.png", _grey(trace.signal.gradient))
    if trace.hierarchy is not None:
        for t in HIERARCHY_LEVELS:
            regions = trace.hierarchy.regions_at(t)
            lines = find_boundaries(regions, mode="inner") & (regions > 0)
            put(f"hierarchy_t{int(round(t * 100)):03d}.png", (lines * 255).astype(np.uint8))
    put("structure_overlay.png", structure_overlay(img, mask, trace))
    if trace.anchors:
        put("anchor_overlay.png", anchor_overlay(img, mask, trace))
    path = d / "energy_trace.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["curve", "iteration", "energy"])
        for row in trace.energy_rows:
            w.writerow([row[0], row[1], repr(float(row[2])) if math.isfinite(row[2]) else "inf"])
    written.append(path)
    return written
