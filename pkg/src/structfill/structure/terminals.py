"""Edge terminals: where salient contours of the known region meet the hole boundary."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage
from skimage.graph import MCP_Geometric

from ..contours import Arc, ContourHierarchy
from ..imagery import arc_positions, boundary, boundary_pixels

log = logging.getLogger(__name__)


@dataclass(eq=False)
class EdgeTerminal:
    hit_point: tuple[int, int]
    tangent: np.ndarray  # unit vector pointing into the hole
    strength: float
    arc_ref: int
    flank_regions: tuple[np.ndarray, np.ndarray]  # boolean masks, disjoint, inside the known region
    boundary_position: float
    component: int = 0
    # arc samples ordered from the contact point outward, roughly 3 px apart
    trail: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    level: float = 1.0  # sweep level at which the arc emerged
    flank_ids: tuple[int, int] = (0, 0)
    histograms: Optional[tuple] = field(default=None, repr=False)


class BoundaryIndex:
    """Arc-length coordinates of every hole-boundary pixel."""

    def __init__(self, hole: np.ndarray):
        self.contours = boundary(hole)
        self.position: dict[tuple[int, int], tuple[int, float]] = {}
        offset = 0.0
        self.offsets = []
        for ci, contour in enumerate(self.contours):
            pos = arc_positions(contour)
            self.offsets.append(offset)
            for p, s in zip(contour, pos):
                self.position[p] = (ci, offset + float(s))
            # leave a gap so components never interleave
            offset += float(pos[-1]) + 2.0 if len(pos) else 2.0
        self.pixels = np.array([p for c in self.contours for p in c], dtype=float).reshape(-1, 2)

    def nearest(self, point) -> tuple[int, int]:
        d = np.hypot(self.pixels[:, 0] - point[0], self.pixels[:, 1] - point[1])
        x, y = self.pixels[int(np.argmin(d))]
        return int(x), int(y)


def _fit_direction(points: np.ndarray) -> np.ndarray:
    """Principal direction of a point cloud (least-squares line)."""
    centered = points - points.mean(axis=0)
    if len(points) < 2 or not np.any(centered):
        return np.zeros(2)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    return vt[0]


def _trail(arc_pixels: np.ndarray, contact: np.ndarray, spacing: float, count: int) -> np.ndarray:
    """Centroids of arc pixels at geodesic distances k*spacing from the contact cluster."""
    x0, y0 = arc_pixels.min(axis=0)
    w, h = arc_pixels.max(axis=0) - (x0, y0) + 1
    cost = np.full((h + 2, w + 2), np.inf)
    cost[arc_pixels[:, 1] - y0 + 1, arc_pixels[:, 0] - x0 + 1] = 1.0
    mcp = MCP_Geometric(cost)
    starts = [(int(y - y0 + 1), int(x - x0 + 1)) for x, y in contact]
    dist, _ = mcp.find_costs(starts)
    d = dist[arc_pixels[:, 1] - y0 + 1, arc_pixels[:, 0] - x0 + 1]
    pts = [contact.mean(axis=0)]
    for k in range(1, count + 1):
        sel = np.abs(d - k * spacing) <= spacing / 2
        if not sel.any():
            break
        pts.append(arc_pixels[sel].mean(axis=0))
    return np.asarray(pts, dtype=float)


def _clusters(points: np.ndarray) -> list[np.ndarray]:
    x0, y0 = points.min(axis=0)
    grid = np.zeros(tuple(points.max(axis=0)[::-1] - (y0, x0) + 1), dtype=bool)
    grid[points[:, 1] - y0, points[:, 0] - x0] = True
    lab, n = ndimage.label(grid, structure=np.ones((3, 3), dtype=int))
    out = []
    for k in range(1, n + 1):
        ys, xs = np.nonzero(lab == k)
        out.append(np.stack([xs + x0, ys + y0], axis=1))
    return out


def _hit_point(origin, direction, hole, edge, index: BoundaryIndex, reach: float):
    """First hole pixel on the ray from ``origin`` along ``direction``, snapped to the boundary."""
    h, w = hole.shape
    for s in np.arange(0.0, reach, 0.25):
        x, y = np.rint(origin + s * direction).astype(int)
        if not (0 <= x < w and 0 <= y < h):
            break
        if hole[y, x]:
            return (int(x), int(y)) if edge[y, x] else index.nearest((x, y))
    return None


def collect_terminals(
    hier: ContourHierarchy,
    mask,
    t_init: float = 1.0,
    dt: float = 0.05,
    delta_T: float = 0.1,
    tangent_window: float = 10.0,
    sample_spacing: float = 3.0,
    trail_samples: int = 6,
    dedup_radius: float = 2.0,
) -> list[EdgeTerminal]:
    """Sweep the hierarchy from t_init downward and record every emerging arc that touches the hole."""
    if not 0 < delta_T < t_init:
        raise ValueError("need 0 < delta_T < t_init")
    if dt <= 0:
        raise ValueError("dt must be > 0")
    hole = np.asarray(mask, dtype=bool)
    edge = boundary_pixels(hole)
    near_hole = ndimage.binary_dilation(hole, structure=np.ones((3, 3), dtype=bool))
    index = BoundaryIndex(hole)

    emerged: dict[int, float] = {}
    k = 1
    while True:
        t = round(t_init - k * dt, 12)
        if t < delta_T:
            break
        for arc in hier.arcs:
            if arc.id not in emerged and arc.strength > t:
                emerged[arc.id] = t
        k += 1

    terminals: list[EdgeTerminal] = []
    for arc_id, level in emerged.items():
        arc: Arc = hier.arcs[arc_id]
        px = arc.pixels
        touching = near_hole[px[:, 1], px[:, 0]]
        if not touching.any():
            continue
        flank_ids = hier.flanks(arc)
        flanks = None
        hits: list[tuple[int, int]] = []
        for contact in _clusters(px[touching]):
            c = contact.mean(axis=0)
            near = px[np.hypot(px[:, 0] - c[0], px[:, 1] - c[1]) <= tangent_window].astype(float)
            direction = _fit_direction(near)
            if not np.any(direction):
                direction = np.asarray(index.nearest(c), dtype=float) - c
                if not np.any(direction):
                    continue
                direction /= np.linalg.norm(direction)
            # orient toward the hole: away from the arc body, then toward the contact
            body = near.mean(axis=0)
            lead = c - body if np.any(c - body) else np.asarray(index.nearest(c), dtype=float) - c
            if np.dot(direction, lead) < 0:
                direction = -direction
            hit = _hit_point(body, direction, hole, edge, index, reach=3 * tangent_window)
            if hit is None:
                hit = index.nearest(c)
            if any(np.hypot(hit[0] - q[0], hit[1] - q[1]) <= dedup_radius for q in hits):
                continue
            hits.append(hit)
            if flanks is None:
                flanks = (hier.region_mask(flank_ids[0]), hier.region_mask(flank_ids[1]))
            comp, pos = index.position[hit]
            terminals.append(
                EdgeTerminal(
                    hit_point=hit,
                    tangent=direction / np.linalg.norm(direction),
                    strength=float(arc.strength),
                    arc_ref=arc.id,
                    flank_regions=flanks,
                    boundary_position=pos,
                    component=comp,
                    trail=_trail(px, contact, sample_spacing, trail_samples),
                    level=level,
                    flank_ids=flank_ids,
                )
            )
    terminals.sort(key=lambda e: e.boundary_position)
    log.debug("collected %d terminals from %d emerged arcs", len(terminals), len(emerged))
    return terminals
