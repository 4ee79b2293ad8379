"""Patch propagation along structure curves: anchors, candidate exemplars, MRF energies and their minimisation."""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .imagery import PatchWindow
from .structure import StructureCurve

log = logging.getLogger(__name__)

ROTATIONS = (0.0, math.pi / 4, -math.pi / 4, math.pi / 2, -math.pi / 2, math.pi)


class PropagationError(Exception):
    """Fatal condition for the propagation stage (e.g. no candidate exemplars)."""


@dataclass(frozen=True)
class AnchorPoint:
    center: tuple[int, int]
    curve_ref: int
    index: int
    patch: PatchWindow
    position: tuple[float, float] = (0.0, 0.0)  # unrounded point on the curve


@dataclass(frozen=True, eq=False)
class CandidatePatch:
    id: int
    source_center: tuple[int, int]
    pixels: np.ndarray  # (l, l, 3) float64


@dataclass
class StructureGraph:
    vertices: list[AnchorPoint]
    edges: list[tuple[int, int]]
    merged: int = 0  # number of intersection merges

    @property
    def adjacency(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in self.vertices]
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        return adj

    def is_forest(self) -> bool:
        parent = list(range(len(self.vertices)))

        def root(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for i, j in self.edges:
            ri, rj = root(i), root(j)
            if ri == rj:
                return False
            parent[ri] = rj
        return True


@dataclass
class PatchAssignment:
    labels: list[tuple[int, float]]  # (candidate id, rotation) per anchor
    total_energy: float
    converged: bool = True
    warning: str | None = None
    trace: list[float] = field(default_factory=list)  # energy per iteration (one entry for DP)


@dataclass
class PropagationState:
    """Mutable working image shared by the propagation and fill stages."""

    image: np.ndarray  # (H, W, 3) float64, 0..255
    known: np.ndarray  # bool
    confidence: np.ndarray  # float64

    @classmethod
    def from_inputs(cls, img, mask) -> "PropagationState":
        data = np.asarray(img, dtype=np.float64)[:, :, :3].copy()
        hole = np.asarray(mask, dtype=bool)
        return cls(data, ~hole, (~hole).astype(np.float64))


def anchor_spacing(l: int) -> int:
    return max(1, l // 4)


def place_anchors(curve: StructureCurve, l: int, curve_ref: int | None = None) -> list[AnchorPoint]:
    """Anchors every floor(l/4) px of arc length from the first sample, plus the last sample."""
    if l < 5 or l % 2 == 0:
        raise ValueError(f"patch side must be odd and >= 5, got {l}")
    pts = np.asarray(curve.samples, dtype=float)
    if len(pts) < 2:
        raise ValueError("curve needs at least two samples")
    ref = curve.id if curve_ref is None else curve_ref
    s = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(pts, axis=0).T))])
    total = float(s[-1])
    dd = anchor_spacing(l)
    count = int(math.ceil(total / dd - 1e-9)) + 1
    at = [min(k * dd, total) for k in range(count - 1)] + [total]
    out = []
    for i, u in enumerate(at):
        x = float(np.interp(u, s, pts[:, 0]))
        y = float(np.interp(u, s, pts[:, 1]))
        c = (int(round(x)), int(round(y)))
        out.append(AnchorPoint(c, ref, i, PatchWindow(c, l), (x, y)))
    return out


def collect_candidates(img, mask, l: int, band: float, cap: int = 400, seed: int = 0) -> list[CandidatePatch]:
    """Fully known l x l windows on a floor(l/2) stride whose centres lie within ``band`` of the hole."""
    if band < l:
        raise ValueError("band must be at least the patch side")
    data = np.asarray(img, dtype=np.float64)[:, :, :3]
    hole = np.asarray(mask, dtype=bool)
    h, w = hole.shape
    half = (l - 1) // 2
    stride = max(1, l // 2)
    # any hole pixel inside the window disqualifies it
    hole_count = ndimage.uniform_filter(hole.astype(np.float64), size=l, mode="constant") * (l * l)
    dist = ndimage.distance_transform_edt(~hole)
    centers = []
    for y in range(half, h - half, stride):
        for x in range(half, w - half, stride):
            if hole_count[y, x] < 0.5 and dist[y, x] <= band:
                centers.append((x, y))
    if not centers:
        raise PropagationError("no fully known source window near the hole")
    if len(centers) > cap:
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(len(centers), size=cap, replace=False))
        centers = [centers[k] for k in keep]
    return [
        CandidatePatch(k, c, data[c[1] - half : c[1] + half + 1, c[0] - half : c[0] + half + 1].copy())
        for k, c in enumerate(centers)
    ]


def rotate_block(pixels: np.ndarray, theta: float) -> tuple[np.ndarray, np.ndarray]:
    """Rotate a square block about its centre (counter-clockwise on screen).

    Quarter turns are exact; other angles use bilinear sampling and report
    the pixels whose source falls inside the block as valid.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    l = pixels.shape[0]
    quarter = theta / (math.pi / 2)
    if abs(quarter - round(quarter)) < 1e-12:
        k = int(round(quarter)) % 4
        return np.rot90(pixels, k).copy(), np.ones((l, l), dtype=bool)
    half = (l - 1) / 2
    yy, xx = np.mgrid[0:l, 0:l].astype(float)
    u, v = xx - half, yy - half
    c, s = math.cos(theta), math.sin(theta)
    sx = u * c - v * s + half
    sy = u * s + v * c + half
    valid = (sx >= -1e-9) & (sx <= l - 1 + 1e-9) & (sy >= -1e-9) & (sy <= l - 1 + 1e-9)
    out = np.stack(
        [ndimage.map_coordinates(pixels[:, :, ch], [sy, sx], order=1, mode="nearest") for ch in range(pixels.shape[2])],
        axis=2,
    )
    out[~valid] = 0.0
    return out, valid


def _window(state: PropagationState, anchor: AnchorPoint) -> tuple[np.ndarray, np.ndarray]:
    """Anchor window as an (l, l, 3) block plus its known mask; outside the image counts as unknown."""
    l = anchor.patch.side
    rows, cols, pr, pc = anchor.patch.bounds(state.known.shape)
    block = np.zeros((l, l, 3))
    known = np.zeros((l, l), dtype=bool)
    block[pr, pc] = state.image[rows, cols]
    known[pr, pc] = state.known[rows, cols]
    return block, known


def _normalise(ssd, lam, l: int, literal: bool, kappa_free: float):
    if literal:
        # alpha = 1/lambda times P = lambda/l^2 applied to the SSD
        return np.where(lam > 0, ssd / (l * l), kappa_free)
    lam_safe = np.where(lam > 0, lam, 1.0)
    return np.where(lam > 0, ssd * (l * l) / (lam_safe * lam_safe), kappa_free)


def node_energy(
    anchor: AnchorPoint,
    cand: CandidatePatch,
    theta: float,
    state: PropagationState,
    literal: bool = False,
    kappa_free: float | None = None,
) -> float:
    """Mean SSD against the known part of the anchor window, divided by the overlap fraction."""
    l = anchor.patch.side
    if kappa_free is None:
        kappa_free = 10.0 * l * l
    rot, valid = rotate_block(cand.pixels, theta)
    target, known = _window(state, anchor)
    ov = valid & known
    lam = int(ov.sum())
    if lam == 0:
        return float(kappa_free)
    ssd = float(np.sum((rot[ov] - target[ov]) ** 2))
    return float(_normalise(ssd, lam, l, literal, kappa_free))


def _placement_overlap(ci, cj, l: int, shape) -> tuple[slice, slice, slice, slice, np.ndarray] | None:
    """Overlap of two l x l windows in each window's own coordinates, clipped to the image."""
    dx, dy = cj[0] - ci[0], cj[1] - ci[1]
    if abs(dx) >= l or abs(dy) >= l:
        return None
    r0, r1 = max(0, dy), min(l, l + dy)
    c0, c1 = max(0, dx), min(l, l + dx)
    half = (l - 1) // 2
    ys = ci[1] - half + np.arange(r0, r1)
    xs = ci[0] - half + np.arange(c0, c1)
    inside = ((ys >= 0) & (ys < shape[0]))[:, None] & ((xs >= 0) & (xs < shape[1]))[None, :]
    return slice(r0, r1), slice(c0, c1), slice(r0 - dy, r1 - dy), slice(c0 - dx, c1 - dx), inside


def pairwise_energy(
    a_i: AnchorPoint,
    a_j: AnchorPoint,
    choice_i: tuple[CandidatePatch, float],
    choice_j: tuple[CandidatePatch, float],
    state: PropagationState,
    literal: bool = False,
) -> float:
    """Mean SSD between the two placed patches over their overlap, divided by the overlap fraction."""
    l = a_i.patch.side
    ov = _placement_overlap(a_i.center, a_j.center, l, state.known.shape)
    if ov is None:
        return 0.0
    ri, ci, rj, cj, inside = ov
    pi, vi = rotate_block(choice_i[0].pixels, choice_i[1])
    pj, vj = rotate_block(choice_j[0].pixels, choice_j[1])
    sel = vi[ri, ci] & vj[rj, cj] & inside
    lam = int(sel.sum())
    if lam == 0:
        return 0.0
    ssd = float(np.sum((pi[ri, ci][sel] - pj[rj, cj][sel]) ** 2))
    return float(_normalise(ssd, lam, l, literal, 0.0))


class LabelSpace:
    """All (candidate, rotation) labels with their rotated blocks precomputed."""

    def __init__(self, candidates: Sequence[CandidatePatch], rotations=ROTATIONS):
        if not candidates:
            raise PropagationError("empty candidate list")
        self.candidates = list(candidates)
        self.rotations = tuple(rotations)
        blocks, valid = [], []
        for cand in self.candidates:
            for theta in self.rotations:
                b, v = rotate_block(cand.pixels, theta)
                blocks.append(b)
                valid.append(v)
        self.blocks = np.asarray(blocks)
        self.valid = np.asarray(valid)
        self.l = self.blocks.shape[1]

    def __len__(self) -> int:
        return len(self.blocks)

    def label(self, k: int) -> tuple[int, float]:
        r = len(self.rotations)
        return self.candidates[k // r].id, self.rotations[k % r]

    def choice(self, k: int) -> tuple[CandidatePatch, float]:
        r = len(self.rotations)
        return self.candidates[k // r], self.rotations[k % r]


class EnergyModel:
    """Node tables and lazily built edge tables for a set of anchors."""

    def __init__(
        self,
        anchors: Sequence[AnchorPoint],
        labels: LabelSpace,
        state: PropagationState,
        literal: bool = False,
        kappa_free: float | None = None,
    ):
        self.anchors = list(anchors)
        self.labels = labels
        self.state = state
        self.literal = literal
        l = labels.l
        self.kappa_free = 10.0 * l * l if kappa_free is None else kappa_free
        self.unary = [self._node_table(a) for a in self.anchors]

    def _node_table(self, anchor: AnchorPoint) -> np.ndarray:
        l = self.labels.l
        target, known = _window(self.state, anchor)
        ov = self.labels.valid & known[None]
        lam = ov.sum(axis=(1, 2)).astype(np.float64)
        diff = self.labels.blocks - target[None]
        ssd = np.sum(diff * diff * ov[..., None], axis=(1, 2, 3))
        return _normalise(ssd, lam, l, self.literal, self.kappa_free)

    def edge(self, i: int, j: int, li: np.ndarray | None = None, lj: np.ndarray | None = None) -> np.ndarray:
        """Table E[x_i, x_j] for anchors i and j, optionally restricted to label subsets."""
        l = self.labels.l
        li = np.arange(len(self.labels)) if li is None else np.asarray(li)
        lj = np.arange(len(self.labels)) if lj is None else np.asarray(lj)
        ov = _placement_overlap(self.anchors[i].center, self.anchors[j].center, l, self.state.known.shape)
        if ov is None:
            return np.zeros((len(li), len(lj)))
        ri, ci, rj, cj, inside = ov
        va = (self.labels.valid[li][:, ri, ci] & inside).reshape(len(li), -1).astype(np.float64)
        vb = (self.labels.valid[lj][:, rj, cj] & inside).reshape(len(lj), -1).astype(np.float64)
        A = self.labels.blocks[li][:, ri, ci].reshape(len(li), va.shape[1], -1)
        B = self.labels.blocks[lj][:, rj, cj].reshape(len(lj), vb.shape[1], -1)
        qa = np.sum(A * A, axis=2) * va
        qb = np.sum(B * B, axis=2) * vb
        am = (A * va[..., None]).reshape(len(li), -1)
        bm = (B * vb[..., None]).reshape(len(lj), -1)
        # sum over common pixels of |a - b|^2 = |a|^2 + |b|^2 - 2 a.b
        ssd = qa @ vb.T + va @ qb.T - 2.0 * (am @ bm.T)
        np.maximum(ssd, 0.0, out=ssd)
        lam = va @ vb.T
        return _normalise(ssd, lam, l, self.literal, 0.0)


def chain_dp(unary: Sequence[np.ndarray], pairwise: Callable[[int], np.ndarray]) -> tuple[list[int], float]:
    """Exact minimum of sum_i U_i(x_i) + sum_i P_i(x_i, x_{i+1}) along a chain.

    ``pairwise(i)`` returns the table between positions i and i+1.
    """
    if not unary:
        return [], 0.0
    xi = np.asarray(unary[0], dtype=np.float64)
    back = []
    for i in range(1, len(unary)):
        table = pairwise(i - 1)
        total = xi[:, None] + table
        arg = np.argmin(total, axis=0)
        back.append(arg)
        xi = np.asarray(unary[i], dtype=np.float64) + total[arg, np.arange(total.shape[1])]
    labels = [int(np.argmin(xi))]
    best = float(xi[labels[0]])
    for arg in reversed(back):
        labels.append(int(arg[labels[-1]]))
    return labels[::-1], best


def assignment_energy(labels, unary, edges: dict) -> float:
    """Energy of a labelling from precomputed tables."""
    e = sum(float(u[x]) for u, x in zip(unary, labels))
    for (i, j), table in edges.items():
        e += float(table[labels[i], labels[j]])
    return e


@dataclass
class BPResult:
    labels: list[int]
    energy: float
    converged: bool
    iterations: int
    trace: list[float]


def _decode(unary, adj, msgs, edges) -> list[int]:
    """Conditional decoding in breadth-first order; exact on trees at convergence."""
    n = len(unary)
    belief = [np.asarray(unary[i], dtype=np.float64).copy() for i in range(n)]
    for (i, j), m in msgs.items():
        belief[j] += m
    labels = [-1] * n
    for root in range(n):
        if labels[root] >= 0:
            continue
        labels[root] = int(np.argmin(belief[root]))
        queue = deque([root])
        while queue:
            i = queue.popleft()
            for j in adj[i]:
                if labels[j] >= 0:
                    continue
                table = edges[(i, j)] if (i, j) in edges else edges[(j, i)].T
                score = belief[j] - msgs[(i, j)] + table[labels[i]]
                labels[j] = int(np.argmin(score))
                queue.append(j)
    return labels


def min_sum_bp(
    unary: Sequence[np.ndarray],
    edges: dict[tuple[int, int], np.ndarray],
    delta: float = 1e-3,
    max_iter: int = 50,
    damping: float = 0.5,
) -> BPResult:
    """Damped synchronous min-sum message passing with best-so-far bookkeeping.

    ``edges[(i, j)]`` holds E[x_i, x_j]. After the damped phase, undamped sweeps
    (one per vertex) make the messages exact on trees.
    """
    n = len(unary)
    adj: list[list[int]] = [[] for _ in range(n)]
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    tables = {}
    for (i, j), t in edges.items():
        tables[(i, j)] = t
        tables[(j, i)] = t.T
    msgs = {(i, j): np.zeros(len(unary[j])) for (i, j) in tables}
    scale = max(1.0, max((float(np.max(np.abs(u[np.isfinite(u)]))) for u in unary if len(u)), default=1.0))

    def sweep(damp):
        incoming = [np.asarray(unary[i], dtype=np.float64).copy() for i in range(n)]
        for (k, i), m in msgs.items():
            incoming[i] += m
        new = {}
        change = 0.0
        for (i, j), t in tables.items():
            h = incoming[i] - msgs[(j, i)]
            m = np.min(h[:, None] + t, axis=0)
            m -= m.min()
            if damp:
                m = damp * msgs[(i, j)] + (1.0 - damp) * m
            change = max(change, float(np.max(np.abs(m - msgs[(i, j)]))))
            new[(i, j)] = m
        msgs.update(new)
        return change

    trace: list[float] = []
    best_labels = [int(np.argmin(u)) for u in unary]
    best = assignment_energy(best_labels, unary, edges)
    converged = not tables
    it = 0
    phases = [(damping, max_iter), (0.0, n)]
    for damp, count in phases:
        for _ in range(count):
            if not tables:
                break
            change = sweep(damp)
            it += 1
            labels = _decode(unary, adj, msgs, tables)
            e = assignment_energy(labels, unary, edges)
            if e < best:
                best, best_labels = e, labels
            trace.append(best)
            if damp and change < delta * scale:
                converged = True
                break
    if tables and not converged:
        log.warning("belief propagation did not converge in %d iterations", max_iter)
    return BPResult(best_labels, best, converged, it, trace)


def _assignment(model: EnergyModel, labels: list[int], edges, converged=True, trace=None) -> PatchAssignment:
    choices = [model.labels.label(k) for k in labels]
    total = total_energy(model.anchors, [model.labels.choice(k) for k in labels], edges, model.state, model.literal, model.kappa_free)
    warning = None if converged else "belief propagation did not converge; best-so-far labelling returned"
    return PatchAssignment(choices, total, converged, warning, list(trace or [total]))


def total_energy(anchors, choices, edges, state, literal=False, kappa_free=None) -> float:
    """Direct re-evaluation of all node and edge energies for a labelling given as (candidate, rotation)."""
    e = sum(node_energy(a, c, th, state, literal, kappa_free) for a, (c, th) in zip(anchors, choices))
    for i, j in edges:
        e += pairwise_energy(anchors[i], anchors[j], choices[i], choices[j], state, literal)
    return e


def optimize_chain(
    anchors: Sequence[AnchorPoint],
    candidates: Sequence[CandidatePatch],
    state: PropagationState,
    rotations=ROTATIONS,
    literal: bool = False,
    kappa_free: float | None = None,
) -> PatchAssignment:
    """Exact dynamic programming along a path of anchors."""
    if not candidates:
        raise PropagationError("empty candidate list")
    model = EnergyModel(anchors, LabelSpace(candidates, rotations), state, literal, kappa_free)
    labels, _ = chain_dp(model.unary, lambda i: model.edge(i, i + 1))
    edges = [(i, i + 1) for i in range(len(anchors) - 1)]
    return _assignment(model, labels, edges)


def optimize_graph(
    graph: StructureGraph,
    candidates: Sequence[CandidatePatch],
    state: PropagationState,
    delta: float = 1e-3,
    max_iter: int = 50,
    damping: float = 0.5,
    rotations=ROTATIONS,
    literal: bool = False,
    kappa_free: float | None = None,
    max_labels: int | None = 256,
) -> PatchAssignment:
    """Min-sum belief propagation over the anchor graph.

    Loopy graphs keep one table per edge, so each vertex is limited to its
    ``max_labels`` best labels by node energy (None keeps them all).
    """
    if not candidates:
        raise PropagationError("empty candidate list")
    model = EnergyModel(graph.vertices, LabelSpace(candidates, rotations), state, literal, kappa_free)
    n = len(model.labels)
    if max_labels is None or n <= max_labels:
        keep = [np.arange(n)] * len(graph.vertices)
    else:
        keep = [np.sort(np.argsort(u, kind="stable")[:max_labels]) for u in model.unary]
    unary = [u[k] for u, k in zip(model.unary, keep)]
    tables = {(i, j): model.edge(i, j, keep[i], keep[j]) for i, j in graph.edges}
    res = min_sum_bp(unary, tables, delta, max_iter, damping)
    labels = [int(keep[i][x]) for i, x in enumerate(res.labels)]
    return _assignment(model, labels, graph.edges, res.converged, res.trace)


def build_graph(anchor_lists: Sequence[Sequence[AnchorPoint]], l: int) -> StructureGraph:
    """Chain each curve's anchors; where two curves cross, share the closest anchor pair as one vertex."""
    dd = anchor_spacing(l)
    vertices: list[AnchorPoint] = []
    ids: list[list[int]] = []
    for anchors in anchor_lists:
        ids.append(list(range(len(vertices), len(vertices) + len(anchors))))
        vertices.extend(anchors)
    alias = list(range(len(vertices)))
    merged = 0
    for a in range(len(anchor_lists)):
        for b in range(a + 1, len(anchor_lists)):
            if not ids[a] or not ids[b]:
                continue
            pa = np.array([vertices[i].position for i in ids[a]])
            pb = np.array([vertices[i].position for i in ids[b]])
            d = np.hypot(pa[:, None, 0] - pb[None, :, 0], pa[:, None, 1] - pb[None, :, 1])
            i, j = np.unravel_index(int(np.argmin(d)), d.shape)
            if d[i, j] <= dd:
                alias[ids[b][j]] = alias[ids[a][i]]
                merged += 1
    keep = sorted(set(alias))
    remap = {old: new for new, old in enumerate(keep)}
    final = [vertices[k] for k in keep]
    edges = set()
    for chain in ids:
        for u, v in zip(chain, chain[1:]):
            x, y = remap[alias[u]], remap[alias[v]]
            if x != y:
                edges.add((min(x, y), max(x, y)))
    return StructureGraph(final, sorted(edges), merged)


def paste_assignment(
    state: PropagationState,
    anchors: Sequence[AnchorPoint],
    assignment: PatchAssignment,
    candidates: Sequence[CandidatePatch],
) -> np.ndarray:
    """Write the chosen patches into the hole with centre-weighted blending.

    Returns the boolean grid of pixels written.
    """
    by_id = {c.id: c for c in candidates}
    h, w = state.known.shape
    acc = np.zeros((h, w, 3))
    wsum = np.zeros((h, w))
    placed = []
    for anchor, (cid, theta) in zip(anchors, assignment.labels):
        block, valid = rotate_block(by_id[cid].pixels, theta)
        l = anchor.patch.side
        half = anchor.patch.half
        yy, xx = np.mgrid[-half : half + 1, -half : half + 1]
        weight = (1.0 - np.hypot(xx, yy) / (half * math.sqrt(2) + 1.0)) * valid
        rows, cols, pr, pc = anchor.patch.bounds((h, w))
        acc[rows, cols] += block[pr, pc] * weight[pr, pc, None]
        wsum[rows, cols] += weight[pr, pc]
        placed.append((rows, cols, valid[pr, pc]))
    written = np.zeros((h, w), dtype=bool)
    for rows, cols, valid in placed:
        known = state.known[rows, cols]
        conf = float(state.confidence[rows, cols][known].mean()) if known.any() else 0.0
        new = valid & ~known & (wsum[rows, cols] > 0)
        if not new.any():
            continue
        sub_acc = acc[rows, cols]
        sub_w = wsum[rows, cols]
        state.image[rows, cols][new] = np.rint(sub_acc[new] / sub_w[new, None])
        state.confidence[rows, cols][new] = conf
        state.known[rows, cols][new] = True
        written[rows, cols] |= new
    return written
