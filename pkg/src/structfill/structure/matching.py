"""Region histograms, Jensen-Shannon distance and optimal non-crossing edge pairing."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..imagery import to_lab
from .terminals import EdgeTerminal

LN2 = math.log(2.0)
DELTA_H = 0.5 * (2 * LN2)
EPS_L = 0.05
HIST_BINS = 16
MAX_TURN = math.radians(120.0)

# Lab channel ranges binned by region_histogram
_LAB_RANGES = ((0.0, 100.0), (-128.0, 128.0), (-128.0, 128.0))


@dataclass(frozen=True)
class RegionHistogram:
    bins: np.ndarray


@dataclass
class EdgePair:
    source: EdgeTerminal
    target: EdgeTerminal
    cost: float


def region_histogram(img, region, lab: np.ndarray | None = None, bins: int = HIST_BINS) -> RegionHistogram:
    """Concatenated per-channel Lab histogram (3 * bins entries) normalised to sum 1."""
    region = np.asarray(region)
    if lab is None:
        lab = to_lab(img)
    values = lab[region] if region.dtype == bool else lab.reshape(-1, 3)[region]
    if len(values) == 0:
        raise ValueError("empty region")
    parts = []
    for ch, (lo, hi) in enumerate(_LAB_RANGES):
        idx = np.clip(((values[:, ch] - lo) / (hi - lo) * bins).astype(int), 0, bins - 1)
        parts.append(np.bincount(idx, minlength=bins))
    counts = np.concatenate(parts).astype(float)
    return RegionHistogram(counts / counts.sum())


def js_divergence(h1, h2) -> float:
    """Sum of H1 log(2H1/(H1+H2)) + H2 log(2H2/(H1+H2)); lies in [0, 2 ln 2]."""
    p = np.asarray(getattr(h1, "bins", h1), dtype=float)
    q = np.asarray(getattr(h2, "bins", h2), dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"histogram sizes differ: {p.shape} vs {q.shape}")
    s = p + q
    total = 0.0
    for a, b, m in ((p, q, s), (q, p, s)):
        sel = (a > 0) & (m > 0)
        total += float(np.sum(a[sel] * np.log(2.0 * a[sel] / m[sel])))
    return max(total, 0.0)


def _flank_histograms(term: EdgeTerminal, img, lab) -> tuple:
    if term.histograms is None:
        term.histograms = tuple(region_histogram(img, r, lab=lab) for r in term.flank_regions)
    return term.histograms


def pair_cost(
    s: EdgeTerminal,
    t: EdgeTerminal,
    img,
    eps_L: float = EPS_L,
    delta_H: float = DELTA_H,
    lab: np.ndarray | None = None,
) -> float:
    """Strength-weighted flank dissimilarity of two terminals; inf when the flanks disagree."""
    if lab is None and (s.histograms is None or t.histograms is None):
        lab = to_lab(img)
    hs = _flank_histograms(s, img, lab)
    ht = _flank_histograms(t, img, lab)
    options = []
    for i, j in ((0, 1), (1, 0)):
        d1 = js_divergence(hs[0], ht[i])
        d2 = js_divergence(hs[1], ht[j])
        options.append((d1 + d2, d1, d2))
    total, d1, d2 = min(options)
    if d1 > delta_H or d2 > delta_H:
        return math.inf
    l_max = max(s.strength, t.strength)
    return (abs(s.strength - t.strength) + eps_L) / l_max * total


def noncrossing_matching(
    cost: np.ndarray, unmatched: float, tiebreak: np.ndarray | None = None
) -> tuple[float, list[tuple[int, int]]]:
    """Minimum-cost non-crossing partial matching of points in circular order.

    ``cost[i, j]`` is the price of pairing i and j (inf forbids it) and every
    point left single pays ``unmatched``.  Among equal-cost matchings the one
    with the smallest summed ``tiebreak`` wins.  Interval DP, O(n^3).
    """
    cost = np.asarray(cost, dtype=float)
    n = len(cost)
    if n == 0:
        return 0.0, []
    tb = np.zeros_like(cost) if tiebreak is None else np.asarray(tiebreak, dtype=float)
    # best[i][j] = (cost, tiebreak) over the closed interval i..j; empty intervals cost nothing
    best = [[(0.0, 0.0)] * (n + 1) for _ in range(n + 1)]
    choice = [[-1] * (n + 1) for _ in range(n + 1)]

    def f(i, j):
        return best[i][j] if i <= j else (0.0, 0.0)

    for length in range(1, n + 1):
        for i in range(0, n - length + 1):
            j = i + length - 1
            rest = f(i + 1, j)
            value = (unmatched + rest[0], rest[1])
            pick = -1
            for k in range(i + 1, j + 1):
                c = cost[i, k]
                if not math.isfinite(c):
                    continue
                a, b = f(i + 1, k - 1), f(k + 1, j)
                v = (c + a[0] + b[0], tb[i, k] + a[1] + b[1])
                if v < value:
                    value, pick = v, k
            best[i][j] = value
            choice[i][j] = pick

    pairs: list[tuple[int, int]] = []
    stack = [(0, n - 1)]
    while stack:
        i, j = stack.pop()
        if i > j:
            continue
        k = choice[i][j]
        if k < 0:
            stack.append((i + 1, j))
        else:
            pairs.append((i, k))
            stack.append((i + 1, k - 1))
            stack.append((k + 1, j))
    return best[0][n - 1][0], sorted(pairs)


def turning_angle(s: EdgeTerminal, t: EdgeTerminal) -> float:
    """Heading change needed to leave s along its tangent and arrive at t against its tangent."""
    a = math.atan2(s.tangent[1], s.tangent[0])
    b = math.atan2(-t.tangent[1], -t.tangent[0])
    return abs((b - a + math.pi) % (2 * math.pi) - math.pi)


def admissible(s: EdgeTerminal, t: EdgeTerminal, max_turn: float = MAX_TURN) -> bool:
    """Both tangents must face the other terminal and the bridge may not turn more than max_turn."""
    if s.component != t.component or s.arc_ref == t.arc_ref:
        return False
    chord = np.subtract(t.hit_point, s.hit_point).astype(float)
    if not np.any(chord):
        return False
    return (
        float(np.dot(s.tangent, chord)) > 0
        and float(np.dot(t.tangent, -chord)) > 0
        and turning_angle(s, t) <= max_turn
    )


def cost_matrix(
    terminals: Sequence[EdgeTerminal],
    img,
    eps_L: float = EPS_L,
    delta_H: float = DELTA_H,
    max_turn: float = MAX_TURN,
) -> np.ndarray:
    n = len(terminals)
    cost = np.full((n, n), math.inf)
    lab = to_lab(img) if n > 1 else None
    for i in range(n):
        for j in range(i + 1, n):
            a, b = terminals[i], terminals[j]
            if not admissible(a, b, max_turn):
                continue
            cost[i, j] = cost[j, i] = pair_cost(a, b, img, eps_L, delta_H, lab=lab)
    return cost


def match_pairs(
    terminals: Sequence[EdgeTerminal],
    img,
    eps_L: float = EPS_L,
    delta_H: float = DELTA_H,
    unmatched: float | None = None,
    max_turn: float = MAX_TURN,
) -> list[EdgePair]:
    """Pair terminals along the hole boundary so that the total pair cost is minimal."""
    if unmatched is None:
        unmatched = 1.5 * delta_H
    ordered = sorted(terminals, key=lambda e: e.boundary_position)
    if len(ordered) < 2:
        return []
    cost = cost_matrix(ordered, img, eps_L, delta_H, max_turn)
    # equal appearance costs are common on synthetic scenes; prefer the straighter bridge
    n = len(ordered)
    bend = np.array([[turning_angle(ordered[i], ordered[j]) for j in range(n)] for i in range(n)])
    _, pairs = noncrossing_matching(cost, unmatched, tiebreak=bend)
    out = [EdgePair(ordered[i], ordered[j], float(cost[i, j])) for i, j in pairs]
    out.sort(key=lambda p: p.cost)
    return out
