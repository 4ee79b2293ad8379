"""Edge signals and a watershed-based ultrametric contour hierarchy.

The oriented signal is the half-disc chi-squared histogram gradient averaged
over the brightness / a / b / texture channels.  The hierarchy floods that
signal with a marker watershed over the known region and then merges the
weakest shared boundary greedily, which yields nested regions whose contours
carry the level at which they vanish.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.fft as sfft
from scipy import ndimage
from skimage.morphology import disk, h_minima
from skimage.segmentation import watershed

from .imagery import ChannelStack


@dataclass(frozen=True)
class GpbParams:
    sigma: float = 2.0
    beta: float = 1.0
    gamma: float = 0.0
    orientations: int = 8
    radius: int = 5
    bins: int = 16

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")
        if self.beta < 0 or self.gamma < 0:
            raise ValueError("beta and gamma must be >= 0")
        if self.beta + self.gamma <= 0:
            raise ValueError("beta + gamma must be > 0")
        if self.orientations < 4:
            raise ValueError("need at least 4 orientations")
        if self.radius < 2:
            raise ValueError("half-disc radius must be >= 2")
        if self.bins < 2:
            raise ValueError("need at least 2 histogram bins")

    @property
    def thetas(self) -> np.ndarray:
        return np.arange(self.orientations) * np.pi / self.orientations


@dataclass
class EdgeSignal:
    """Boundary signal: per-orientation responses and their pointwise maximum."""

    magnitude: np.ndarray
    responses: np.ndarray  # (orientations, H, W)
    thetas: np.ndarray
    gradient: Optional[np.ndarray] = None  # Gaussian-derivative magnitude of brightness
    sigma: float = 2.0


SpectralHook = Callable[[ChannelStack, np.ndarray], np.ndarray]


def gaussian_derivative_kernels(sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """First-derivative-of-Gaussian kernels (G_x, G_y), truncated at 3 sigma."""
    r = int(np.ceil(3 * sigma))
    y, x = np.mgrid[-r : r + 1, -r : r + 1].astype(float)
    g = np.exp(-(x * x + y * y) / (2 * sigma * sigma)) / (2 * np.pi * sigma * sigma)
    return -x * g / sigma**2, -y * g / sigma**2


def _derivative_along(grid: np.ndarray, axis: int, sigma: float) -> np.ndarray:
    """Separable I * G_x (axis=1) or I * G_y (axis=0) with clamp-to-edge borders.

    The odd factor is applied as paired differences so flat input gives exactly 0.
    """
    r = int(np.ceil(3 * sigma))
    k = np.arange(1, r + 1, dtype=float)
    g1 = np.exp(-(k * k) / (2 * sigma * sigma)) / (np.sqrt(2 * np.pi) * sigma)
    pad = [(0, 0), (0, 0)]
    pad[axis] = (r, r)
    padded = np.pad(grid, pad, mode="edge")
    n = grid.shape[axis]
    out = np.zeros_like(grid)
    for kk, weight in zip(range(1, r + 1), k * g1 / sigma**2):
        ahead = np.take(padded, np.arange(r + kk, r + kk + n), axis=axis)
        behind = np.take(padded, np.arange(r - kk, r - kk + n), axis=axis)
        out += weight * (ahead - behind)
    # even Gaussian factor across the other axis
    x = np.arange(-r, r + 1, dtype=float)
    smooth = np.exp(-(x * x) / (2 * sigma * sigma)) / (np.sqrt(2 * np.pi) * sigma)
    return ndimage.correlate1d(out, smooth, axis=1 - axis, mode="nearest")


def gaussian_derivative_edges(channel: np.ndarray, sigma: float) -> np.ndarray:
    """Gradient magnitude sqrt((I*Gx)^2 + (I*Gy)^2) with clamp-to-edge borders."""
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    channel = np.asarray(channel, dtype=float)
    if channel.size == 0:
        raise ValueError("empty grid")
    return np.hypot(_derivative_along(channel, 1, sigma), _derivative_along(channel, 0, sigma))


def half_disc_masks(radius: int, theta: float) -> tuple[np.ndarray, np.ndarray]:
    """Two half-discs split by the diameter at angle ``theta`` (x right, y down).

    Pixels on the diameter belong to neither half; the halves are point
    reflections of each other.
    """
    y, x = np.mgrid[-radius : radius + 1, -radius : radius + 1].astype(float)
    inside = x * x + y * y <= radius * radius + 1e-9
    side = x * np.sin(theta) - y * np.cos(theta)
    return inside & (side > 1e-9), inside & (side < -1e-9)


def quantize(grid: np.ndarray, bins: int) -> np.ndarray:
    return np.clip((np.asarray(grid) * bins).astype(int), 0, bins - 1)


class _Correlator:
    """Correlates a stack of same-sized grids with many small kernels via one FFT."""

    def __init__(self, stack: np.ndarray, radius: int):
        self.radius = radius
        self.h, self.w = stack.shape[1:]
        k = 2 * radius + 1
        self.shape = (sfft.next_fast_len(self.h + k - 1), sfft.next_fast_len(self.w + k - 1))
        self.spectrum = sfft.rfft2(stack, s=self.shape, axes=(1, 2))

    def __call__(self, kernel: np.ndarray) -> np.ndarray:
        kspec = sfft.rfft2(kernel[::-1, ::-1], s=self.shape)
        full = sfft.irfft2(self.spectrum * kspec, s=self.shape, axes=(1, 2))
        r = self.radius
        return full[:, r : r + self.h, r : r + self.w]


def oriented_gradients(
    stack: ChannelStack,
    thetas,
    radius: int = 5,
    bins: int = 16,
    known: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Half-disc chi-squared gradient for each theta, averaged over the four channels.

    Only pixels flagged in ``known`` enter the histograms; a half-disc with no
    known pixel contributes a zero response.
    """
    if radius < 2:
        raise ValueError("half-disc radius must be >= 2")
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    shape = stack.shape
    weight = np.ones(shape) if known is None else np.asarray(known, dtype=float)
    halves = [half_disc_masks(radius, t) for t in thetas]
    counts = _Correlator(weight[None], radius)
    norms = [(counts(a.astype(float))[0], counts(b.astype(float))[0]) for a, b in halves]
    out = np.zeros((len(thetas),) + shape)
    for channel in stack:
        q = quantize(channel, bins)
        ind = np.stack([(q == b) * weight for b in range(bins)])
        corr = _Correlator(ind, radius)
        for i, (a, b) in enumerate(halves):
            na, nb = norms[i]
            ok = (na > 0.5) & (nb > 0.5)
            ga = corr(a.astype(float)) / np.where(ok, na, 1.0)
            gb = corr(b.astype(float)) / np.where(ok, nb, 1.0)
            ga = np.clip(ga, 0.0, None)
            gb = np.clip(gb, 0.0, None)
            den = ga + gb
            num = (ga - gb) ** 2
            chi = 0.5 * np.sum(np.divide(num, den, out=np.zeros_like(num), where=den > 1e-12), axis=0)
            chi[~ok] = 0.0
            out[i] += chi
    out /= 4.0
    # FFT round-off on flat areas
    out[out < 1e-9] = 0.0
    return out


def oriented_gradient(stack: ChannelStack, theta: float, radius: int = 5, bins: int = 16, known=None) -> np.ndarray:
    """Half-disc chi-squared gradient at one orientation, equal weight per channel."""
    return oriented_gradients(stack, [theta], radius, bins, known)[0]


def gpb(
    stack: ChannelStack,
    params: GpbParams = GpbParams(),
    spectral: Optional[SpectralHook] = None,
    known: Optional[np.ndarray] = None,
) -> EdgeSignal:
    """beta * mPb + gamma * sPb per orientation; the spectral term is skipped when gamma == 0."""
    if params.gamma > 0 and spectral is None:
        raise ValueError("gamma > 0 requires a spectral detector hook")
    thetas = params.thetas
    mpb = oriented_gradients(stack, thetas, params.radius, params.bins, known)
    responses = params.beta * mpb
    if params.gamma > 0:
        spb = np.asarray(spectral(stack, thetas), dtype=float)
        if spb.shape != mpb.shape:
            raise ValueError(f"spectral hook returned shape {spb.shape}, expected {mpb.shape}")
        responses = responses + params.gamma * spb
    return EdgeSignal(
        magnitude=responses.max(axis=0),
        responses=responses,
        thetas=thetas,
        gradient=gaussian_derivative_edges(stack.brightness, params.sigma),
        sigma=params.sigma,
    )


# ---------------------------------------------------------------------------
# hierarchy


@dataclass
class Arc:
    id: int
    pixels: np.ndarray  # (N, 2) integer (x, y)
    strength: float
    regions: tuple[int, int]  # the two watershed basins it separates
    event: int  # index of the merge that removes it


@dataclass
class ContourHierarchy:
    basins: np.ndarray  # watershed labels; 0 on contour pixels and in the hole
    known: np.ndarray
    landscape: np.ndarray
    arcs: list[Arc]
    # merge events: (level in [0,1], child a, child b, new node); basins are nodes 1..n
    merges: list[tuple[float, int, int, int]]
    n_basins: int
    _leaves: dict = field(default_factory=dict, repr=False)

    def contours_at(self, t: float) -> list[Arc]:
        return contours_at(self, t)

    def regions_at(self, t: float) -> np.ndarray:
        """Label image of the partition at threshold t (0 on contours and in the hole)."""
        parent = np.arange(self.n_basins + 1 + len(self.merges))
        for level, a, b, c in self.merges:
            if level <= t:
                parent[a] = c
                parent[b] = c
        root = parent.copy()
        # merged nodes always get larger ids than their children
        for i in range(len(root) - 1, -1, -1):
            p = root[i]
            if p != i:
                root[i] = root[p]
        lut = root[: self.n_basins + 1].copy()
        lut[0] = 0
        return lut[self.basins]

    def leaves(self, node: int) -> np.ndarray:
        """Basin labels under a merge-tree node."""
        if node in self._leaves:
            return self._leaves[node]
        if node <= self.n_basins:
            out = np.array([node])
        else:
            _, a, b, _ = self.merges[node - self.n_basins - 1]
            out = np.concatenate([self.leaves(a), self.leaves(b)])
        self._leaves[node] = out
        return out

    def region_mask(self, node: int) -> np.ndarray:
        return np.isin(self.basins, self.leaves(node))

    def flanks(self, arc: Arc) -> tuple[int, int]:
        """The two regions that the arc separates at the level where it emerges."""
        _, a, b, _ = self.merges[arc.event]
        return a, b


def contours_at(hier: ContourHierarchy, t: float) -> list[Arc]:
    """Arcs whose strength is strictly greater than t."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {t}")
    return [a for a in hier.arcs if a.strength > t]


_SHIFTS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def _neighbour_labels(labels: np.ndarray) -> np.ndarray:
    padded = np.pad(labels, 1)
    h, w = labels.shape
    return np.stack([padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w] for dy, dx in _SHIFTS])


def build_hierarchy(
    signal: EdgeSignal, mask, closing_radius: int = 3, h_frac: float = 0.01, smooth: bool = True
) -> ContourHierarchy:
    """Watershed the edge magnitude over the known region and merge greedily into a UCM.

    A grey closing first fills valleys narrower than the closing disc so a
    thin line yields one contour rather than two parallel ones; a Gaussian of
    the signal's sigma then centres a single crest on each structure.
    """
    hole = np.asarray(mask, dtype=bool)
    known = ~hole
    if not known.any():
        raise ValueError("known region is empty")
    mag = np.asarray(signal.magnitude, dtype=float)
    if mag.shape != hole.shape:
        raise ValueError("signal and mask dimensions differ")

    land = mag.copy()
    if closing_radius > 0:
        land = ndimage.grey_closing(land, footprint=disk(closing_radius))
    if smooth:
        land = ndimage.gaussian_filter(land, signal.sigma, mode="nearest")
    top = float(land[known].max())
    if top <= 0:
        basins, n = ndimage.label(known)
        return ContourHierarchy(basins, known, land, [], [], int(n))
    walled = np.where(known, land, top * 2 + 1.0)
    minima = h_minima(walled, h_frac * top) & known
    markers, _ = ndimage.label(minima)
    basins = watershed(walled, markers, mask=known, watershed_line=True)
    # pixels stranded without a marker (should not happen) join the contour set
    n = int(basins.max())

    # boundary pixels -> adjacent basin pairs
    line = known & (basins == 0)
    ys, xs = np.nonzero(line)
    nb = _neighbour_labels(basins)[:, ys, xs]  # (8, N)
    pair_pix: dict[tuple[int, int], list[int]] = {}
    for i in range(8):
        for j in range(i + 1, 8):
            a, b = nb[i], nb[j]
            sel = (a > 0) & (b > 0) & (a != b)
            if not sel.any():
                continue
            lo = np.minimum(a[sel], b[sel])
            hi = np.maximum(a[sel], b[sel])
            idx = np.nonzero(sel)[0]
            for u, v, k in zip(lo.tolist(), hi.tolist(), idx.tolist()):
                pair_pix.setdefault((u, v), []).append(k)
    pairs = {key: np.unique(np.asarray(v)) for key, v in pair_pix.items()}
    values = land[ys, xs]

    # greedy merging of the weakest boundary
    adj: dict[int, dict[int, list]] = {r: {} for r in range(1, n + 1)}
    for (u, v), idx in pairs.items():
        entry = [float(values[idx].sum()), len(idx), [(u, v)]]
        adj[u][v] = entry
        adj[v][u] = entry
    heap = []
    for (u, v), idx in sorted(pairs.items()):
        e = adj[u][v]
        heapq.heappush(heap, (e[0] / e[1], u, v, e[1]))
    alive = set(range(1, n + 1))
    merges: list[tuple[float, int, int, int]] = []
    pair_event: dict[tuple[int, int], int] = {}
    next_id = n + 1
    last = 0.0
    while heap:
        cost, u, v, cnt = heapq.heappop(heap)
        if u not in alive or v not in alive or v not in adj[u] or adj[u][v][1] != cnt:
            continue
        level = max(cost, last)
        last = level
        c = next_id
        next_id += 1
        ev = len(merges)
        merges.append((level, u, v, c))
        for key in adj[u][v][2]:
            pair_event[key] = ev
        alive -= {u, v}
        alive.add(c)
        merged: dict[int, list] = {}
        for src in (u, v):
            for w, e in adj[src].items():
                if w in (u, v):
                    continue
                if w in merged:
                    m = merged[w]
                    merged[w] = [m[0] + e[0], m[1] + e[1], m[2] + e[2]]
                else:
                    merged[w] = [e[0], e[1], list(e[2])]
                del adj[w][src]
        del adj[u], adj[v]
        adj[c] = merged
        for w, e in merged.items():
            adj[w][c] = e
            heapq.heappush(heap, (e[0] / e[1], min(w, c), max(w, c), e[1]))

    top_level = max((m[0] for m in merges), default=0.0)
    scale = 1.0 / top_level if top_level > 0 else 0.0
    merges = [(min(lv * scale, 1.0), a, b, c) for lv, a, b, c in merges]

    arcs: list[Arc] = []
    for key in sorted(pairs):
        idx = pairs[key]
        ev = pair_event[key]
        px, py = xs[idx], ys[idx]
        x0, y0 = px.min(), py.min()
        grid = np.zeros((py.max() - y0 + 1, px.max() - x0 + 1), dtype=bool)
        grid[py - y0, px - x0] = True
        comp, k = ndimage.label(grid, structure=np.ones((3, 3), dtype=int))
        for lab in range(1, k + 1):
            cy, cx = np.nonzero(comp == lab)
            arcs.append(
                Arc(
                    id=len(arcs),
                    pixels=np.stack([cx + x0, cy + y0], axis=1),
                    strength=merges[ev][0],
                    regions=key,
                    event=ev,
                )
            )
    return ContourHierarchy(basins, known, land, arcs, merges, n)
