"""Curve completion through the hole: discrete curvature, polyline fitting and clothoid chains."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.optimize import least_squares

from .matching import EdgePair

log = logging.getLogger(__name__)

CURVATURE_SCALE = 10.0  # px per unit curvature when fitting the curvature profile
MAX_END_CURVATURE = 0.1
MAX_CURVATURE = 0.5
JOIN_TOLERANCE = 0.05
ESCAPE_TOLERANCE = 0.0  # samples must stay in the hole; the boundary front is part of it
SAGITTA_FLOOR = 1.0


@dataclass
class StructureCurve:
    samples: np.ndarray  # (N, 2) float (x, y), about 1 px apart
    tangents: np.ndarray  # (N, 2) unit vectors
    curvature: np.ndarray  # (N,) signed, 1/px
    pair_ref: EdgePair | None = None
    kind: str = "clothoid"
    joins: list = field(default_factory=list)  # sample indices where clothoid pieces meet
    id: int = 0

    @property
    def length(self) -> float:
        return float(np.sum(np.hypot(*np.diff(self.samples, axis=0).T)))


def menger_curvature(p0, p1, p2) -> float:
    """Signed curvature 1/R of the circle through three points.

    The sign is that of det(p1 - p0, p2 - p1), i.e. it follows the turn direction.
    """
    p0, p1, p2 = (np.asarray(p, dtype=float) for p in (p0, p1, p2))
    u = p1 - p0
    v = p2 - p1
    w = p2 - p0
    a, b, c = math.hypot(*u), math.hypot(*v), math.hypot(*w)
    if a == 0.0 or b == 0.0 or c == 0.0:
        raise ValueError("menger curvature needs three distinct points")
    return 2.0 * (u[0] * v[1] - u[1] * v[0]) / (a * b * c)


def _max_deviation(points: np.ndarray, i: int, j: int) -> float:
    a, b = points[i], points[j]
    seg = points[i : j + 1]
    d = b - a
    n = math.hypot(*d)
    if n == 0.0:
        return float(np.max(np.hypot(*(seg - a).T)))
    return float(np.max(np.abs((seg[:, 0] - a[0]) * d[1] - (seg[:, 1] - a[1]) * d[0])) / n)


def fit_polyline(points, seg_penalty: float = 2.0, eps_fit: float = math.inf) -> list[int]:
    """Vertex indices of the polyline minimising sum(max deviation) + seg_penalty * segments.

    Vertices are input points; a segment whose maximum perpendicular
    deviation exceeds ``eps_fit`` is not allowed.
    """
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    if n < 2:
        raise ValueError("need at least two points")
    best = [math.inf] * n
    prev = [-1] * n
    best[0] = 0.0
    for j in range(1, n):
        for i in range(j):
            dev = _max_deviation(pts, i, j)
            if dev > eps_fit:
                continue
            v = best[i] + dev + seg_penalty
            # ties keep the longest last segment (fewest vertices)
            if v < best[j]:
                best[j], prev[j] = v, i
    out = [n - 1]
    while out[-1] != 0:
        out.append(prev[out[-1]])
    return out[::-1]


# ---------------------------------------------------------------------------
# clothoid chain with piecewise-linear curvature


def _chain_angles(theta0: float, knots: np.ndarray, length: float, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Heading and curvature at arc lengths s for curvature linear between equally spaced knots."""
    m = len(knots) - 1
    h = length / m
    seg = np.clip((s / h).astype(int), 0, m - 1)
    u = s - seg * h
    k0 = knots[seg]
    k1 = knots[seg + 1]
    slope = (k1 - k0) / h
    # heading at the start of each piece
    starts = np.concatenate([[0.0], np.cumsum(h * (knots[:-1] + knots[1:]) / 2.0)])
    theta = theta0 + starts[seg] + k0 * u + 0.5 * slope * u * u
    return theta, k0 + slope * u


def clothoid_chain(p0, theta0: float, knots, length: float, n: int = 241) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Integrate the chain; returns (s, points, headings, curvature) at n uniform arc lengths."""
    knots = np.asarray(knots, dtype=float)
    n = max(int(n), 3)
    # fine Simpson integration, then pick every other node
    fine = 2 * (n - 1) + 1
    s = np.linspace(0.0, length, fine)
    theta, kappa = _chain_angles(theta0, knots, length, s)
    c, sn = np.cos(theta), np.sin(theta)
    h = length / (fine - 1)
    # cumulative Simpson on pairs of intervals
    xs = np.zeros(n)
    ys = np.zeros(n)
    xs[1:] = np.cumsum(h / 3.0 * (c[:-2:2] + 4 * c[1:-1:2] + c[2::2]))
    ys[1:] = np.cumsum(h / 3.0 * (sn[:-2:2] + 4 * sn[1:-1:2] + sn[2::2]))
    pts = np.stack([xs + p0[0], ys + p0[1]], axis=1)
    return s[::2], pts, theta[::2], kappa[::2]


def _wrap(a: float) -> float:
    return (a + math.pi) % (2 * math.pi) - math.pi


def solve_clothoid(p0, theta0, p1, theta1, k0, k1, guess=(0.0, 0.0), pieces: int = 3):
    """Find interior curvatures and length so the chain joins (p0, theta0, k0) to (p1, theta1, k1).

    Returns (knots, length) or None when the solve does not close.
    """
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    chord = float(np.hypot(*(p1 - p0)))
    if chord < 1e-9:
        return None
    target = theta0 + _wrap(theta1 - theta0)
    n_inner = pieces - 1

    def knots_of(z):
        return np.concatenate([[k0], z[:n_inner], [k1]])

    def residual(z):
        knots = knots_of(z)
        length = z[-1]
        _, pts, th, _ = clothoid_chain(p0, theta0, knots, length, n=121)
        end = pts[-1] - p1
        return np.array([end[0], end[1], (th[-1] - target) * chord])

    z0 = np.concatenate([np.resize(np.asarray(guess, dtype=float), n_inner), [chord]])
    lower = np.concatenate([np.full(n_inner, -MAX_CURVATURE), [chord * 0.999]])
    upper = np.concatenate([np.full(n_inner, MAX_CURVATURE), [chord * 3.0]])
    z0 = np.clip(z0, lower + 1e-12, upper - 1e-12)
    if np.max(np.abs(residual(z0))) < 1e-10:
        return knots_of(z0), float(z0[-1])
    sol = least_squares(residual, z0, bounds=(lower, upper), xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=200)
    if not np.all(np.abs(sol.fun) < 1e-3):
        return None
    return knots_of(sol.x), float(sol.x[-1])


def _profile_from_trails(pair: EdgePair, chord: float, seg_penalty: float, eps_fit: float):
    """Curvature along both source arcs, fitted by a polyline in (arc length, curvature).

    Returns (profile, k_start, k_end): the fitted profile as a callable and the
    curvature of each source arc near its terminal.
    """
    src = np.asarray(pair.source.trail, dtype=float)[::-1]  # travel order: outward end first
    dst = np.asarray(pair.target.trail, dtype=float)
    sides = []
    for pts, offset, flip in ((src, None, True), (dst, chord, False)):
        s_side, k_side = [], []
        if len(pts) >= 3:
            d = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(pts, axis=0).T))])
            d = d - d[-1] if flip else d + offset  # arc length, 0 at the source hit point
            for i in range(1, len(pts) - 1):
                try:
                    k_side.append(menger_curvature(pts[i - 1], pts[i], pts[i + 1]))
                    s_side.append(d[i])
                except ValueError:
                    pass
        sides.append((s_side, k_side))
    s_arr = np.asarray(sides[0][0] + sides[1][0], dtype=float)
    k_arr = np.asarray(sides[0][1] + sides[1][1], dtype=float)
    if len(s_arr) == 0:
        return (lambda s: np.zeros_like(np.asarray(s, dtype=float))), 0.0, 0.0
    if len(s_arr) == 1:
        profile = lambda s: np.full_like(np.asarray(s, dtype=float), k_arr[0])  # noqa: E731
    else:
        verts = fit_polyline(np.stack([s_arr, k_arr * CURVATURE_SCALE], axis=1), seg_penalty, eps_fit)
        vs, vk = s_arr[verts], k_arr[verts]
        profile = lambda s: np.interp(s, vs, vk)  # noqa: E731
    return profile, _end_curvature(src), _end_curvature(dst)


def _end_curvature(trail: np.ndarray) -> float:
    """Curvature of the circle through the first, middle and last trail samples.

    Pixel quantisation puts 1 px jogs into straight arcs; bends whose sagitta
    stays under SAGITTA_FLOOR are read as straight.
    """
    if len(trail) < 3:
        return 0.0
    a, b, c = trail[0], trail[len(trail) // 2], trail[-1]
    d = c - a
    n = math.hypot(*d)
    if n == 0.0:
        return 0.0
    sag = np.abs((trail[:, 0] - a[0]) * d[1] - (trail[:, 1] - a[1]) * d[0]) / n
    if sag.max() < SAGITTA_FLOOR:
        return 0.0
    try:
        return menger_curvature(a, b, c)
    except ValueError:
        return 0.0


def _resample(points: np.ndarray, tangents: np.ndarray, curvature: np.ndarray):
    seg = np.hypot(*np.diff(points, axis=0).T)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    n = max(2, int(math.ceil(total)) + 1)
    u = np.linspace(0.0, total, n)
    pts = np.stack([np.interp(u, s, points[:, 0]), np.interp(u, s, points[:, 1])], axis=1)
    tan = np.stack([np.interp(u, s, tangents[:, 0]), np.interp(u, s, tangents[:, 1])], axis=1)
    tan /= np.linalg.norm(tan, axis=1, keepdims=True)
    return pts, tan, np.interp(u, s, curvature), u


def hermite_curve(p0, t0, p1, t1, n: int = 400):
    """Cubic Hermite between two points with unit tangents scaled by the chord."""
    p0, t0, p1, t1 = (np.asarray(v, dtype=float) for v in (p0, t0, p1, t1))
    L = float(np.hypot(*(p1 - p0)))
    u = np.linspace(0.0, 1.0, n)[:, None]
    h00 = 2 * u**3 - 3 * u**2 + 1
    h10 = u**3 - 2 * u**2 + u
    h01 = -2 * u**3 + 3 * u**2
    h11 = u**3 - u**2
    pts = h00 * p0 + h10 * L * t0 + h01 * p1 + h11 * L * t1
    d1 = (6 * u**2 - 6 * u) * p0 + (3 * u**2 - 4 * u + 1) * L * t0 + (-6 * u**2 + 6 * u) * p1 + (3 * u**2 - 2 * u) * L * t1
    d2 = (12 * u - 6) * p0 + (6 * u - 4) * L * t0 + (-12 * u + 6) * p1 + (6 * u - 2) * L * t1
    speed = np.linalg.norm(d1, axis=1)
    speed = np.where(speed > 1e-12, speed, 1e-12)
    kappa = (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) / speed**3
    return pts, d1 / speed[:, None], kappa


def escape_distance(samples: np.ndarray, hole: np.ndarray, dist_out: np.ndarray | None = None) -> float:
    """Largest distance from a sample's pixel to the nearest hole pixel."""
    if dist_out is None:
        dist_out = ndimage.distance_transform_edt(~hole)
    h, w = hole.shape
    ij = np.rint(samples).astype(int)
    inside = (ij[:, 0] >= 0) & (ij[:, 0] < w) & (ij[:, 1] >= 0) & (ij[:, 1] < h)
    if not inside.all():
        return math.inf
    return float(dist_out[ij[:, 1], ij[:, 0]].max())


def generate_curve(
    pair: EdgePair,
    mask,
    seg_penalty: float = 2.0,
    eps_fit: float = 1.5,
    escape_tol: float = ESCAPE_TOLERANCE,
    dist_out: np.ndarray | None = None,
) -> StructureCurve | None:
    """G2 clothoid chain between the two terminals of a pair, or a Hermite fallback.

    Returns None (and logs a warning) when neither stays inside the hole.
    """
    if not math.isfinite(pair.cost):
        raise ValueError("cannot bridge a pair with infinite cost")
    hole = np.asarray(mask, dtype=bool)
    if dist_out is None:
        dist_out = ndimage.distance_transform_edt(~hole)
    p0 = np.asarray(pair.source.hit_point, dtype=float)
    p1 = np.asarray(pair.target.hit_point, dtype=float)
    t0 = np.asarray(pair.source.tangent, dtype=float)
    t1 = -np.asarray(pair.target.tangent, dtype=float)
    chord = float(np.hypot(*(p1 - p0)))
    if chord < 1.0:
        log.warning("terminals %s and %s coincide; curve dropped", pair.source.hit_point, pair.target.hit_point)
        return None
    theta0 = math.atan2(t0[1], t0[0])
    theta1 = math.atan2(t1[1], t1[0])

    profile, k0, k1 = _profile_from_trails(pair, chord, seg_penalty, eps_fit)
    k0 = float(np.clip(k0, -MAX_END_CURVATURE, MAX_END_CURVATURE))
    k1 = float(np.clip(k1, -MAX_END_CURVATURE, MAX_END_CURVATURE))
    guess = (float(profile(chord / 3)), float(profile(2 * chord / 3)))

    solved = solve_clothoid(p0, theta0, p1, theta1, k0, k1, guess)
    if solved is None and any(guess):
        solved = solve_clothoid(p0, theta0, p1, theta1, k0, k1, (0.0, 0.0))
    if solved is not None:
        knots, length = solved
        n = max(3, int(math.ceil(length)) * 4 + 1)
        s, pts, th, kappa = clothoid_chain(p0, theta0, knots, length, n=n)
        tan = np.stack([np.cos(th), np.sin(th)], axis=1)
        pts, tan, kappa, u = _resample(pts, tan, kappa)
        pts[0], pts[-1] = p0, p1
        if escape_distance(pts, hole, dist_out) <= escape_tol:
            m = len(knots) - 1
            joins = [int(np.argmin(np.abs(u - length * k / m))) for k in range(1, m)]
            return StructureCurve(pts, tan, kappa, pair, "clothoid", joins)
        log.info("clothoid between %s and %s leaves the hole; trying Hermite", pair.source.hit_point, pair.target.hit_point)

    pts, tan, kappa = hermite_curve(p0, t0, p1, t1)
    pts, tan, kappa, _ = _resample(pts, tan, kappa)
    pts[0], pts[-1] = p0, p1
    if escape_distance(pts, hole, dist_out) <= escape_tol and np.all(np.abs(np.diff(kappa)) <= JOIN_TOLERANCE):
        return StructureCurve(pts, tan, kappa, pair, "hermite", [])
    log.warning("no curve fits inside the hole between %s and %s; dropped", pair.source.hit_point, pair.target.hit_point)
    return None
