import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from structfill.contours import (
    GpbParams,
    build_hierarchy,
    contours_at,
    gaussian_derivative_edges,
    gaussian_derivative_kernels,
    gpb,
    oriented_gradient,
)
from structfill.imagery import ChannelStack, boundary_pixels, to_channels

from . import oracles


def _stack(grid):
    return ChannelStack(grid, np.full_like(grid, 0.5), np.full_like(grid, 0.5), np.zeros_like(grid))


def _step(h=24, w=24, col=12):
    g = np.zeros((h, w))
    g[:, col:] = 1.0
    return g


# -- Gaussian-derivative edges -----------------------------------------------------


def test_edges_of_constant_are_zero():
    assert np.all(gaussian_derivative_edges(np.full((15, 17), 0.3), 2.0) == 0.0)


def test_edges_match_direct_convolution():
    g = np.random.default_rng(1).random((14, 16))
    assert np.allclose(gaussian_derivative_edges(g, 2.0), oracles.gaussian_derivative_edges(g, 2.0), atol=1e-12)


def test_step_edge_peaks_symmetrically_at_the_step():
    c = 12
    g = _step(col=c)
    got = gaussian_derivative_edges(g, 2.0)
    ref = oracles.gaussian_derivative_edges(g, 2.0)
    assert np.allclose(got, ref, atol=1e-12)
    row = got[12]
    peaks = set(np.flatnonzero(np.isclose(row, row.max(), rtol=0, atol=1e-12)))
    assert peaks == {c - 1, c}
    for k in range(1, 4):
        assert row[c - 1 - k] == pytest.approx(row[c + k], abs=1e-12)


def test_impulse_reproduces_kernel_magnitude():
    sigma = 1.5
    gx, gy = gaussian_derivative_kernels(sigma)
    r = gx.shape[0] // 2
    g = np.zeros((2 * r + 7, 2 * r + 7))
    c = g.shape[0] // 2
    g[c, c] = 1.0
    out = gaussian_derivative_edges(g, sigma)
    assert np.allclose(out[c - r : c + r + 1, c - r : c + r + 1], np.hypot(gx, gy)[::-1, ::-1], atol=1e-15)


def test_kernel_truncation_and_form():
    gx, gy = gaussian_derivative_kernels(2.0)
    assert gx.shape == (13, 13)
    assert np.allclose(gy, gx.T)
    assert gx[6, 7] < 0 < gx[6, 5]


def test_edges_rotate_with_input():
    g = np.random.default_rng(4).random((21, 21))
    a = gaussian_derivative_edges(np.rot90(g), 2.0)
    b = np.rot90(gaussian_derivative_edges(g, 2.0))
    assert np.allclose(a[7:-7, 7:-7], b[7:-7, 7:-7], atol=1e-12)


# -- half-disc oriented gradient ---------------------------------------------------


def test_oriented_gradient_constant_is_zero():
    s = _stack(np.full((20, 20), 0.4))
    for theta in np.linspace(0, np.pi, 5):
        assert np.all(oriented_gradient(s, theta, 5) == 0.0)


def test_oriented_gradient_matches_half_disc_oracle():
    rng = np.random.default_rng(7)
    grid = rng.random((18, 18))
    s = _stack(grid)
    known = rng.random((18, 18)) > 0.2
    for theta in (0.0, math.pi / 8, math.pi / 2, 3 * math.pi / 4):
        got = oriented_gradient(s, theta, radius=4, bins=8, known=known)
        for y, x in ((0, 0), (5, 9), (9, 4), (17, 12), (8, 8)):
            ref = oracles.half_disc_chi2(list(s), x, y, theta, 4, 8, known)
            assert got[y, x] == pytest.approx(ref, abs=1e-9)


def test_oriented_gradient_step_alignment():
    s = _stack(_step(32, 32, 16))
    along = oriented_gradient(s, math.pi / 2, 5)  # vertical diameter, same direction as the step
    across = oriented_gradient(s, 0.0, 5)
    on_step = along[16, 14:18]
    assert along.max() == pytest.approx(on_step.max())
    assert on_step.max() == pytest.approx(oracles.half_disc_chi2(list(s), 16, 16, math.pi / 2, 5, 16))
    assert np.all(across[16, 15:17] < 1e-9)


def test_oriented_gradient_half_turn_symmetric():
    s = to_channels(np.random.default_rng(2).integers(0, 256, (20, 20, 3), dtype=np.uint8))
    for theta in (0.0, 0.7, 1.9):
        assert np.allclose(oriented_gradient(s, theta), oriented_gradient(s, theta + math.pi), atol=1e-9)


# -- gPb ---------------------------------------------------------------------------


def _photo_stack():
    return to_channels(np.random.default_rng(11).integers(0, 256, (24, 24, 3), dtype=np.uint8))


def test_gpb_gamma_zero_is_beta_mpb():
    s = _photo_stack()
    base = gpb(s, GpbParams(beta=1.0))
    scaled = gpb(s, GpbParams(beta=2.5))
    assert np.array_equal(scaled.responses, 2.5 * base.responses)
    assert np.array_equal(base.magnitude, base.responses.max(axis=0))


def test_gpb_doubling_beta_doubles_magnitude():
    s = _photo_stack()
    a = gpb(s, GpbParams(beta=1.0)).magnitude
    b = gpb(s, GpbParams(beta=2.0)).magnitude
    assert np.array_equal(b, 2 * a)
    assert np.array_equal(np.argmax(a), np.argmax(b))


def test_gpb_params_reject_zero_weights():
    with pytest.raises(ValueError):
        GpbParams(beta=0.0, gamma=0.0)
    with pytest.raises(ValueError):
        GpbParams(orientations=3)
    with pytest.raises(ValueError):
        GpbParams(sigma=0.0)


def test_gpb_needs_hook_when_gamma_positive():
    with pytest.raises(ValueError, match="spectral"):
        gpb(_photo_stack(), GpbParams(gamma=0.5))


def test_gpb_uses_spectral_hook():
    s = _photo_stack()
    hook = lambda stack, thetas: np.ones((len(thetas),) + stack.shape)  # noqa: E731
    out = gpb(s, GpbParams(beta=1.0, gamma=0.5), spectral=hook)
    assert np.allclose(out.responses, gpb(s).responses + 0.5)


def test_gpb_deterministic():
    s = _photo_stack()
    assert np.array_equal(gpb(s).magnitude, gpb(s).magnitude)


# -- hierarchy -----------------------------------------------------------------------


def _two_region():
    img = np.zeros((64, 64, 3), np.uint8)
    img[:, 32:] = 255
    hole = np.zeros((64, 64), bool)
    hole[24:40, 24:40] = True
    return img, hole


def _hier(img, hole):
    return build_hierarchy(gpb(to_channels(img), known=~hole), hole)


def test_two_region_divide_gives_two_full_strength_arcs():
    img, hole = _two_region()
    h = _hier(img, hole)
    strong = contours_at(h, 0.5)
    assert len(strong) == 2
    front = boundary_pixels(hole)
    near = np.zeros_like(hole)
    near[23:41, 23:41] = True
    for arc in strong:
        assert arc.strength == 1.0
        xs = arc.pixels[:, 0]
        assert set(np.unique(xs)) <= {31, 32}
        # each arc reaches the hole boundary
        assert near[arc.pixels[:, 1], arc.pixels[:, 0]].any()
    tops = sorted(int(a.pixels[:, 1].min()) for a in strong)
    assert tops[0] == 0 and tops[1] >= 40
    assert not front[strong[0].pixels[:, 1], strong[0].pixels[:, 0]].any()


def test_uniform_image_has_no_arcs():
    img = np.full((32, 32, 3), 90, np.uint8)
    hole = np.zeros((32, 32), bool)
    hole[10:20, 10:20] = True
    h = _hier(img, hole)
    assert contours_at(h, 0.0) == [] or all(a.strength <= 0 for a in h.arcs)
    assert len(np.unique(h.regions_at(0.0)[~hole])) == 1


def _blobs(seed=0, n=64):
    rng = np.random.default_rng(seed)
    img = np.zeros((n, n, 3), np.uint8)
    for _ in range(6):
        x0, y0 = rng.integers(0, n - 16, 2)
        img[y0 : y0 + rng.integers(8, 24), x0 : x0 + rng.integers(8, 24)] = rng.integers(0, 256, 3)
    hole = np.zeros((n, n), bool)
    hole[n // 2 - 6 : n // 2 + 6, n // 2 - 6 : n // 2 + 6] = True
    return img, hole


def test_hierarchy_endpoints():
    img, hole = _blobs(3)
    h = _hier(img, hole)
    assert h.n_basins > 1
    fine = h.regions_at(0.0)
    assert np.array_equal(fine > 0, h.basins > 0)
    assert len(np.unique(fine[fine > 0])) == h.n_basins - sum(1 for m in h.merges if m[0] <= 0.0)
    coarse = h.regions_at(1.0)
    assert len(np.unique(coarse[coarse > 0])) == 1


def test_contours_at_threshold_rules():
    img, hole = _blobs(5)
    h = _hier(img, hole)
    assert contours_at(h, 1.0) == []
    assert len(contours_at(h, 0.0)) == sum(1 for a in h.arcs if a.strength > 0)
    with pytest.raises(ValueError):
        contours_at(h, 1.5)
    strengths = [a.strength for a in h.arcs]
    assert min(strengths) >= 0 and max(strengths) == 1.0


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000), st.floats(0, 1), st.floats(0, 1))
def test_hierarchy_is_nested(seed, t1, t2):
    t1, t2 = sorted((t1, t2))
    h = _hier(*_blobs(seed))
    fine, coarse = h.regions_at(t1), h.regions_at(t2)
    sel = fine > 0
    # each fine region maps into exactly one coarse region
    pairs = np.unique(np.stack([fine[sel], coarse[sel]], axis=1), axis=0)
    assert len(np.unique(pairs[:, 0])) == len(pairs)
    a1 = {a.id for a in contours_at(h, t1)}
    a2 = {a.id for a in contours_at(h, t2)}
    assert a2 <= a1


def test_surviving_arcs_separate_two_regions():
    img, hole = _blobs(8)
    h = _hier(img, hole)
    t = 0.3
    labels = h.regions_at(t)
    for arc in contours_at(h, t):
        around = set()
        for x, y in arc.pixels:
            around |= set(labels[max(y - 1, 0) : y + 2, max(x - 1, 0) : x + 2].ravel().tolist())
        around.discard(0)
        assert len(around) >= 2
