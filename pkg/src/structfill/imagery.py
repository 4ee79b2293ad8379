"""Image and mask I/O, channel transforms and region geometry."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage
from skimage import color


class ImageError(Exception):
    """Raised when an image or mask cannot be loaded or is invalid."""


@dataclass(frozen=True)
class RasterImage:
    """8-bit image stored row-major as an (height, width, channels) array."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3, 4):
            raise ImageError(f"unsupported pixel array shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ImageError("zero-dimension image")
        data = np.ascontiguousarray(data, dtype=np.uint8)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)


@dataclass(frozen=True)
class MaskRegion:
    """Binary target region. ``bits`` is True inside the hole."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.ascontiguousarray(self.bits, dtype=bool)
        if bits.ndim != 2:
            raise ImageError("mask must be two-dimensional")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def known(self) -> np.ndarray:
        """The source region, i.e. every pixel outside the hole."""
        return ~self.bits

    @property
    def area(self) -> int:
        return int(self.bits.sum())

    def __array__(self, dtype=None, copy=None):
        return self.bits if dtype is None else self.bits.astype(dtype)


@dataclass(frozen=True)
class ChannelStack:
    brightness: np.ndarray
    color_a: np.ndarray
    color_b: np.ndarray
    texture: np.ndarray

    def __iter__(self):
        return iter((self.brightness, self.color_a, self.color_b, self.texture))

    @property
    def shape(self) -> tuple[int, int]:
        return self.brightness.shape


@dataclass(frozen=True)
class PatchWindow:
    """Square window of odd side centred on an integer pixel (x, y)."""

    center: tuple[int, int]
    side: int

    def __post_init__(self):
        if self.side < 3 or self.side % 2 == 0:
            raise ValueError(f"patch side must be odd and >= 3, got {self.side}")

    @property
    def half(self) -> int:
        return (self.side - 1) // 2

    def bounds(self, shape: tuple[int, ...]) -> tuple[slice, slice, slice, slice]:
        """Return (image rows, image cols, patch rows, patch cols), clipped to ``shape``."""
        x, y = self.center
        h = self.half
        y0, y1 = max(y - h, 0), min(y + h + 1, shape[0])
        x0, x1 = max(x - h, 0), min(x + h + 1, shape[1])
        return (
            slice(y0, y1),
            slice(x0, x1),
            slice(y0 - (y - h), y1 - (y - h)),
            slice(x0 - (x - h), x1 - (x - h)),
        )

    def inside(self, shape: tuple[int, ...]) -> bool:
        x, y = self.center
        h = self.half
        return h <= x < shape[1] - h and h <= y < shape[0] - h


def load_image(path) -> RasterImage:
    """Decode a PNG/JPEG file into a 3-channel RasterImage."""
    path = Path(path)
    if not path.is_file():
        raise ImageError(f"cannot read image file {path}")
    try:
        with Image.open(path) as im:
            im.load()
            if im.width == 0 or im.height == 0:
                raise ImageError(f"zero-dimension image {path}")
            if im.mode in ("I;16", "I", "F"):
                raise ImageError(f"unsupported pixel format {im.mode} in {path}")
            if im.mode in ("RGBA", "LA", "PA"):
                im = im.convert("RGBA").convert("RGB")
            else:
                im = im.convert("RGB")
            data = np.asarray(im, dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise ImageError(f"unsupported or corrupt image {path}") from exc
    except OSError as exc:
        raise ImageError(f"failed to decode {path}: {exc}") from exc
    return RasterImage(data)


def save_image(img, path) -> None:
    data = np.asarray(img, dtype=np.uint8)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[:, :, 0]
    try:
        Image.fromarray(data).save(Path(path), format="PNG")
    except OSError as exc:
        raise ImageError(f"cannot write {path}: {exc}") from exc


def mask_from_array(bits, expected: tuple[int, int] | None = None) -> MaskRegion:
    """Validate a boolean grid as a removable target region."""
    bits = np.asarray(bits, dtype=bool)
    if expected is not None and (bits.shape[1], bits.shape[0]) != tuple(expected):
        raise ImageError(
            f"mask is {bits.shape[1]}x{bits.shape[0]}, image is {expected[0]}x{expected[1]}"
        )
    if not bits.any():
        raise ImageError("empty target region")
    if bits.all():
        raise ImageError("mask covers the entire image")
    return MaskRegion(bits)


def load_mask(path, expected: tuple[int, int]) -> MaskRegion:
    """Read an 8-bit grayscale mask; pixels above 127 are removed."""
    path = Path(path)
    if not path.is_file():
        raise ImageError(f"cannot read mask file {path}")
    try:
        with Image.open(path) as im:
            gray = np.asarray(im.convert("L"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageError(f"unsupported or corrupt mask {path}") from exc
    return mask_from_array(gray > 127, expected)


def to_lab(img) -> np.ndarray:
    """CIE-Lab (D65) of an 8-bit RGB image as float64 (L in [0,100])."""
    rgb = np.asarray(img)[:, :, :3].astype(np.float64) / 255.0
    return color.rgb2lab(rgb, illuminant="D65")


def to_channels(img) -> ChannelStack:
    """Brightness, a, b and texture channels, each scaled to roughly [0, 1]."""
    data = np.asarray(img)
    if data.ndim != 3 or data.shape[2] != 3:
        raise ValueError("to_channels expects a 3-channel image")
    lab = to_lab(data)
    brightness = np.clip(lab[:, :, 0] / 100.0, 0.0, 1.0)
    # sRGB white lands a hair under L=100
    brightness[np.isclose(brightness, 1.0, rtol=0, atol=1e-6)] = 1.0
    color_a = np.clip((lab[:, :, 1] + 128.0) / 255.0, 0.0, 1.0)
    color_b = np.clip((lab[:, :, 2] + 128.0) / 255.0, 0.0, 1.0)
    return ChannelStack(brightness, color_a, color_b, local_std(brightness, 5))


def local_std(grid: np.ndarray, size: int = 5) -> np.ndarray:
    """Standard deviation over a size x size window (edge replicated), scaled x2 into [0, 1]."""
    mean = ndimage.uniform_filter(grid, size=size, mode="nearest")
    mean_sq = ndimage.uniform_filter(grid * grid, size=size, mode="nearest")
    var = np.clip(mean_sq - mean * mean, 0.0, None)
    std = np.sqrt(var)
    # cancellation noise on flat areas; values of [0,1] data cannot have std in (0, 1e-7)
    std[var < 1e-14] = 0.0
    return np.clip(2.0 * std, 0.0, 1.0)


def boundary_pixels(bits: np.ndarray) -> np.ndarray:
    """Boolean grid of hole pixels with at least one 4-neighbour in the source region."""
    bits = np.asarray(bits, dtype=bool)
    known = ~bits
    touch = np.zeros_like(bits)
    touch[1:, :] |= known[:-1, :]
    touch[:-1, :] |= known[1:, :]
    touch[:, 1:] |= known[:, :-1]
    touch[:, :-1] |= known[:, 1:]
    return bits & touch


# Moore neighbourhood in clockwise screen order starting west (y grows downward).
_MOORE = [(-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1)]


def _trace(component: np.ndarray, start: tuple[int, int]) -> list[tuple[int, int]]:
    """Moore-neighbour trace of a pixel set, returning visited pixels in order."""
    h, w = component.shape

    def on(x, y):
        return 0 <= x < w and 0 <= y < h and component[y, x]

    path = [start]
    x, y = start
    back = 0  # we entered the top-left pixel from the west
    first_move = None
    for _ in range(8 * component.size + 8):
        for k in range(1, 9):
            d = (back + k) % 8
            nx, ny = x + _MOORE[d][0], y + _MOORE[d][1]
            if on(nx, ny):
                break
        else:
            return path  # isolated pixel
        if (x, y) == start and first_move == d and len(path) > 1:
            break
        if first_move is None:
            first_move = d
        x, y = nx, ny
        back = (d + 4) % 8  # direction pointing back to the previous pixel
        path.append((x, y))
    if path[-1] == start:
        path.pop()
    return path


def boundary(mask) -> list[list[tuple[int, int]]]:
    """Boundary pixels of the hole, one counter-clockwise list per connected component.

    Each list starts at the topmost-leftmost pixel of its component.
    """
    bits = np.asarray(mask, dtype=bool)
    edge = boundary_pixels(bits)
    labels, n = ndimage.label(edge, structure=np.ones((3, 3), dtype=int))
    result = []
    for lab in range(1, n + 1):
        comp = labels == lab
        ys, xs = np.nonzero(comp)
        order = np.lexsort((xs, ys))
        start = (int(xs[order[0]]), int(ys[order[0]]))
        traced = _trace(comp, start)
        seen = set()
        ordered = []
        for p in traced:
            if p not in seen:
                seen.add(p)
                ordered.append(p)
        if len(ordered) < len(xs):
            # thick or branching fronts: append what the outer trace missed, nearest first
            rest = [(int(x), int(y)) for y, x in zip(ys, xs) if (int(x), int(y)) not in seen]
            while rest:
                lx, ly = ordered[-1]
                j = min(range(len(rest)), key=lambda i: (rest[i][0] - lx) ** 2 + (rest[i][1] - ly) ** 2)
                ordered.append(rest.pop(j))
        if len(ordered) > 2 and _signed_area(ordered) < 0:
            ordered = [ordered[0]] + ordered[:0:-1]
        result.append(ordered)
    return result


def _signed_area(points) -> float:
    """Shoelace area with y flipped so that screen counter-clockwise is positive."""
    pts = np.asarray(points, dtype=float)
    x, y = pts[:, 0], -pts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def arc_positions(contour: list[tuple[int, int]]) -> np.ndarray:
    """Cumulative arc length along an ordered contour, starting at 0."""
    pts = np.asarray(contour, dtype=float)
    if len(pts) < 2:
        return np.zeros(len(pts))
    steps = np.hypot(*np.diff(pts, axis=0).T)
    return np.concatenate([[0.0], np.cumsum(steps)])
