"""Pixel-level primitives: color conversion, resampling and binary-mask morphology.

Conventions used throughout the package:

* an RGB image is a ``uint8`` array of shape ``(H, W, 3)``;
* a channel plane is a ``float64`` array of shape ``(H, W)`` with values in [0, 255];
* a binary mask is a ``bool`` array of shape ``(H, W)``;
* point coordinates are ``(x, y)`` = ``(column, row)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from numba import njit
from PIL import Image
from scipy import ndimage

MIN_SIDE = 8

# Moore neighbourhood in clockwise screen order (y grows downwards), starting west.
_MOORE = np.array(
    [(-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1)], dtype=np.int64
)
_MOORE_INDEX = {(int(dx), int(dy)): i for i, (dx, dy) in enumerate(_MOORE)}

FOUR = ndimage.generate_binary_structure(2, 1)
EIGHT = ndimage.generate_binary_structure(2, 2)


def check_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) RGB image, got shape {image.shape}")
    if image.shape[0] < MIN_SIDE or image.shape[1] < MIN_SIDE:
        raise ValueError(f"image must be at least {MIN_SIDE}x{MIN_SIDE}, got {image.shape[1]}x{image.shape[0]}")
    if image.dtype != np.uint8:
        raise ValueError(f"expected uint8 samples, got {image.dtype}")
    return image


def to_gray(image: np.ndarray) -> np.ndarray:
    """Luma plane ``0.299 R + 0.587 G + 0.114 B``."""
    rgb = np.asarray(image, dtype=np.float64)
    return 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]


def to_hsv(image: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Hexcone HSV with every channel scaled to [0, 255].

    Hue is 0 where chroma is 0. Value is ``max(R, G, B)``.
    """
    rgb = np.asarray(image, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    vmax = rgb.max(axis=-1)
    vmin = rgb.min(axis=-1)
    chroma = vmax - vmin
    safe = np.where(chroma > 0, chroma, 1.0)

    hue6 = np.zeros_like(vmax)
    red_max = (vmax == r) & (chroma > 0)
    green_max = (vmax == g) & (chroma > 0) & ~red_max
    blue_max = (chroma > 0) & ~red_max & ~green_max
    hue6[red_max] = np.mod((g - b)[red_max] / safe[red_max], 6.0)
    hue6[green_max] = (b - r)[green_max] / safe[green_max] + 2.0
    hue6[blue_max] = (r - g)[blue_max] / safe[blue_max] + 4.0
    hue = hue6 / 6.0 * 255.0

    sat = np.where(vmax > 0, chroma / np.where(vmax > 0, vmax, 1.0), 0.0) * 255.0
    return hue, sat, vmax


def channel_planes(image: np.ndarray) -> dict[str, np.ndarray]:
    """The six planes used by the color features: red, green, blue, gray, hue, value."""
    hue, _, val = to_hsv(image)
    rgb = np.asarray(image, dtype=np.float64)
    return {
        "red": rgb[..., 0],
        "green": rgb[..., 1],
        "blue": rgb[..., 2],
        "gray": to_gray(image),
        "hue": hue,
        "value": val,
    }


def scaled_size(width: int, height: int, max_dim: int) -> tuple[int, int]:
    longest = max(width, height)
    if longest <= max_dim:
        return width, height
    scale = max_dim / longest
    return max(1, int(round(width * scale))), max(1, int(round(height * scale)))


def downsample(image: np.ndarray, max_dim: int = 256) -> np.ndarray:
    """Bilinear downsampling so that the longest side is at most ``max_dim``."""
    if max_dim < 32:
        raise ValueError("max_dim must be >= 32")
    h, w = image.shape[:2]
    nw, nh = scaled_size(w, h, max_dim)
    if (nw, nh) == (w, h):
        return image
    return np.asarray(Image.fromarray(image).resize((nw, nh), Image.BILINEAR))


def resize_mask(mask: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour resize of a mask to ``shape = (H, W)``."""
    img = Image.fromarray(mask.astype(np.uint8) * 255)
    out = img.resize((shape[1], shape[0]), Image.NEAREST)
    return np.asarray(out) > 127


def fill_holes(mask: np.ndarray) -> np.ndarray:
    """Set every background component not 4-connected to the border to foreground."""
    return ndimage.binary_fill_holes(mask, structure=FOUR)


@njit(cache=True)
def _majority_pass(mask, r):
    h, w = mask.shape
    ii = np.zeros((h + 1, w + 1), dtype=np.int64)
    for y in range(h):
        row = 0
        for x in range(w):
            row += mask[y, x]
            ii[y + 1, x + 1] = ii[y, x + 1] + row
    out = mask.copy()
    changed = False
    for y in range(h):
        y0, y1 = max(0, y - r), min(h, y + r + 1)
        for x in range(w):
            x0, x1 = max(0, x - r), min(w, x + r + 1)
            votes = ii[y1, x1] - ii[y0, x1] - ii[y1, x0] + ii[y0, x0]
            total = (y1 - y0) * (x1 - x0)
            if 2 * votes > total:
                out[y, x] = 1
            elif 2 * votes < total:
                out[y, x] = 0
            if out[y, x] != mask[y, x]:
                changed = True
    return out, changed


def majority_filter(mask: np.ndarray, window: int = 5, max_passes: int = 50) -> np.ndarray:
    """Binary majority (median) filter over a ``window x window`` box.

    Windows are truncated at the image border and an exact tie keeps the pixel's
    current value. The filter is re-applied until the mask stops changing, so the
    result is a root of the filter and applying it again is a no-op.
    """
    if window < 3 or window % 2 == 0:
        raise ValueError("window must be odd and >= 3")
    cur = np.asarray(mask, dtype=bool).astype(np.uint8)
    for _ in range(max_passes):
        cur, changed = _majority_pass(cur, window // 2)
        if not changed:
            break
    return cur.astype(bool)


@dataclass(eq=False)
class Boundary:
    points: np.ndarray  # (N, 2) int array of (x, y), clockwise, closed (last -> first)
    degenerate: bool = False

    def __len__(self) -> int:
        return len(self.points)


@dataclass(eq=False)
class Region:
    """A connected pixel set stored as a bounding-box-local mask.

    ``offset`` is ``(x0, y0)`` of the local mask inside an image of ``shape``.
    """

    local: np.ndarray
    offset: tuple[int, int]
    shape: tuple[int, int]
    label: int = 0
    _boundary: Boundary | None = field(default=None, repr=False)

    @classmethod
    def from_mask(cls, mask: np.ndarray, label: int = 0) -> Region:
        mask = np.asarray(mask, dtype=bool)
        ys, xs = np.nonzero(mask)
        if len(xs) == 0:
            raise ValueError("empty region")
        x0, x1, y0, y1 = xs.min(), xs.max() + 1, ys.min(), ys.max() + 1
        return cls(mask[y0:y1, x0:x1].copy(), (int(x0), int(y0)), mask.shape, label)

    @cached_property
    def area(self) -> int:
        return int(self.local.sum())

    @cached_property
    def centroid(self) -> tuple[float, float]:
        """Mean pixel index ``(cx, cy)``."""
        ys, xs = np.nonzero(self.local)
        return float(xs.mean() + self.offset[0]), float(ys.mean() + self.offset[1])

    @property
    def bbox(self) -> tuple[int, int, int, int]:
        """``(x0, y0, x1, y1)`` with exclusive upper ends."""
        x0, y0 = self.offset
        h, w = self.local.shape
        return x0, y0, x0 + w, y0 + h

    def touches_border(self) -> bool:
        x0, y0, x1, y1 = self.bbox
        return x0 == 0 or y0 == 0 or x1 == self.shape[1] or y1 == self.shape[0]

    @property
    def mask(self) -> np.ndarray:
        full = np.zeros(self.shape, dtype=bool)
        x0, y0, x1, y1 = self.bbox
        full[y0:y1, x0:x1] = self.local
        return full

    @property
    def boundary(self) -> Boundary:
        if self._boundary is None:
            self._boundary = trace_boundary(self)
        return self._boundary


def connected_components(mask: np.ndarray, connectivity: int = 8) -> list[Region]:
    """Label the foreground; regions are returned in label (raster-scan) order."""
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    structure = EIGHT if connectivity == 8 else FOUR
    labels, n = ndimage.label(np.asarray(mask, dtype=bool), structure=structure)
    return regions_from_labels(labels, n)


def regions_from_labels(labels: np.ndarray, n: int | None = None) -> list[Region]:
    """Regions for labels ``1..n`` of a label image (0 = background)."""
    if n is None:
        n = int(labels.max())
    regions = []
    for lab, sl in enumerate(ndimage.find_objects(labels, max_label=n), start=1):
        if sl is None:
            continue
        local = labels[sl] == lab
        regions.append(Region(local, (sl[1].start, sl[0].start), labels.shape, lab))
    return regions


def largest_component(mask: np.ndarray, connectivity: int = 8) -> np.ndarray:
    regions = connected_components(mask, connectivity)
    if not regions:
        return np.zeros_like(mask, dtype=bool)
    best = max(regions, key=lambda r: r.area)  # first of equal areas wins
    return best.mask


def trace_boundary(region: Region) -> Boundary:
    """Moore-neighbour trace, clockwise, from the left-most (then top-most) pixel.

    Uses Jacob's stopping criterion. Regions with fewer than 4 pixels or with
    one-pixel-thin parts (a boundary pixel visited twice) are flagged degenerate.
    """
    local = np.pad(region.local, 1)
    cols = np.nonzero(local.any(axis=0))[0]
    x = int(cols[0])
    y = int(np.nonzero(local[:, x])[0][0])
    start = (x, y)
    start_back = 0  # west neighbour is background by construction

    pts = [start]
    cur, back = start, start_back
    first_move = None
    limit = 4 * region.area + 16
    for _ in range(limit):
        nxt = None
        for i in range(1, 9):
            d = (back + i) % 8
            nx, ny = cur[0] + _MOORE[d, 0], cur[1] + _MOORE[d, 1]
            if local[ny, nx]:
                prev = (back + i - 1) % 8
                bx, by = cur[0] + _MOORE[prev, 0], cur[1] + _MOORE[prev, 1]
                nxt = (int(nx), int(ny))
                back = _MOORE_INDEX[(int(bx - nx), int(by - ny))]
                break
        if nxt is None:  # isolated pixel
            break
        if first_move is None:
            first_move = (nxt, back)
        elif cur == start and (nxt, back) == first_move:
            break
        cur = nxt
        pts.append(cur)
    if len(pts) > 1 and pts[-1] == start:
        pts.pop()

    arr = np.array(pts, dtype=np.int64) - 1
    arr[:, 0] += region.offset[0]
    arr[:, 1] += region.offset[1]
    degenerate = region.area < 4 or len({tuple(p) for p in pts}) != len(pts)
    return Boundary(arr, degenerate)


def read_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return check_image(np.asarray(im.convert("RGB")))


def write_image(path: str | Path, image: np.ndarray) -> None:
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(path, format="PNG")


def read_mask(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 127


def write_mask(path: str | Path, mask: np.ndarray) -> None:
    Image.fromarray(np.asarray(mask, dtype=np.uint8) * 255).save(path, format="PNG")
