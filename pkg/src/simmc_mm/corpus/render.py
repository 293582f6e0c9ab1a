"""Procedural rasters whose pixels encode visual metadata.

An object is drawn on a 4x4 grid of equal cells. Row 0 is a solid block
of the object's color (the hue block). Row 1 repeats the ``type`` glyph,
row 2 holds the ``assetType`` glyph twice then the ``sleeveLength`` glyph
twice, all black on white. Row 3 is the pattern texture, gray on white.
Color appears only in the hue block so it does not outweigh the other cues. Drawn at 16 px and upsampled 2x, each cell becomes exactly
one 8x8 encoder patch; repeating a glyph over several patches keeps it
salient next to the color.
"""

from __future__ import annotations

import numpy as np

from simmc_mm.encoders.transformer import RasterImage
from simmc_mm.errors import ObjectLookupError, ShapeError

PALETTE = {
    "red": (0.90, 0.10, 0.10),
    "blue": (0.10, 0.20, 0.90),
    "green": (0.10, 0.75, 0.20),
    "yellow": (0.95, 0.90, 0.10),
    "black": (0.05, 0.05, 0.05),
    "white": (0.97, 0.97, 0.97),
    "purple": (0.55, 0.10, 0.70),
    "orange": (1.00, 0.55, 0.00),
    "pink": (1.00, 0.60, 0.75),
    "brown": (0.45, 0.25, 0.10),
}
TEXTURE = np.array([0.5, 0.5, 0.5])
GRID = 4

# (row, col) cells carrying each glyph in the 4x4 grid
GLYPH_CELLS = {
    "type": ((1, 0), (1, 1), (1, 2), (1, 3)),
    "assetType": ((2, 0), (2, 1)),
    "sleeveLength": ((2, 2), (2, 3)),
}


def _glyph_bank(n: int = 4) -> list[np.ndarray]:
    i, j = np.indices((n, n))
    return [
        (j == 1) | (j == 2),                       # vertical bar
        (i == 1) | (i == 2),                       # horizontal bar
        (i == j) | (i == j + 1),                   # diagonal
        (i + j == n - 1) | (i + j == n),           # anti-diagonal
        (i == 0) | (i == n - 1) | (j == 0) | (j == n - 1),  # box outline
        ((i == 1) | (i == 2)) & ((j == 1) | (j == 2)),      # centre block
        (i < 2) & (j < 2) | (i >= 2) & (j >= 2),   # two-square check
        (j == 0) | (i == n - 1),                   # corner
    ]


GLYPHS = _glyph_bank()


def color_rgb(name: str) -> np.ndarray:
    try:
        return np.array(PALETTE[name])
    except KeyError:
        raise ObjectLookupError(f"color {name!r} has no palette entry") from None


def _texture_mask(pattern: str, size: int) -> np.ndarray:
    y, x = np.indices((size, size))
    if pattern == "striped":
        return y % 2 == 1
    if pattern == "checkered":
        return (y // 2 + x // 2) % 2 == 1
    if pattern == "dotted":
        return (y % 4 >= 1) & (y % 4 <= 2) & (x % 4 >= 1) & (x % 4 <= 2)
    return np.zeros((size, size), dtype=bool)


def render_object(visual_meta: dict[str, str], pools: dict[str, tuple[str, ...]],
                  size: int = 16) -> np.ndarray:
    """``(size, size, 3)`` raster for one object; ``size`` must be 4 * k."""
    if size % GRID:
        raise ShapeError(f"object size {size} not a multiple of {GRID}")
    cell = size // GRID
    rgb = color_rgb(visual_meta["color"])
    img = np.ones((size, size, 3))
    img[_texture_mask(visual_meta["pattern"], size)] = TEXTURE
    img[:cell] = rgb  # hue block
    for key, cells in GLYPH_CELLS.items():
        idx = pools[key].index(visual_meta[key]) % len(GLYPHS)
        glyph = np.kron(GLYPHS[idx], np.ones((cell // 4, cell // 4))) if cell > 4 else GLYPHS[idx]
        patch = np.ones((cell, cell, 3))
        patch[glyph.astype(bool)] = 0.0
        for r, c in cells:
            img[r * cell:(r + 1) * cell, c * cell:(c + 1) * cell] = patch
    return img


def quantize(pixels: np.ndarray) -> np.ndarray:
    """Round to the 8-bit grid used by the corpus file format."""
    return np.round(np.clip(pixels, 0.0, 1.0) * 255.0) / 255.0


def to_bytes(pixels: np.ndarray) -> np.ndarray:
    return np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)


def resize_nearest(pixels: np.ndarray, height: int, width: int) -> np.ndarray:
    h, w = pixels.shape[:2]
    rows = (np.arange(height) * h) // height
    cols = (np.arange(width) * w) // width
    return pixels[rows][:, cols]


def render_background(objects, pools, size: int, wall: np.ndarray, floor: np.ndarray) -> np.ndarray:
    img = np.empty((size, size, 3))
    img[: size // 2] = wall
    img[size // 2:] = floor
    for obj in objects:
        x, y, w, h = obj.bbox
        drawn = render_object(obj.visual_meta, pools, size=max(w, h))
        img[y:y + h, x:x + w] = resize_nearest(drawn, h, w)
    return quantize(img)


def crop_object(scene, object_id: int, size: int = 32) -> RasterImage:
    """Bounding-box sub-raster of the background, resized (nearest) to ``size``."""
    obj = scene.object(object_id)
    x, y, w, h = obj.bbox
    sub = scene.background.pixels[y:y + h, x:x + w]
    return RasterImage(resize_nearest(sub, size, size))


def hue_block_color(crop: RasterImage) -> str:
    """Pixel-statistics color classifier: nearest palette entry to the mean
    RGB of the crop's top cell row."""
    block = crop.pixels[: crop.height // GRID]
    mean = block.reshape(-1, 3).mean(axis=0)
    names = list(PALETTE)
    dists = [np.sum((mean - np.array(PALETTE[n])) ** 2) for n in names]
    return names[int(np.argmin(dists))]
