"""Deterministic tile renderer, image resizing, perceptual metrics and PGM I/O.

Images are plain ``numpy`` arrays of shape ``(height, width)``; rendered images
and anything read from disk are ``uint8``.
"""
from __future__ import annotations

import functools
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .instructions import NUM_INSTRUCTIONS, DimensionMismatch, InstructionMap

TILE_SIZE = 8
ATLAS_VERSION = "v1"
MIN_TILE_MAD = 16.0
_GEN_TILE_MAD = 32.0  # generation margin above the guaranteed minimum
PSNR_CAP = 99.0
SSIM_WINDOW = 8
SSIM_C1 = (0.01 * 255) ** 2
SSIM_C2 = (0.03 * 255) ** 2


class PgmFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TileAtlas:
    tiles: np.ndarray  # (17, tile, tile) uint8
    version: str

    @property
    def tile_size(self) -> int:
        return self.tiles.shape[1]

    def min_pairwise_mad(self) -> float:
        t = self.tiles.reshape(len(self.tiles), -1).astype(np.float64)
        d = np.abs(t[:, None, :] - t[None, :, :]).mean(axis=2)
        return float(d[~np.eye(len(t), dtype=bool)].min())


def _stroke_tile(rng: np.random.Generator, size: int) -> np.ndarray:
    base = rng.uniform(30, 225)
    ink = base + rng.choice([-1.0, 1.0]) * rng.uniform(70, 140)
    ink = float(np.clip(ink, 0, 255))
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    cover = np.zeros((size, size))
    for _ in range(int(rng.integers(2, 4))):
        (y0, x0), (y1, x1) = rng.uniform(0, size, size=(2, 2))
        dy, dx = y1 - y0, x1 - x0
        t = ((yy - y0) * dy + (xx - x0) * dx) / max(dy * dy + dx * dx, 1e-9)
        t = np.clip(t, 0.0, 1.0)
        dist = np.hypot(yy - (y0 + t * dy), xx - (x0 + t * dx))
        width = size / 8.0
        cover = np.maximum(cover, np.clip(width + 0.5 - dist, 0.0, 1.0))
    return np.rint(base + (ink - base) * cover).astype(np.uint8)


def make_atlas(version: str = ATLAS_VERSION, tile_size: int = TILE_SIZE) -> TileAtlas:
    """Build the 17-glyph atlas; the same version tag always gives the same bytes."""
    rng = np.random.default_rng(zlib.crc32(f"{version}/{tile_size}".encode()))
    tiles: list[np.ndarray] = []
    while len(tiles) < NUM_INSTRUCTIONS:
        tile = _stroke_tile(rng, tile_size)
        if all(np.abs(tile.astype(float) - t).mean() >= _GEN_TILE_MAD for t in tiles):
            tiles.append(tile)
    return TileAtlas(np.stack(tiles), version)


@functools.lru_cache(maxsize=8)
def default_atlas(tile_size: int = TILE_SIZE) -> TileAtlas:
    return make_atlas(ATLAS_VERSION, tile_size)


def render(m: InstructionMap, atlas: TileAtlas | None = None) -> np.ndarray:
    atlas = atlas or default_atlas()
    t = atlas.tile_size
    h, w = m.shape
    blocks = atlas.tiles[m.codes]  # (h, w, t, t)
    return np.ascontiguousarray(blocks.transpose(0, 2, 1, 3).reshape(h * t, w * t))


def contact_sheet(atlas: TileAtlas, gap: int = 2, fill: int = 128) -> np.ndarray:
    t = atlas.tile_size
    n = len(atlas.tiles)
    sheet = np.full((t + 2 * gap, n * (t + gap) + gap), fill, dtype=np.uint8)
    for i, tile in enumerate(atlas.tiles):
        x = gap + i * (t + gap)
        sheet[gap:gap + t, x:x + t] = tile
    return sheet


# ---------------------------------------------------------------------------
# resizing

def _axis_weights(n_in: int, n_out: int):
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize(image: np.ndarray, new_w: int, new_h: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers and clamped edges.

    ``uint8`` input is rounded back to ``uint8``; float input stays float.
    """
    if new_w < 1 or new_h < 1:
        raise ValueError("target dimensions must be positive")
    h, w = image.shape
    if (h, w) == (new_h, new_w):
        return image.copy()
    img = image.astype(np.float64)
    y0, y1, fy = _axis_weights(h, new_h)
    x0, x1, fx = _axis_weights(w, new_w)
    rows = img[y0] * (1 - fy)[:, None] + img[y1] * fy[:, None]
    out = rows[:, x0] * (1 - fx) + rows[:, x1] * fx
    if image.dtype == np.uint8:
        return np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return out


def center_crop(image: np.ndarray, size: int) -> np.ndarray:
    h, w = image.shape
    if size > h or size > w:
        raise ValueError(f"crop {size} exceeds image {w}x{h}")
    y, x = (h - size) // 2, (w - size) // 2
    return image[y:y + size, x:x + size]


# ---------------------------------------------------------------------------
# perceptual metrics

def _check_same(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionMismatch(f"image shapes differ: {a.shape} vs {b.shape}")


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    _check_same(a, b)
    mse = np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10 * np.log10(255.0 ** 2 / mse)))


def _window_sums(x: np.ndarray, k: int) -> np.ndarray:
    c = np.pad(x, ((1, 0), (1, 0))).cumsum(0).cumsum(1)
    return c[k:, k:] - c[:-k, k:] - c[k:, :-k] + c[:-k, :-k]


def ssim(a: np.ndarray, b: np.ndarray, window: int = SSIM_WINDOW) -> float:
    """Mean SSIM over all valid ``window``×``window`` uniform windows, clipped to [0, 1]."""
    _check_same(a, b)
    x, y = a.astype(np.float64), b.astype(np.float64)
    k = min(window, *x.shape)
    n = k * k
    mx, my = _window_sums(x, k) / n, _window_sums(y, k) / n
    vx = np.maximum(_window_sums(x * x, k) / n - mx * mx, 0.0)
    vy = np.maximum(_window_sums(y * y, k) / n - my * my, 0.0)
    cxy = _window_sums(x * y, k) / n - mx * my
    s = ((2 * mx * my + SSIM_C1) * (2 * cxy + SSIM_C2)) / (
        (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
    return float(np.clip(s.mean(), 0.0, 1.0))


def _overlap(a: np.ndarray, b: np.ndarray, dy: int, dx: int):
    h, w = a.shape
    ya, yb = max(0, -dy), max(0, dy)
    xa, xb = max(0, -dx), max(0, dx)
    hh, ww = h - abs(dy), w - abs(dx)
    return a[ya:ya + hh, xa:xa + ww], b[yb:yb + hh, xb:xb + ww]


def shifted_perceptual(a: InstructionMap, b: InstructionMap,
                       atlas: TileAtlas | None = None) -> tuple[float, float]:
    """Best PSNR and best SSIM over whole-instruction shifts of the rendered images."""
    if a.shape != b.shape:
        raise DimensionMismatch(f"map shapes differ: {a.shape} vs {b.shape}")
    atlas = atlas or default_atlas()
    ra, rb = render(a, atlas), render(b, atlas)
    t = atlas.tile_size
    best_p, best_s = -np.inf, -np.inf
    for dy in (-t, 0, t):
        for dx in (-t, 0, t):
            oa, ob = _overlap(ra, rb, dy, dx)
            if oa.size == 0:
                continue
            best_p = max(best_p, psnr(oa, ob))
            best_s = max(best_s, ssim(oa, ob))
    return float(best_p), float(best_s)


# ---------------------------------------------------------------------------
# PGM (binary P5)

def write_pgm(path: str | Path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.dtype != np.uint8 or img.ndim != 2:
        raise ValueError("PGM output expects a 2-D uint8 image")
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def decode_pgm(data: bytes) -> np.ndarray:
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise PgmFormatError("truncated PGM header")
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    if fields[0] != b"P5":
        raise PgmFormatError(f"unsupported magic {fields[0]!r}")
    try:
        w, h, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise PgmFormatError("non-numeric PGM header") from None
    if not 0 < maxval < 256:
        raise PgmFormatError(f"unsupported maxval {maxval}")
    payload = data[pos:pos + w * h]
    if len(payload) != w * h:
        raise PgmFormatError("truncated PGM payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w).copy()


def read_pgm(path: str | Path) -> np.ndarray:
    return decode_pgm(Path(path).read_bytes())
