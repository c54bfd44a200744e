"""Dataset plumbing: grid tiling, source-level splits, loading, synthesis.

Large source images are cut into an overlap-free grid of square tiles
anchored at multiples of the tile size; remainder pixels beyond the last
full tile are dropped. Splitting happens at source-image granularity so no
source contributes tiles to both sides. The synthetic generator renders
anti-aliased road-like strips over a textured background for desk-scale
training runs where the real datasets are out of reach.
"""

from __future__ import annotations

import dataclasses
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError, DomainError
from .tensor import DEFAULT_DTYPE, Tensor


@dataclass(frozen=True)
class TileIndex:
    """One tile: its source image, origin (row, col) in source pixels, and split."""

    source_id: str
    row: int
    col: int
    tile_size: int
    split_tag: str = ""


@dataclass
class SamplePair:
    """image (1, 3, T, T) in [0, 1]; mask (1, 1, T, T) in {0, 1}."""

    image: Tensor
    mask: Tensor


# -- tiling -------------------------------------------------------------------


def patchify(image_dims: tuple[int, int], tile: int, source_id: str = "") -> list[TileIndex]:
    """Grid of floor(H/tile) x floor(W/tile) tiles; remainder pixels dropped."""
    h, w = image_dims
    if tile < 1:
        raise DomainError(f"tile size must be >= 1, got {tile}")
    rows, cols = h // tile, w // tile
    if rows == 0 or cols == 0:
        warnings.warn(f"{source_id or 'image'}: {h}x{w} yields no {tile}px tiles", stacklevel=2)
        return []
    return [
        TileIndex(source_id=source_id, row=r * tile, col=c * tile, tile_size=tile)
        for r in range(rows)
        for c in range(cols)
    ]


def split_sources(
    tiles: list[TileIndex], ratio: float = 0.8, seed: int = 0
) -> tuple[list[TileIndex], list[TileIndex]]:
    """Deterministic source-level split; all tiles of one source share a side."""
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"split ratio must be in (0, 1), got {ratio}")
    if not tiles:
        raise ConfigError("no tiles to split")
    sources = sorted({t.source_id for t in tiles})
    order = np.random.default_rng(seed).permutation(len(sources))
    n_train = int(round(ratio * len(sources)))
    train_ids = {sources[i] for i in order[:n_train]}

    train, test = [], []
    for t in tiles:
        if t.source_id in train_ids:
            train.append(dataclasses.replace(t, split_tag="train"))
        else:
            test.append(dataclasses.replace(t, split_tag="test"))
    return train, test


# -- manifest -----------------------------------------------------------------


def manifest_text(tiles: list[TileIndex]) -> str:
    """Canonical JSON for a tile list; byte-stable for a given input."""
    records = [
        {
            "source_id": t.source_id,
            "row": t.row,
            "col": t.col,
            "tile_size": t.tile_size,
            "split_tag": t.split_tag,
        }
        for t in sorted(tiles, key=lambda t: (t.source_id, t.row, t.col))
    ]
    return json.dumps({"tiles": records}, indent=2, sort_keys=True) + "\n"


def write_manifest(path, tiles: list[TileIndex]) -> None:
    Path(path).write_text(manifest_text(tiles), encoding="utf-8")


def read_manifest(path) -> list[TileIndex]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return [TileIndex(**rec) for rec in doc["tiles"]]
    except (OSError, KeyError, TypeError, json.JSONDecodeError) as err:
        raise DataError(f"unreadable manifest {path}: {err}") from err


# -- loading ------------------------------------------------------------------


def _open_array(path, mode: str) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert(mode))
    except (OSError, ValueError) as err:
        raise DataError(f"cannot read {path}: {err}") from err


def load_sample(image_path, mask_path, tile: TileIndex) -> SamplePair:
    """Crop one tile from an image/mask pair; scale to [0,1], binarize at 128."""
    img = _open_array(image_path, "RGB")
    mask = _open_array(mask_path, "L")
    if img.shape[:2] != mask.shape[:2]:
        raise DataError(
            f"size mismatch: {image_path} is {img.shape[:2]}, {mask_path} is {mask.shape[:2]}"
        )
    h, w = img.shape[:2]
    t = tile.tile_size
    if tile.row < 0 or tile.col < 0 or tile.row + t > h or tile.col + t > w:
        raise DataError(
            f"tile {tile.row},{tile.col} size {t} falls outside {image_path} ({h}x{w})"
        )
    img_t = img[tile.row : tile.row + t, tile.col : tile.col + t]
    mask_t = mask[tile.row : tile.row + t, tile.col : tile.col + t]

    image = img_t.astype(DEFAULT_DTYPE).transpose(2, 0, 1)[None] / 255.0
    binary = (mask_t >= 128).astype(DEFAULT_DTYPE)[None, None]
    return SamplePair(image=Tensor(image), mask=Tensor(binary))


def save_sample(pair: SamplePair, image_path, mask_path) -> None:
    """Write a pair back as 8-bit PNGs (inverse of load_sample's scaling)."""
    img = np.rint(pair.image.data[0].transpose(1, 2, 0) * 255.0).astype(np.uint8)
    mask = (pair.mask.data[0, 0] >= 0.5).astype(np.uint8) * 255
    Image.fromarray(img, mode="RGB").save(image_path)
    Image.fromarray(mask, mode="L").save(mask_path)


def pair_files(images_dir, masks_dir) -> list[tuple[str, Path, Path]]:
    """Match image and mask files by stem; report every unpaired stem."""
    images_dir, masks_dir = Path(images_dir), Path(masks_dir)
    for d in (images_dir, masks_dir):
        if not d.is_dir():
            raise DataError(f"not a directory: {d}")
    exts = {".png", ".tif", ".tiff", ".jpg", ".jpeg"}
    imgs = {p.stem: p for p in sorted(images_dir.iterdir()) if p.suffix.lower() in exts}
    masks = {p.stem: p for p in sorted(masks_dir.iterdir()) if p.suffix.lower() in exts}
    unpaired = sorted(imgs.keys() ^ masks.keys())
    if unpaired:
        raise DataError(f"unpaired stems (image xor mask missing): {unpaired}")
    if not imgs:
        raise DataError(f"no images found in {images_dir}")
    return [(stem, imgs[stem], masks[stem]) for stem in sorted(imgs)]


def load_pair_dir(root) -> list[SamplePair]:
    """Load every image/mask pair under root/images and root/masks.

    Files are matched by stem and must be square (tiles are square by
    construction); each file is loaded whole.
    """
    root = Path(root)
    samples = []
    for stem, image_path, mask_path in pair_files(root / "images", root / "masks"):
        try:
            with Image.open(image_path) as img:
                w, h = img.size
        except OSError as err:
            raise DataError(f"cannot read {image_path}: {err}") from err
        if h != w:
            raise DataError(f"{image_path}: expected a square tile, got {h}x{w}")
        samples.append(load_sample(image_path, mask_path, TileIndex(stem, 0, 0, h)))
    return samples


# -- synthetic scenes ---------------------------------------------------------


def _polyline_distance(size: int, points: np.ndarray) -> np.ndarray:
    """Per-pixel distance to a polyline given as (k, 2) row/col points."""
    rr, cc = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    pix = np.stack([rr, cc], axis=-1).astype(np.float64)
    best = np.full((size, size), np.inf)
    for a, b in zip(points[:-1], points[1:]):
        ab = b - a
        denom = float(ab @ ab)
        if denom == 0.0:
            d = np.linalg.norm(pix - a, axis=-1)
        else:
            t = np.clip(((pix - a) @ ab) / denom, 0.0, 1.0)
            proj = a + t[..., None] * ab
            d = np.linalg.norm(pix - proj, axis=-1)
        best = np.minimum(best, d)
    return best


def _random_strip(rng: np.random.Generator, size: int) -> tuple[np.ndarray, float]:
    """A gently curved strip crossing the frame: polyline points + width."""
    # endpoints on opposite sides, a few interior points with sideways jitter
    angle = rng.uniform(0, np.pi)
    direction = np.array([np.sin(angle), np.cos(angle)])
    normal = np.array([-direction[1], direction[0]])
    center = rng.uniform(0.2 * size, 0.8 * size, size=2)
    half = 0.75 * size
    k = 4
    ts = np.linspace(-half, half, k)
    jitter = rng.uniform(-0.08 * size, 0.08 * size, size=k)
    jitter[0] = jitter[-1] = 0.0
    points = center + ts[:, None] * direction + jitter[:, None] * normal
    width = 2.0 + 4.0 * np.sqrt(rng.uniform())  # in [2, 6], biased wide
    return points, width


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    """Smooth low-frequency texture per channel, values around [0.15, 0.55]."""
    rr, cc = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    out = np.zeros((3, size, size))
    for ch in range(3):
        tex = np.zeros((size, size))
        for _ in range(4):
            freq = rng.uniform(0.5, 3.0) / size
            theta = rng.uniform(0, 2 * np.pi)
            phase = rng.uniform(0, 2 * np.pi)
            amp = rng.uniform(0.03, 0.08)
            tex += amp * np.cos(2 * np.pi * freq * (rr * np.cos(theta) + cc * np.sin(theta)) + phase)
        out[ch] = 0.35 + tex
    out += rng.normal(scale=0.015, size=out.shape)
    return np.clip(out, 0.0, 1.0)


def synth_roads(n: int, size: int, seed: int) -> list[SamplePair]:
    """Road-like scenes: 1-4 bright strips of width 2-6 px over texture.

    The mask is the exact strip support (distance <= width/2); the image gets
    an anti-aliased rendering of the same geometry. Total road coverage is
    capped by dropping extra strips, keeping the positive fraction moderate.
    """
    if size < 16:
        raise DomainError(f"size must be >= 16, got {size}")
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(n):
        n_strips = rng.choice([1, 2, 3, 4], p=[0.35, 0.3, 0.2, 0.15])
        mask = np.zeros((size, size), dtype=bool)
        coverage_sum = np.zeros((size, size))
        image = _background(rng, size)
        road_tone = rng.uniform(0.75, 0.92, size=3)
        for _ in range(n_strips):
            points, width = _random_strip(rng, size)
            dist = _polyline_distance(size, points)
            strip_mask = dist <= width / 2.0
            if (mask | strip_mask).mean() > 0.38:
                break  # cap total coverage
            mask |= strip_mask
            # anti-aliased alpha: full inside, linear roll-off over one pixel
            coverage_sum = np.maximum(coverage_sum, np.clip(width / 2.0 + 0.5 - dist, 0.0, 1.0))
        for ch in range(3):
            image[ch] = image[ch] * (1.0 - coverage_sum) + road_tone[ch] * coverage_sum
        image += rng.normal(scale=0.01, size=image.shape)
        image = np.clip(image, 0.0, 1.0)
        samples.append(
            SamplePair(
                image=Tensor(image[None].astype(DEFAULT_DTYPE)),
                mask=Tensor(mask[None, None].astype(DEFAULT_DTYPE)),
            )
        )
    return samples
