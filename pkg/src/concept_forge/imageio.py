"""PNG export for rendered and inverted images."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image


def to_uint8(image: np.ndarray) -> np.ndarray:
    """(3, H, W) floats in [0, 1] -> (H, W, 3) uint8."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"expected a (3, H, W) image, got {image.shape}")
    return np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)


def save_png(image: np.ndarray, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(image), mode="RGB").save(path)
    return path


def load_png(path: str | Path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1)


def contact_sheet(images: Sequence[np.ndarray], path: str | Path, columns: int = 5, upscale: int = 4) -> Path:
    """Tile images into one PNG, each enlarged by nearest-neighbour ``upscale``."""
    tiles = [to_uint8(im).repeat(upscale, 0).repeat(upscale, 1) for im in images]
    if not tiles:
        raise ValueError("no images to tile")
    h, w, _ = tiles[0].shape
    rows = -(-len(tiles) // columns)
    sheet = np.zeros((rows * (h + 2), columns * (w + 2), 3), dtype=np.uint8)
    for i, t in enumerate(tiles):
        r, c = divmod(i, columns)
        sheet[r * (h + 2) + 1: r * (h + 2) + 1 + h, c * (w + 2) + 1: c * (w + 2) + 1 + w] = t
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(sheet, mode="RGB").save(path)
    return path
