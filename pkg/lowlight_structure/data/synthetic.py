import pathlib
import typing
import structlog

import numpy as np
import torch

from lowlight_structure.imaging.io import write_image

logger = structlog.get_logger(__name__)

__all__ = ('render_scene', 'synthesize_scenes')


def render_scene(rng: np.random.Generator, size: int, channels: int = 3) -> np.ndarray:
    """Well-exposed procedural scene (C, H, W): a linear gradient background with
    flat-colored rectangles, discs and stripes on top."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / max(size - 1, 1)
    angle = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(angle) * xx + np.sin(angle) * yy + 1.0) / 2.0
    start, stop = rng.uniform(0.3, 0.9, size=(2, channels))
    canvas = start[:, None, None] + (stop - start)[:, None, None] * ramp[None]
    for _ in range(int(rng.integers(3, 7))):
        color = rng.uniform(0.05, 1.0, size=channels)[:, None, None]
        kind = rng.integers(0, 3)
        if kind == 0:
            top, left = rng.integers(0, size - 4, size=2)
            height, width = rng.integers(4, max(5, size // 2), size=2)
            mask = (yy * (size - 1) >= top) & (yy * (size - 1) < top + height)
            mask &= (xx * (size - 1) >= left) & (xx * (size - 1) < left + width)
        elif kind == 1:
            cy, cx = rng.uniform(0.1, 0.9, size=2)
            radius = rng.uniform(0.08, 0.3)
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2
        else:
            period = rng.uniform(0.1, 0.3)
            phase = rng.uniform(0, period)
            mask = ((xx + phase) % period) < period / 2
            mask &= yy > rng.uniform(0.3, 0.7)
        canvas = np.where(mask[None], color, canvas)
    return np.clip(canvas, 0.0, 1.0)


def synthesize_scenes(
    out_dir: typing.Union[str, pathlib.Path], count: int, size: int = 64, seed: int = 0, channels: int = 3
) -> typing.List[pathlib.Path]:
    out_dir = pathlib.Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for index in range(count):
        path = out_dir / f"scene_{index:04d}.png"
        write_image(path, torch.from_numpy(render_scene(rng, size, channels)))
        paths.append(path)
    logger.info("data.synthesized", count=count, size=size, directory=str(out_dir))
    return paths
