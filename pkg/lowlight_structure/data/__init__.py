"""Paired low-light data: synthetic degradation, dataset packaging and batch loading.

On disk a dataset is a directory holding ``low/``, ``high/`` and ``edge/`` PNGs that
share ids, plus ``manifest.json``; every path is relative to the manifest.
"""
import json
import typing
import hashlib
import pathlib
import structlog
from concurrent.futures import ThreadPoolExecutor

import torch

import lowlight_structure.errors as errors
from lowlight_structure.config import CannyConfig, DegradeConfig, check_canny, config_hash
from lowlight_structure.data.synthetic import synthesize_scenes
from lowlight_structure.imaging import canny_edges
from lowlight_structure.imaging.io import PadRecord, pad_to_multiple, quantize_8bit, read_image, write_image

logger = structlog.get_logger(__name__)

__all__ = (
    'MANIFEST_VERSION', 'PairedSample', 'PairedBatch', 'PairedDataset', 'degrade', 'add_gaussian_noise',
    'build_dataset', 'load_batch', 'sample_seed', 'synthesize_scenes',
)

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"
SOURCE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")
SPLITS = ("low", "high", "edge")


class PairedSample(typing.NamedTuple):
    low: torch.Tensor
    high: torch.Tensor
    edges: torch.Tensor
    id: str


class PairedBatch(typing.NamedTuple):
    low: torch.Tensor
    high: torch.Tensor
    edges: torch.Tensor
    ids: typing.List[str]
    pads: typing.List[PadRecord]


def _generator(seed: int) -> torch.Generator:
    generator = torch.Generator()
    generator.manual_seed(seed)
    return generator


def degrade(
    clean: torch.Tensor,
    config: DegradeConfig,
    generator: typing.Optional[torch.Generator] = None,
    clip: bool = True,
) -> torch.Tensor:
    """clamp((gain * x) ** gamma + shot + read, 0, 1).

    Shot noise has per-pixel std ``shot_noise_scale * sqrt(gain * x)``, read noise a
    constant std. Noise is drawn from ``generator`` (seeded from the config when
    omitted); ``clip=False`` returns the value before clamping."""
    if not 0 < config.exposure_gain <= 1 or config.gamma <= 0:
        raise errors.ConfigurationError(description="degrade needs 0 < exposure_gain <= 1 and gamma > 0")
    if config.read_noise_sigma < 0 or config.shot_noise_scale < 0:
        raise errors.ConfigurationError(description="degrade noise scales must be non-negative")
    generator = generator or _generator(config.seed)
    exposed = clean * config.exposure_gain if config.exposure_gain != 1 else clean
    dark = exposed.pow(config.gamma) if config.gamma != 1 else exposed
    noisy = dark
    if config.shot_noise_scale > 0:
        std = config.shot_noise_scale * exposed.clamp_min(0.0).sqrt()
        noisy = noisy + std * torch.randn(clean.shape, generator=generator, dtype=clean.dtype)
    if config.read_noise_sigma > 0:
        noisy = noisy + config.read_noise_sigma * torch.randn(clean.shape, generator=generator, dtype=clean.dtype)
    return noisy.clamp(0.0, 1.0) if clip else noisy


def add_gaussian_noise(image: torch.Tensor, sigma: float, seed: int = 0) -> torch.Tensor:
    """Zero-mean Gaussian noise with std ``sigma`` in [0, 1] units (8-bit levels / 255)."""
    if sigma < 0:
        raise errors.ConfigurationError(description=f"noise sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return image
    noise = torch.randn(image.shape, generator=_generator(seed), dtype=image.dtype)
    return (image + sigma * noise.to(image.device)).clamp(0.0, 1.0)


def sample_seed(seed: int, sample_id: str) -> int:
    digest = hashlib.sha256(f"{seed}:{sample_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFFFFFFFFFFFFFF


def _source_images(src_dir: pathlib.Path) -> typing.List[pathlib.Path]:
    if not src_dir.is_dir():
        raise errors.ObjectDoesntExistError("Source directory", "path", str(src_dir))
    return sorted(p for p in src_dir.iterdir() if p.is_file() and p.suffix.lower() in SOURCE_SUFFIXES)


def _build_one(path: pathlib.Path, out_dir: pathlib.Path, degrade_config: DegradeConfig, canny_config: CannyConfig):
    sample_id = path.stem
    try:
        clean = quantize_8bit(read_image(path, sample_id))
    except errors.DataLoadError:
        logger.warn("data.skipped", sample_id=sample_id, path=str(path))
        return sample_id, False
    low = degrade(clean, degrade_config, _generator(sample_seed(degrade_config.seed, sample_id)))
    # edges of the quantized image, so they match what the PNG reloads to
    edges = canny_edges(
        clean,
        canny_config.low_threshold,
        canny_config.high_threshold,
        canny_config.sigma,
        canny_config.relative,
    )
    for split, image in zip(SPLITS, (low, clean, edges)):
        write_image(out_dir / split / f"{sample_id}.png", image)
    return sample_id, True


def build_dataset(
    src_dir: typing.Union[str, pathlib.Path],
    out_dir: typing.Union[str, pathlib.Path],
    degrade_config: DegradeConfig,
    canny_config: CannyConfig,
    workers: int = 1,
) -> dict:
    src_dir, out_dir = pathlib.Path(src_dir), pathlib.Path(out_dir)
    check_canny(canny_config)
    sources = _source_images(src_dir)
    ids = [p.stem for p in sources]
    duplicates = sorted({i for i in ids if ids.count(i) > 1})
    if duplicates:
        raise errors.UsageError(description=f"source ids collide across file types: {', '.join(duplicates)}")
    for split in SPLITS:
        (out_dir / split).mkdir(parents=True, exist_ok=True)

    def build(path):
        return _build_one(path, out_dir, degrade_config, canny_config)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(build, sources))
    else:
        results = [build(path) for path in sources]

    built = [sample_id for sample_id, ok in results if ok]
    skipped = [{"id": p.stem, "path": str(p)} for p, (_, ok) in zip(sources, results) if not ok]
    if not built:
        raise errors.EmptyDatasetError(str(src_dir))
    manifest = {
        "version": MANIFEST_VERSION,
        "ids": built,
        "degrade": degrade_config.dump(),
        "canny": canny_config.dump(),
        "config_hash": config_hash(degrade_config, canny_config),
        "counts": {"images": len(built), "files": len(built) * len(SPLITS), "skipped": len(skipped)},
        "skipped": skipped,
    }
    with open(out_dir / MANIFEST_NAME, "w") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
    logger.info("data.built", directory=str(out_dir), **manifest["counts"], config_hash=manifest["config_hash"])
    return manifest


class PairedDataset:
    """Read side of a built dataset."""

    def __init__(self, manifest_path: typing.Union[str, pathlib.Path]):
        path = pathlib.Path(manifest_path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        try:
            with open(path, "r") as handle:
                self.manifest = json.load(handle)
        except FileNotFoundError:
            raise errors.ObjectDoesntExistError("Manifest", "path", str(path))
        except ValueError:
            raise errors.DataLoadError("manifest", str(path))
        if self.manifest.get("version") != MANIFEST_VERSION:
            raise errors.ConfigurationError(
                description=f"{path} has manifest version {self.manifest.get('version')}, expected {MANIFEST_VERSION}"
            )
        self.root = path.parent
        self.ids: typing.List[str] = list(self.manifest["ids"])

    def __len__(self) -> int:
        return len(self.ids)

    def load(self, sample_id: str) -> PairedSample:
        if sample_id not in self.manifest["ids"]:
            raise errors.ObjectDoesntExistError("Sample", "id", sample_id)
        low, high, edges = (read_image(self.root / split / f"{sample_id}.png", sample_id) for split in SPLITS)
        if not (low.shape[-2:] == high.shape[-2:] == edges.shape[-2:]):
            raise errors.ShapeMismatchError(f"sample {sample_id}", low.shape, high.shape)
        return PairedSample(low, high, edges[:, :1], sample_id)


def load_batch(dataset: PairedDataset, ids: typing.Sequence[str], multiple: int) -> PairedBatch:
    """Stack samples, each reflection-padded to the smallest common size divisible by ``multiple``."""
    samples = [dataset.load(sample_id) for sample_id in ids]
    height = max(-(-s.low.shape[-2] // multiple) * multiple for s in samples)
    width = max(-(-s.low.shape[-1] // multiple) * multiple for s in samples)
    lows, highs, edges, pads = [], [], [], []
    for sample in samples:
        low, record = pad_to_multiple(sample.low, multiple, (height, width))
        lows.append(low)
        highs.append(pad_to_multiple(sample.high, multiple, (height, width))[0])
        edges.append(pad_to_multiple(sample.edges, multiple, (height, width))[0])
        pads.append(record)
    return PairedBatch(torch.cat(lows), torch.cat(highs), torch.cat(edges), list(ids), pads)
