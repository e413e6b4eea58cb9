import typing
import pathlib
import structlog

import numpy as np
import torch
import torch.nn.functional as F

import lowlight_structure.errors as errors

logger = structlog.get_logger(__name__)

try:
    from PIL import Image
except ImportError as e:
    logger.warn("Pillow not found")

__all__ = ('PadRecord', 'read_image', 'write_image', 'quantize_8bit', 'pad_to_multiple', 'unpad')


class PadRecord(typing.NamedTuple):
    bottom: int
    right: int
    height: int
    width: int


def read_image(path: typing.Union[str, pathlib.Path], sample_id: str = None) -> torch.Tensor:
    """Read an 8- or 16-bit PNG as a (1, C, H, W) float32 tensor in [0, 1]."""
    try:
        with Image.open(path) as handle:
            image = handle
            if image.mode in ("I;16", "I;16B", "I;16L", "I"):
                array = np.asarray(image, dtype=np.uint16 if image.mode.startswith("I;16") else np.int32)
                data = torch.from_numpy(array.astype(np.float32) / 65535.0)[None]
            else:
                if image.mode not in ("L", "RGB"):
                    image = image.convert("RGB")
                array = np.array(image, dtype=np.uint8)
                data = torch.from_numpy(array).to(torch.float32) / 255.0
                data = data[None] if data.dim() == 2 else data.permute(2, 0, 1)
    except (OSError, ValueError) as e:
        logger.warn("image.unreadable", path=str(path), error=str(e))
        raise errors.DataLoadError(sample_id or pathlib.Path(path).stem, str(path))
    return data[None].contiguous()


def quantize_8bit(image: torch.Tensor) -> torch.Tensor:
    """Round to the 8-bit grid exactly as ``read_image`` would reload it."""
    levels = torch.round(image.detach().clamp(0.0, 1.0) * 255.0).to(torch.uint8)
    return levels.to(torch.float32) / 255.0


def write_image(path: typing.Union[str, pathlib.Path], image: torch.Tensor, bit_depth: int = 8):
    tensor = image.detach().cpu()
    if tensor.dim() == 4:
        if tensor.shape[0] != 1:
            raise errors.UsageError(description="write_image takes a single image")
        tensor = tensor[0]
    tensor = tensor.clamp(0.0, 1.0)
    channels = tensor.shape[0]
    pathlib.Path(path).parent.mkdir(parents=True, exist_ok=True)
    if bit_depth == 16:
        if channels != 1:
            raise errors.UsageError(description="16-bit PNG output is grayscale only")
        array = np.round(tensor[0].double().numpy() * 65535.0).astype(np.uint16)
        Image.fromarray(array).save(path)
        return
    if bit_depth != 8:
        raise errors.UsageError(description=f"unsupported bit depth {bit_depth}")
    array = np.round(tensor.double().numpy() * 255.0).astype(np.uint8)
    array = array[0] if channels == 1 else np.transpose(array, (1, 2, 0))
    Image.fromarray(array).save(path)


def pad_to_multiple(
    image: torch.Tensor, multiple: int, target: typing.Optional[typing.Tuple[int, int]] = None
) -> typing.Tuple[torch.Tensor, PadRecord]:
    """Reflection-pad bottom/right so both sides divide ``multiple``
    (or reach ``target``, itself a multiple)."""
    height, width = image.shape[-2:]
    if target is None:
        target = (-(-height // multiple) * multiple, -(-width // multiple) * multiple)
    bottom, right = target[0] - height, target[1] - width
    if bottom < 0 or right < 0 or target[0] % multiple or target[1] % multiple:
        raise errors.UsageError(description=f"cannot pad {height}x{width} to {target}")
    record = PadRecord(bottom, right, height, width)
    if bottom == 0 and right == 0:
        return image, record
    mode = "reflect" if bottom < height and right < width else "replicate"
    return F.pad(image, (0, right, 0, bottom), mode=mode), record


def unpad(image: torch.Tensor, record: PadRecord) -> torch.Tensor:
    return image[..., :record.height, :record.width]
