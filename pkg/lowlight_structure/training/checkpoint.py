"""Self-describing checkpoint container.

A checkpoint is a torch-serialized dict::

    {format, format_version, step, seed, rng_state, config (JSON text),
     index: [{name, dtype, shape}], tensors: {name: tensor}}

Tensor names are ``<module>/<state key>`` for models and ``optim.<group>/<param>.<m|v|t>``
for optimizer moments. Everything is validated before any model is built.
"""
import os
import json
import typing
import pathlib
import structlog

import torch

import lowlight_structure.errors as errors
from lowlight_structure.config import load_run_config, merge_dicts
from lowlight_structure.training.state import TrainState, init_train_state

logger = structlog.get_logger(__name__)

__all__ = ('FORMAT', 'FORMAT_VERSION', 'save_checkpoint', 'read_checkpoint', 'load_checkpoint')

FORMAT = "lowlight-structure-checkpoint"
FORMAT_VERSION = 1


def _collect_tensors(state: TrainState) -> typing.Dict[str, torch.Tensor]:
    tensors = {}
    for module_name, module in state.modules().items():
        for key, value in module.state_dict().items():
            tensors[f"{module_name}/{key}"] = value.detach().clone()
    for group, optimizer in state.optimizers().items():
        for key, value in optimizer.state_dict().items():
            tensors[f"optim.{group}/{key}"] = value.detach().clone()
    return tensors


def save_checkpoint(state: TrainState, path: typing.Union[str, pathlib.Path]) -> pathlib.Path:
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tensors = _collect_tensors(state)
    payload = {
        "format": FORMAT,
        "format_version": FORMAT_VERSION,
        "step": state.step,
        "seed": state.seed,
        "rng_state": state.rng_state.clone(),
        "config": json.dumps(state.config.dump(), sort_keys=True),
        "index": [
            {"name": name, "dtype": str(tensor.dtype).replace("torch.", ""), "shape": list(tensor.shape)}
            for name, tensor in tensors.items()
        ],
        "tensors": tensors,
    }
    tmp = path.with_name(path.name + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)
    logger.info("checkpoint.saved", path=str(path), step=state.step, tensors=len(tensors))
    return path


def read_checkpoint(path: typing.Union[str, pathlib.Path]) -> dict:
    """Load and validate the container without building models."""
    path = pathlib.Path(path)
    if not path.is_file():
        raise errors.ObjectDoesntExistError("Checkpoint", "path", str(path))
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise errors.CheckpointError(str(path), f"unreadable ({e.__class__.__name__})")
    if not isinstance(payload, dict) or payload.get("format") != FORMAT:
        raise errors.CheckpointError(str(path), "unknown container format")
    if payload.get("format_version") != FORMAT_VERSION:
        raise errors.CheckpointVersionError(str(path), payload.get("format_version"), FORMAT_VERSION)
    for key in ("step", "seed", "rng_state", "config", "index", "tensors"):
        if key not in payload:
            raise errors.CheckpointError(str(path), f"missing field {key}")
    tensors = payload["tensors"]
    names = [entry["name"] for entry in payload["index"]]
    if sorted(names) != sorted(tensors):
        raise errors.CheckpointError(str(path), "index and tensor table disagree")
    for entry in payload["index"]:
        tensor = tensors[entry["name"]]
        if list(tensor.shape) != list(entry["shape"]) or str(tensor.dtype).replace("torch.", "") != entry["dtype"]:
            raise errors.CheckpointError(str(path), f"{entry['name']} does not match its index entry")
    try:
        payload["config"] = json.loads(payload["config"])
    except ValueError:
        raise errors.CheckpointError(str(path), "embedded config is not JSON")
    return payload


def _module_state(tensors: dict, prefix: str) -> dict:
    return {name[len(prefix) + 1:]: value for name, value in tensors.items() if name.startswith(prefix + "/")}


def load_checkpoint(path: typing.Union[str, pathlib.Path], overrides: typing.Optional[dict] = None) -> TrainState:
    """Rebuild the training state saved at ``path``.

    ``overrides`` may change run-level settings (steps, output dir, checkpoint
    cadence); model and ablation sections always come from the checkpoint."""
    payload = read_checkpoint(path)
    config = load_run_config(overrides=_merge_run_overrides(payload["config"], overrides or {}))
    state = init_train_state(config, step=int(payload["step"]))
    tensors = payload["tensors"]
    try:
        for module_name, module in state.modules().items():
            module.load_state_dict(_module_state(tensors, module_name), strict=True)
        for group, optimizer in state.optimizers().items():
            optimizer.load_state_dict(_module_state(tensors, f"optim.{group}"))
    except (RuntimeError, KeyError) as e:
        raise errors.CheckpointError(str(path), f"tensors do not fit the configured models ({e})")
    expected = {f"{name}/{key}" for name, module in state.modules().items() for key in module.state_dict()}
    expected |= {f"optim.{g}/{key}" for g, opt in state.optimizers().items() for key in opt.state_dict()}
    if expected != set(tensors):
        raise errors.CheckpointError(str(path), "tensor set does not match the configured models")
    state.rng_state = payload["rng_state"]
    torch.set_rng_state(state.rng_state)
    logger.info("checkpoint.loaded", path=str(path), step=state.step)
    return state


def _merge_run_overrides(saved: dict, overrides: dict) -> dict:
    allowed = {key: value for key, value in overrides.items() if key not in ("model",)}
    if "train" in allowed:
        allowed["train"] = {k: v for k, v in allowed["train"].items() if k not in ("ablation", "seed", "weights")}
    return merge_dicts(saved, allowed)
