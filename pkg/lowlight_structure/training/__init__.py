"""End-to-end training: alternating discriminator and generator-side updates."""
import json
import math
import queue
import typing
import pathlib
import threading
import structlog

import numpy as np
import torch

import lowlight_structure.errors as errors
from lowlight_structure.config import RunConfig, spatial_multiple
from lowlight_structure.csv import LOSS_COLUMNS, append_loss_rows, truncate_after
from lowlight_structure.data import PairedBatch, PairedDataset, load_batch
from lowlight_structure.losses import (
    LossTerms, gan_discriminator_loss, gan_generator_loss, reconstruction_loss, structure_bce, total_loss,
)
from lowlight_structure.plots import plot_loss_curve
from lowlight_structure.training.checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from lowlight_structure.training.optim import Adam, AdamMoments, adam_update
from lowlight_structure.training.state import TrainState, init_train_state

logger = structlog.get_logger(__name__)

__all__ = (
    'LossLog', 'TrainState', 'init_train_state', 'train_step', 'batch_ids', 'PrefetchLoader', 'Trainer',
    'Adam', 'AdamMoments', 'adam_update', 'save_checkpoint', 'load_checkpoint', 'read_checkpoint',
)

LOSS_CSV = "losses.csv"
LOSS_PLOT = "loss_curve.png"
DIVERGENCE_REPORT = "divergence.json"


class LossLog(typing.NamedTuple):
    step: int
    appearance: float
    structure: float
    adversarial: float
    discriminator: float
    enhancement: float
    total: float


def _zero(reference: torch.Tensor) -> torch.Tensor:
    return reference.new_zeros(())


def train_step(batch: PairedBatch, state: TrainState) -> LossLog:
    """One discriminator update followed by one joint update of the other models."""
    framework, discriminator = state.framework, state.discriminator
    step = state.step + 1
    framework.train()

    d_loss = _zero(batch.low)
    if discriminator is not None:
        discriminator.train()
        with torch.no_grad():
            fake = framework.structure(batch.low)
        d_loss = gan_discriminator_loss(discriminator(batch.edges), discriminator(fake))
        d_value = d_loss.detach().item()
        if not math.isfinite(d_value):
            raise errors.TrainingDivergenceError("discriminator", step, {"discriminator": d_value})
        state.disc_optimizer.zero_grad()
        d_loss.backward()
        state.disc_optimizer.step()
        discriminator.requires_grad_(False)

    try:
        outputs = framework(batch.low)
        norm = state.pixel_norm
        zero = _zero(outputs.enhanced)
        terms = LossTerms(
            appearance=(
                reconstruction_loss(outputs.appearance, batch.high, state.extractor, norm)
                if framework.appearance is not None
                else zero
            ),
            structure=structure_bce(outputs.edges, batch.edges) if outputs.edges is not None else zero,
            adversarial=(
                gan_generator_loss(discriminator(outputs.edges))
                if discriminator is not None and outputs.edges is not None
                else zero
            ),
            enhancement=reconstruction_loss(outputs.enhanced, batch.high, state.extractor, norm),
        )
        loss = total_loss(terms, state.weights, step)
        state.main_optimizer.zero_grad()
        loss.backward()
        state.main_optimizer.step()
    finally:
        if discriminator is not None:
            discriminator.requires_grad_(True)

    state.step = step
    state.rng_state = torch.get_rng_state()
    return LossLog(step, *(t.detach().item() for t in (*terms[:3], d_loss, terms.enhancement, loss)))


def batch_ids(ids: typing.Sequence[str], batch_size: int, seed: int, step: int) -> typing.List[str]:
    """Ids of the batch trained at ``step``; a pure function of (seed, step)."""
    rng = np.random.default_rng([seed, step])
    picks = rng.permutation(len(ids))[: min(batch_size, len(ids))]
    return [ids[int(i)] for i in picks]


class PrefetchLoader:
    """Background producer of batches for steps ``first..last`` through a bounded queue."""

    _DONE = object()

    def __init__(
        self,
        dataset: PairedDataset,
        batch_size: int,
        seed: int,
        multiple: int,
        first: int,
        last: int,
        depth: int = 2,
    ):
        self.dataset = dataset
        self.batch_size, self.seed, self.multiple = batch_size, seed, multiple
        self.first, self.last = first, last
        self.queue: "queue.Queue" = queue.Queue(maxsize=depth)
        self.stop = threading.Event()
        self.thread = threading.Thread(target=self._produce, name="prefetch", daemon=True)

    def _put(self, item) -> bool:
        while not self.stop.is_set():
            try:
                self.queue.put(item, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def _produce(self):
        try:
            for step in range(self.first, self.last + 1):
                ids = batch_ids(self.dataset.ids, self.batch_size, self.seed, step)
                if not self._put((step, load_batch(self.dataset, ids, self.multiple))):
                    return
        except Exception as e:
            self._put(e)
            return
        self._put(self._DONE)

    def __iter__(self) -> typing.Iterator[typing.Tuple[int, PairedBatch]]:
        self.thread.start()
        try:
            while True:
                item = self.queue.get()
                if item is self._DONE:
                    return
                if isinstance(item, Exception):
                    raise item
                yield item
        finally:
            self.stop.set()
            self.thread.join()


class Trainer:
    def __init__(self, state: TrainState, dataset: PairedDataset, output_dir: typing.Union[str, pathlib.Path]):
        self.state = state
        self.dataset = dataset
        self.output_dir = pathlib.Path(output_dir)
        self.train_config = state.config.train
        self.multiple = spatial_multiple(state.config.model)
        self.history: typing.List[LossLog] = []

    @classmethod
    def from_config(cls, config: RunConfig, dataset: PairedDataset) -> "Trainer":
        return cls(init_train_state(config), dataset, config.output_dir)

    @classmethod
    def resume(cls, checkpoint: str, dataset: PairedDataset, overrides: typing.Optional[dict] = None) -> "Trainer":
        state = load_checkpoint(checkpoint, overrides)
        return cls(state, dataset, state.config.output_dir)

    @property
    def checkpoint_dir(self) -> pathlib.Path:
        return self.output_dir / "checkpoints"

    def checkpoint_path(self, step: int) -> pathlib.Path:
        return self.checkpoint_dir / f"step_{step:06d}.pt"

    def run(self, steps: typing.Optional[int] = None) -> typing.List[LossLog]:
        """Train until the state reaches ``steps`` (default: the configured total)."""
        torch.use_deterministic_algorithms(True, warn_only=True)
        last = steps or self.train_config.steps
        self.output_dir.mkdir(parents=True, exist_ok=True)
        csv_path = self.output_dir / LOSS_CSV
        truncate_after(csv_path, self.state.step)
        loader = PrefetchLoader(
            self.dataset,
            self.train_config.batch_size,
            self.state.seed,
            self.multiple,
            self.state.step + 1,
            last,
            self.train_config.prefetch,
        )
        logger.info("train.started", first=self.state.step + 1, last=last, images=len(self.dataset))
        for step, batch in loader:
            try:
                log = train_step(batch, self.state)
            except errors.TrainingDivergenceError as e:
                self._report_divergence(e)
                raise
            self.history.append(log)
            append_loss_rows(csv_path, [log])
            logger.info("train.step", **log._asdict())
            if step % self.train_config.checkpoint_every == 0:
                save_checkpoint(self.state, self.checkpoint_path(step))
        save_checkpoint(self.state, self.checkpoint_dir / "final.pt")
        if csv_path.exists():
            plot_loss_curve(csv_path, self.output_dir / LOSS_PLOT)
        logger.info("train.finished", step=self.state.step)
        return self.history

    def _report_divergence(self, error: errors.TrainingDivergenceError):
        last_finite = self.history[-1]._asdict() if self.history else None
        report = dict(error.to_dict(), last_finite_losses=last_finite, columns=list(LOSS_COLUMNS))
        with open(self.output_dir / DIVERGENCE_REPORT, "w") as handle:
            json.dump(report, handle, indent=2, sort_keys=True)
        logger.error(
            "train.diverged", term=error.term, step=error.step, report=str(self.output_dir / DIVERGENCE_REPORT)
        )
