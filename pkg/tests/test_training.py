import json
import math

import pytest
import torch

import lowlight_structure.errors as errors
import lowlight_structure.training as training
from lowlight_structure.config import spatial_multiple
from lowlight_structure.csv import read_loss_csv
from lowlight_structure.data import load_batch
from lowlight_structure.training import PrefetchLoader, Trainer, batch_ids, init_train_state, train_step


def snapshot(module: torch.nn.Module) -> dict:
    return {name: p.detach().clone() for name, p in module.named_parameters()}


def same(a: dict, b: dict) -> bool:
    return a.keys() == b.keys() and all(torch.equal(a[k], b[k]) for k in a)


def first_batch(state, dataset):
    multiple = spatial_multiple(state.config.model)
    return load_batch(dataset, batch_ids(dataset.ids, state.config.train.batch_size, state.seed, 1), multiple)


def test_phases_touch_only_their_models(run_config, dataset):
    state = init_train_state(run_config())
    batch = first_batch(state, dataset)
    framework_before = snapshot(state.framework)
    disc_before = snapshot(state.discriminator)
    after_phase_one = {}
    step_disc = state.disc_optimizer.step

    def checked_step():
        step_disc()
        assert same(snapshot(state.framework), framework_before)
        after_phase_one.update(snapshot(state.discriminator))

    state.disc_optimizer.step = checked_step
    train_step(batch, state)
    assert after_phase_one and not same(after_phase_one, disc_before)
    assert same(snapshot(state.discriminator), after_phase_one)
    assert not same(snapshot(state.framework), framework_before)
    assert all(p.requires_grad for p in state.discriminator.parameters())


def test_step_log(run_config, dataset):
    state = init_train_state(run_config())
    log = train_step(first_batch(state, dataset), state)
    assert state.step == 1 and log.step == 1
    values = log._asdict()
    assert all(math.isfinite(v) and v >= 0 for v in values.values())
    weights = state.weights
    expected = (
        weights.appearance * log.appearance
        + weights.structure * log.structure
        + weights.adversarial * log.adversarial
        + weights.enhancement * log.enhancement
    )
    assert log.total == pytest.approx(expected, rel=1e-5)


def test_training_is_deterministic(run_config, dataset):
    first = Trainer.from_config(run_config("a"), dataset).run()
    second = Trainer.from_config(run_config("b"), dataset).run()
    assert first == second


def test_without_gan(run_config, dataset):
    config = run_config(ablation={"disable_gan": True})
    trainer = Trainer.from_config(config, dataset)
    assert trainer.state.discriminator is None
    trainer.run()
    losses = read_loss_csv(trainer.output_dir / training.LOSS_CSV)
    assert len(losses) == 4
    assert (losses["adversarial"] == 0).all() and (losses["discriminator"] == 0).all()


def test_appearance_weight_ignored_without_appearance_model(run_config, dataset):
    logs = []
    for weight in (1.0, 5.0):
        config = run_config(ablation={"disable_appearance": True}, weights={"appearance": weight})
        state = init_train_state(config)
        assert state.weights.appearance == 0.0
        logs.append(train_step(first_batch(state, dataset), state))
    assert logs[0] == logs[1]
    assert logs[0].appearance == 0.0


def test_outputs_written(run_config, dataset):
    trainer = Trainer.from_config(run_config(), dataset)
    history = trainer.run()
    assert [log.step for log in history] == [1, 2, 3, 4]
    out = trainer.output_dir
    assert (out / "checkpoints" / "step_000002.pt").is_file()
    assert (out / "checkpoints" / "step_000004.pt").is_file()
    assert (out / "checkpoints" / "final.pt").is_file()
    assert list(read_loss_csv(out / training.LOSS_CSV)["step"]) == [1, 2, 3, 4]


def test_divergence_is_reported(run_config, dataset, monkeypatch):
    monkeypatch.setattr(training, "structure_bce", lambda pred, target: torch.tensor(float("nan")))
    trainer = Trainer.from_config(run_config(), dataset)
    with pytest.raises(errors.TrainingDivergenceError) as info:
        trainer.run()
    assert info.value.step == 1 and info.value.term == "structure"
    report = json.loads((trainer.output_dir / training.DIVERGENCE_REPORT).read_text())
    assert report["fields"]["term"] == "structure"
    assert report["last_finite_losses"] is None
    assert info.value.exit_code == errors.EXIT_RUNTIME


def test_batch_schedule():
    ids = [f"s{i}" for i in range(10)]
    assert batch_ids(ids, 4, seed=1, step=7) == batch_ids(ids, 4, seed=1, step=7)
    assert batch_ids(ids, 4, seed=1, step=7) != batch_ids(ids, 4, seed=1, step=8)
    assert sorted(batch_ids(ids, 20, seed=0, step=1)) == sorted(ids)
    assert len(set(batch_ids(ids, 4, seed=0, step=3))) == 4


def test_prefetch_preserves_order(dataset):
    loader = PrefetchLoader(dataset, batch_size=2, seed=0, multiple=8, first=3, last=7, depth=1)
    seen = [(step, batch.ids) for step, batch in loader]
    assert [step for step, _ in seen] == [3, 4, 5, 6, 7]
    assert [ids for _, ids in seen] == [batch_ids(dataset.ids, 2, 0, step) for step in range(3, 8)]


def test_prefetch_surfaces_load_errors(dataset):
    for sample_id in dataset.ids:
        (dataset.root / "high" / f"{sample_id}.png").unlink()
    with pytest.raises(errors.DataLoadError):
        list(PrefetchLoader(dataset, batch_size=2, seed=0, multiple=8, first=1, last=3))


@pytest.mark.filterwarnings("error:Converting a tensor with requires_grad")
def test_step_logs_plain_floats(run_config, dataset):
    state = init_train_state(run_config())
    log = train_step(first_batch(state, dataset), state)
    assert all(type(value) is float for value in log[1:])
