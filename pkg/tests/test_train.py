import dataclasses

import numpy as np
import pytest
import torch

from myoinr.diffnet import flat_params
from myoinr.losses import LossWeights
from myoinr.train import (
    RANDOM_INTERIOR,
    Adam,
    TrainConfig,
    epoch_items,
    new_state,
    run_epoch,
    train,
)


def test_adam_first_step_is_lr_sized():
    opt = Adam(3, lr=1e-2, dtype=torch.float64)
    p = torch.zeros(3, dtype=torch.float64)
    new = opt.step(p, torch.tensor([3.0, -0.5, 1e-3], dtype=torch.float64))
    np.testing.assert_allclose(new.numpy(), [-1e-2, 1e-2, -1e-2], rtol=1e-4)


def test_adam_zero_gradient_is_fixed_point():
    opt = Adam(4, dtype=torch.float64)
    p = torch.arange(4.0, dtype=torch.float64)
    for _ in range(3):
        p2 = opt.step(p, torch.zeros(4, dtype=torch.float64))
    assert torch.equal(p2, p)


def test_adam_rejects_non_finite():
    opt = Adam(2)
    with pytest.raises(FloatingPointError, match="w"):
        opt.step(torch.zeros(2), torch.tensor([0.0, float("nan")]), blocks=[("v", (1,)), ("w", (1,))])
    assert opt.step_count == 0


def test_epoch_items_cover_every_pair(tiny_dataset):
    items = epoch_items(tiny_dataset, 0, 0)
    expect = {(c, k) for c in range(4) for k in range(1, 4)}
    assert sorted(items) == sorted(expect) and len(items) == len(expect)
    assert items != epoch_items(tiny_dataset, 1, 0)
    assert items == epoch_items(tiny_dataset, 0, 0)


def test_config_validation_and_roundtrip(tiny_train_config):
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(jacobian_sample_policy="grid")
    assert TrainConfig.from_dict(tiny_train_config.to_dict()) == tiny_train_config


def test_training_deterministic(tiny_dataset, tiny_train_config):
    a, ha = train(tiny_dataset, tiny_train_config)
    b, hb = train(tiny_dataset, tiny_train_config)
    assert flat_params(a).numpy().tobytes() == flat_params(b).numpy().tobytes()
    assert ha == hb


def test_workers_do_not_change_trajectory(tiny_dataset, tiny_train_config):
    _, h1 = train(tiny_dataset, tiny_train_config)
    m3, h3 = train(tiny_dataset, dataclasses.replace(tiny_train_config, workers=3))
    for r1, r3 in zip(h1, h3):
        for k in ("pos", "jacobian", "latent", "total"):
            assert r1[k] == pytest.approx(r3[k], rel=1e-6)


def test_alpha_changes_parameters(tiny_dataset, tiny_train_config):
    cfg0 = dataclasses.replace(tiny_train_config, epochs=1, weights=LossWeights(alpha=0.0))
    cfg1 = dataclasses.replace(cfg0, weights=LossWeights(alpha=1e-3))
    a, _ = train(tiny_dataset, cfg0)
    b, _ = train(tiny_dataset, cfg1)
    assert not torch.equal(flat_params(a), flat_params(b))


def test_loss_decreases(tiny_dataset, tiny_train_config):
    cfg = dataclasses.replace(tiny_train_config, epochs=5)
    _, hist = train(tiny_dataset, cfg)
    totals = [r["total"] for r in hist]
    assert totals[-1] < totals[0]
    assert all(np.isfinite(totals))


def test_resume_matches_uninterrupted(tiny_dataset, tiny_train_config):
    cfg = dataclasses.replace(tiny_train_config, epochs=3)
    full, hist = train(tiny_dataset, cfg)
    state = new_state(cfg)
    run_epoch(tiny_dataset, cfg, state)
    # simulate restart: copy model + optimizer into a fresh state
    resumed = new_state(cfg)
    resumed.model.load_state_dict(state.model.state_dict())
    resumed.optimizer.load_state_dict(state.optimizer.state_dict())
    resumed.epoch, resumed.history = state.epoch, list(state.history)
    m, h = train(tiny_dataset, cfg, state=resumed)
    assert torch.equal(flat_params(m), flat_params(full))
    assert h == hist


def test_random_interior_policy(tiny_dataset, tiny_train_config):
    cfg = dataclasses.replace(tiny_train_config, epochs=1, jacobian_sample_policy=RANDOM_INTERIOR)
    a, ha = train(tiny_dataset, cfg)
    b, hb = train(tiny_dataset, cfg)
    assert torch.equal(flat_params(a), flat_params(b))
    assert ha[0]["jacobian"] > 0


def test_epochs_zero_returns_init(tiny_dataset, tiny_train_config):
    cfg = dataclasses.replace(tiny_train_config, epochs=0)
    m, h = train(tiny_dataset, cfg)
    assert h == []
    assert torch.equal(flat_params(m), flat_params(new_state(cfg).model))


def test_empty_dataset_rejected(tiny_train_config):
    with pytest.raises(ValueError, match="empty"):
        train([], tiny_train_config)
