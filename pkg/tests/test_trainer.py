import math

import numpy as np
import pytest
import torch

from solarchip.data.transforms import aug_array
from solarchip.data.types import HMI
from solarchip.gradcheck import tiny_backbone
from solarchip.losses import LossReport
from solarchip.trainer import (AUGS, NonFiniteLoss, TrainConfig, TrainState, assemble_batch, draw_step, fit, input_stats,
                               prepare_images, read_history, write_history)


def tiny_config(**kw):
    base = dict(seed=1, steps=4, batch_size=4, backbone=tiny_backbone("conv").replace(side=32, d_ctr=8))
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def images(small_archive):
    return prepare_images(small_archive)


def test_prepare_images_signed_log(small_archive, images):
    assert images.shape == (24, 11, 32, 32)
    raw = small_archive[0].stack()
    assert np.array_equal(images[0], np.copysign(np.log1p(np.abs(raw)), raw))


def test_input_stats_per_modality(images):
    mean, std = input_stats(images)
    assert mean.shape == (11, 32, 32) and std.shape == (11,)
    assert mean[3].mean() == pytest.approx(images[:, 3].mean())
    for aug in AUGS:
        assert np.allclose(aug_array(mean, aug), mean, atol=1e-12)
    assert std[3] == pytest.approx((images[:, 3] - mean[3]).std())
    assert input_stats(np.zeros((2, 11, 4, 4)))[1].tolist() == [1.0] * 11


def test_draw_step_samples_three_distinct_aia_bands():
    cfg = tiny_config()
    rng = np.random.default_rng(0)
    for _ in range(20):
        sampled, idx, augs = draw_step(rng, 10, cfg)
        assert len(set(sampled)) == 3 and HMI not in sampled and list(sampled) == sorted(sampled)
        assert len(set(idx.tolist())) == 4 and len(augs) == 4


def test_batch_shares_aug_across_modalities(images):
    seen = []
    cfg = tiny_config()
    sampled, idx, augs = draw_step(np.random.default_rng(3), len(images), cfg)
    assemble_batch(images, idx, augs, (HMI,) + sampled, hook=lambda k, m, a: seen.append((k, m, a)))
    by_sample = {}
    for k, m, a in seen:
        by_sample.setdefault(k, set()).add(a)
    assert all(len(v) == 1 for v in by_sample.values())


def test_config_validation():
    with pytest.raises(ValueError):
        tiny_config(batch_size=1)
    with pytest.raises(ValueError):
        tiny_config(lambda2=-1.0)
    assert TrainConfig.from_dict(tiny_config().to_dict()) == tiny_config()


def test_training_is_deterministic(images):
    _, h1 = fit(tiny_config(), images)
    _, h2 = fit(tiny_config(), images)
    assert [r.csv_row(i) for i, r in enumerate(h1)] == [r.csv_row(i) for i, r in enumerate(h2)]
    assert all(math.isfinite(r.total) for r in h1)


def test_resume_reproduces_uninterrupted_stream(tmp_path, images):
    _, full = fit(tiny_config(steps=4), images)
    state, first = fit(tiny_config(steps=2), images, out_dir=tmp_path)
    resumed = TrainState.load(tmp_path / "final.npz")
    resumed.config = resumed.config.replace(steps=4)
    _, rest = fit(resumed.config, images, state=resumed)
    assert [r.total for r in first + rest] == [r.total for r in full]


def test_temperatures_learn(images):
    state, _ = fit(tiny_config(steps=3), images)
    assert any(v != 0.0 for v in state.model.temperatures().values())


def test_zero_lambdas_leave_heads_untouched(images):
    cfg = tiny_config(lambda1=0.0, lambda2=0.0, lambda3=0.0)
    state, hist = fit(cfg, images)
    assert all(r.cls == r.pat == r.int == 0.0 for r in hist)
    assert state.model.temperatures() == {"alpha_cls": 0.0, "alpha_pat": 0.0, "alpha_int": 0.0}


def test_non_finite_loss_names_term(images):
    bad = images.copy()
    bad[:, 0] = np.inf
    with pytest.raises(NonFiniteLoss) as info:
        fit(tiny_config(steps=1, standardize=False), bad)
    assert info.value.term in ("rec", "cls", "pat", "int", "total")


def test_history_csv_round_trip(tmp_path, images):
    _, hist = fit(tiny_config(steps=2), images)
    write_history(tmp_path / "l.csv", hist)
    rows = read_history(tmp_path / "l.csv")
    assert [int(r["step"]) for r in rows] == [1, 2]
    assert float(rows[1]["total"]) == hist[1].total
    assert tuple(rows[0].keys()) == LossReport.CSV_HEADER


def test_steps_zero_returns_initial_state(images):
    state, hist = fit(tiny_config(steps=0), images)
    assert hist == [] and state.step == 0


def test_history_length_equals_steps(images):
    _, hist = fit(tiny_config(steps=3), images)
    assert len(hist) == 3


def _pixel_error(model, batch):
    x = torch.as_tensor(batch)
    with torch.no_grad():
        errs = [float(((model.decode(model.encode(m, x[:, m:m + 1])[:, 1:], m) - x[:, m:m + 1]) ** 2).mean())
                for m in range(11)]
    return float(np.mean(errs))


def test_overfit_checkpoints_reduce_pixel_error(images):
    """On one fixed 4-sample batch, reconstruction error falls at every checkpoint."""
    fixed = images[:4]
    cfg = tiny_config(steps=300, augment=False, batch_size=4, lambda1=0.0, lambda2=0.0, lambda3=0.0)
    start = TrainState.initial(cfg)
    start.model.set_input_stats(*input_stats(fixed))
    errors = [_pixel_error(start.model, fixed)]

    def record(step, _):
        if step % 50 == 0:
            errors.append(_pixel_error(start.model, fixed))

    fit(cfg, fixed, state=start, on_step=record)
    assert len(errors) == 7
    assert all(b < a for a, b in zip(errors, errors[1:]))
    assert errors[-1] < 0.2 * errors[0]


def test_alpha_cls_learns_within_100_steps(images):
    state, _ = fit(tiny_config(steps=100, lambda2=0.0, lambda3=0.0), images)
    assert state.model.temperatures()["alpha_cls"] != 0.0
