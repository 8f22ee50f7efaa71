import tempfile
from pathlib import Path

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from solarchip.gradcheck import tiny_backbone
from solarchip.models import BackboneConfig, build_model, tagged_buffers, tagged_parameters
from solarchip.models.checkpoint import read_checkpoint, save_checkpoint, load_parameters
from solarchip.models.conv import pooling_basis

D = torch.float64


@pytest.mark.parametrize("kind", ["conv", "transformer"])
def test_token_and_reconstruction_shapes(kind):
    cfg = BackboneConfig(kind=kind, side=32, patch_size=8)
    model = build_model(cfg, 0)
    x = torch.randn(2, 1, 32, 32, dtype=D)
    tok = model.encode(3, x)
    assert tok.shape == (2, 1 + 16, cfg.d_model)
    emb = model.project(tok, 3)
    assert emb.cls.shape == (2, cfg.d_ctr) and emb.patches.shape == (2, 16, cfg.d_ctr)
    assert model.decode(tok[:, 1:], 3).shape == x.shape


@pytest.mark.parametrize("kind", ["conv", "transformer"])
def test_decoder_rejects_projected_tokens(kind):
    cfg = tiny_backbone(kind)
    model = build_model(cfg, 0)
    with pytest.raises(ValueError, match="pre-projection"):
        model.decode(torch.zeros(1, cfg.n_patches, cfg.d_ctr, dtype=D), 0)
    with pytest.raises(ValueError):
        model.encode(0, torch.zeros(1, 1, 8, 8, dtype=D))


def test_bad_configs_rejected():
    with pytest.raises(ValueError):
        BackboneConfig(side=30, patch_size=8)
    with pytest.raises(ValueError):
        BackboneConfig(kind="mlp")
    with pytest.raises(ValueError):
        build_model(tiny_backbone("conv"), 0)[11]


def test_init_deterministic_and_leaves_global_rng():
    state = torch.random.get_rng_state()
    a, b = build_model(tiny_backbone("conv"), 4), build_model(tiny_backbone("conv"), 4)
    assert torch.equal(state, torch.random.get_rng_state())
    for (ta, pa), (tb, pb) in zip(tagged_parameters(a), tagged_parameters(b)):
        assert ta == tb and torch.equal(pa, pb)
    c = build_model(tiny_backbone("conv"), 5)
    assert not torch.equal(next(a[0].parameters()), next(c[0].parameters()))


def test_modalities_share_no_parameters():
    model = build_model(tiny_backbone("transformer"), 0)
    ids = [{id(p) for p in mm.parameters()} for mm in model.modalities]
    for i in range(11):
        for j in range(i + 1, 11):
            assert not ids[i] & ids[j]


def test_temperatures_start_at_zero():
    model = build_model(tiny_backbone("conv"), 0)
    assert model.temperatures() == {"alpha_cls": 0.0, "alpha_pat": 0.0, "alpha_int": 0.0}


def test_tags_unique_and_complete():
    model = build_model(tiny_backbone("conv"), 0)
    tags = [t for t, _ in tagged_parameters(model)]
    assert len(tags) == len(set(tags)) == len(list(model.parameters()))
    assert tags[-3:] == ["temperature/alpha_cls", "temperature/alpha_pat", "temperature/alpha_int"]


def test_input_stats_are_undone_by_decode():
    model = build_model(tiny_backbone("conv"), 0)
    x = torch.randn(1, 1, 16, 16, dtype=D)
    ref = model.encode(2, x)
    model.set_input_stats(np.full(11, 3.0), np.full(11, 2.0))
    assert torch.allclose(model.encode(2, 2.0 * x + 3.0), ref, atol=1e-12)
    shift = np.random.default_rng(0).standard_normal((11, 16, 16))
    model.set_input_stats(shift, np.full(11, 2.0))
    assert torch.allclose(model.encode(2, 2.0 * x + torch.as_tensor(shift[2])), ref, atol=1e-12)
    with pytest.raises(ValueError):
        model.set_input_stats(np.zeros(11), np.zeros(11))


@settings(max_examples=5, deadline=None)
@given(st.sampled_from(["conv", "transformer"]), st.integers(0, 1000))
def test_checkpoint_round_trip_bit_exact(kind, seed):
    with tempfile.TemporaryDirectory() as d:
        _round_trip(Path(d) / "c.npz", kind, seed)


def _round_trip(path, kind, seed):
    model = build_model(tiny_backbone(kind), seed)
    model.set_input_stats(np.arange(11.0), np.arange(1.0, 12.0))
    save_checkpoint(path, model, {"k": 1})
    meta, arrays = read_checkpoint(path)
    assert meta == {"k": 1}
    other = build_model(tiny_backbone(kind), seed + 1)
    load_parameters(other, arrays)
    for (_, p), (_, q) in zip(tagged_parameters(model), tagged_parameters(other)):
        assert torch.equal(p, q)
    for (_, p), (_, q) in zip(tagged_buffers(model), tagged_buffers(other)):
        assert torch.equal(p, q)


def test_pooling_basis_starts_constant_and_spans_the_grid():
    b = pooling_basis(8)
    assert torch.allclose(b[0], torch.ones(8, 8, dtype=D))
    assert int(torch.linalg.matrix_rank(b.flatten(1))) == min(len(b), 64)
