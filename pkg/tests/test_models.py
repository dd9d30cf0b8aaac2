import numpy as np
import pytest

from conftest import TINY_PARAMS, fd_gradient_check
from csi_mtl import models as md
from csi_mtl.errors import (CheckpointIncompatibleError, DimensionMismatchError,
                            InvalidArgumentError, TruncatedPayloadError)

FULL = dict(compression_ratio="1/4", dims=(32, 32))
TINY = dict(compression_ratio="1/4", dims=(8, 8), **TINY_PARAMS)


def dense_count(n_in, n_out):
    return n_in * n_out + n_out


def conv_count(cin, cout):
    return cin * cout * 9 + cout


def transformer_stem_count(token_dim, embed, ff):
    attn = 4 * dense_count(embed, embed)
    block = 2 * embed + attn + 2 * embed + dense_count(embed, ff) + dense_count(ff, embed)
    return dense_count(token_dim, embed) + block + dense_count(embed, token_dim)


# ------------------------------------------------------------- configuration

def test_code_length_arithmetic():
    cfg = md.ModelConfig("csinet", "encoder", **FULL)
    assert cfg.flat_dim == 2048
    assert cfg.code_length == 512


def test_non_integral_code_length_rejected():
    with pytest.raises(InvalidArgumentError):
        md.ModelConfig("csinet", "encoder", "1/3", (8, 8))


def test_config_roundtrip_and_hash():
    cfg = md.ModelConfig("stnet", "shared_stem_decoder", "1/16", (32, 32), n_tasks=3)
    back = md.ModelConfig.from_dict(cfg.to_dict())
    assert back.to_dict() == cfg.to_dict()
    assert back.config_hash() == cfg.config_hash()
    other = md.ModelConfig("stnet", "shared_stem_decoder", "1/16", (32, 32), n_tasks=2)
    assert other.config_hash() != cfg.config_hash()


def test_shared_stem_requires_stnet():
    with pytest.raises(InvalidArgumentError):
        md.ModelConfig("csinet", "shared_stem_decoder", "1/4", (8, 8), n_tasks=2)


# ------------------------------------------------------------------ building

def test_build_is_deterministic():
    cfg = md.ModelConfig("stnet", "encoder", **TINY)
    a = md.build_model(cfg, seed=11)
    b = md.build_model(cfg, seed=11)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert pa.name == pb.name
        assert pa.data.tobytes() == pb.data.tobytes()
    c = md.build_model(cfg, seed=12)
    assert any(pa.data.tobytes() != pc.data.tobytes()
               for pa, pc in zip(a.parameters(), c.parameters()))


@pytest.mark.parametrize("family", ["csinet", "stnet"])
def test_encode_decode_shapes_and_range(family):
    enc = md.build_model(md.ModelConfig(family, "encoder", **TINY), seed=0)
    dec = md.build_model(md.ModelConfig(family, "decoder", **TINY), seed=1)
    rng = np.random.default_rng(0)
    x = rng.random((3, 2, 8, 8), dtype=np.float32)
    code = md.encode(enc, x)
    assert code.shape == (3, 32) and code.dtype == np.float32
    out = md.decode(dec, code)
    assert out.shape == (3, 2, 8, 8)
    assert out.min() >= 0.0 and out.max() <= 1.0
    single = md.encode(enc, x[0])
    assert single.shape == (32,)
    # batched and single GEMMs may differ in the last ulp
    assert np.allclose(single, code[0], atol=1e-6)


def test_decode_range_on_1000_random_codes():
    dec = md.build_model(md.ModelConfig("stnet", "decoder", **TINY), seed=2)
    codes = np.random.default_rng(1).standard_normal((1000, 32)).astype(np.float32) * 5
    out = md.decode(dec, codes)
    assert out.shape == (1000, 2, 8, 8)
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_encode_rejects_wrong_shape():
    enc = md.build_model(md.ModelConfig("csinet", "encoder", **TINY), seed=0)
    with pytest.raises(DimensionMismatchError):
        md.encode(enc, np.zeros((3, 2, 8, 4), dtype=np.float32))
    dec = md.build_model(md.ModelConfig("csinet", "decoder", **TINY), seed=0)
    with pytest.raises(DimensionMismatchError):
        md.decode(dec, np.zeros((3, 31), dtype=np.float32))


def test_distinct_inputs_give_distinct_codes():
    enc = md.build_model(md.ModelConfig("csinet", "encoder", **TINY), seed=3)
    rng = np.random.default_rng(2)
    a = rng.random((100, 2, 8, 8), dtype=np.float32)
    b = rng.random((100, 2, 8, 8), dtype=np.float32)
    ca, cb = md.encode(enc, a), md.encode(enc, b)
    assert (np.abs(ca - cb).max(axis=1) > 0).all()


def test_zero_code_decode_is_deterministic():
    dec = md.build_model(md.ModelConfig("csinet", "decoder", **TINY), seed=4)
    z = np.zeros(32, dtype=np.float32)
    assert md.decode(dec, z).tobytes() == md.decode(dec, z).tobytes()


# ----------------------------------------------------------------- gradients

@pytest.mark.parametrize("family", ["csinet", "stnet"])
def test_encoder_gradients(family):
    enc = md.build_model(md.ModelConfig(family, "encoder", **TINY), seed=5)
    x = np.random.default_rng(3).random((2, 2, 8, 8), dtype=np.float32)
    fd_gradient_check(enc, x, n_coords=120)


@pytest.mark.parametrize("family", ["csinet", "stnet"])
def test_decoder_gradients(family):
    dec = md.build_model(md.ModelConfig(family, "decoder", **TINY), seed=6)
    code = np.random.default_rng(4).standard_normal((2, 32)).astype(np.float32)
    fd_gradient_check(dec, code, n_coords=120)


# ---------------------------------------------------------- shared-stem decoder

def shared_decoder(n_tasks=2, seed=7):
    cfg = md.ModelConfig("stnet", "shared_stem_decoder", "1/4", (8, 8),
                         n_tasks=n_tasks, **TINY_PARAMS)
    return md.build_model(cfg, seed=seed)


def test_shared_stem_name_groups_are_disjoint():
    dec = shared_decoder()
    dec.bind_names("dec")
    shared = {p.name for p in dec.shared_parameters()}
    t0 = {p.name for p in dec.task_parameters(0)}
    t1 = {p.name for p in dec.task_parameters(1)}
    assert shared and t0 and t1
    assert not shared & t0 and not shared & t1 and not t0 & t1
    assert shared | t0 | t1 == {p.name for p in dec.parameters()}


def test_task_isolation_gradients():
    dec = shared_decoder()
    code = np.random.default_rng(5).standard_normal((2, 32)).astype(np.float32)
    out = dec.forward(code, task=0)
    dec.zero_grad()
    dec.backward(np.ones_like(out), task=0)
    assert all(p.grad is None for p in dec.task_parameters(1))
    assert any(p.grad is not None and np.abs(p.grad).max() > 1e-8
               for p in dec.shared_parameters())
    assert any(p.grad is not None for p in dec.task_parameters(0))


def test_decode_task_routing_and_errors():
    dec = shared_decoder()
    code = np.random.default_rng(6).standard_normal(32).astype(np.float32)
    y0 = md.decode_task(dec, code, 0)
    y1 = md.decode_task(dec, code, 1)
    assert y0.shape == (2, 8, 8)
    assert (y0 != y1).any()
    with pytest.raises(InvalidArgumentError):
        md.decode_task(dec, code, 2)
    plain = md.build_model(md.ModelConfig("stnet", "decoder", **TINY), seed=0)
    with pytest.raises(InvalidArgumentError):
        md.decode_task(plain, code, 0)


def test_single_task_shared_decoder_matches_plain():
    plain = md.build_model(md.ModelConfig("stnet", "decoder", **TINY), seed=9)
    shared = shared_decoder(n_tasks=1, seed=9)
    code = np.random.default_rng(7).standard_normal((3, 32)).astype(np.float32)
    assert (md.decode(plain, code) == md.decode_task(shared, code, 0)).all()


class TaskRouted(md.Module):
    """Pins a shared-stem decoder to one task so generic checks can drive it."""

    def __init__(self, inner, task):
        super().__init__()
        self.inner = self.add_child("inner", inner)
        self.task = task

    def forward(self, x):
        return self.inner.forward(x, task=self.task)

    def backward(self, dy):
        return self.inner.backward(dy, task=self.task)


def test_shared_stem_gradients():
    dec = shared_decoder()
    code = np.random.default_rng(8).standard_normal((2, 32)).astype(np.float32)
    fd_gradient_check(TaskRouted(dec, 1), code, n_coords=120)


# ---------------------------------------------------------- parameter counts

def test_component_counts_match_closed_forms():
    n_delay, n_tx, flat, m, embed = 32, 32, 2048, 512, 256
    enc_c = md.build_model(md.ModelConfig("csinet", "encoder", **FULL), seed=0)
    assert md.module_param_count(enc_c) == conv_count(2, 2) + dense_count(flat, m)

    dec_c = md.build_model(md.ModelConfig("csinet", "decoder", **FULL), seed=0)
    refine = conv_count(2, 8) + conv_count(8, 16) + conv_count(16, 2)
    assert md.module_param_count(dec_c) == (dense_count(m, flat) + 2 * refine
                                            + conv_count(2, 2))

    enc_s = md.build_model(md.ModelConfig("stnet", "encoder", **FULL), seed=0)
    cnn = conv_count(2, 8) + conv_count(8, 2)
    trans = transformer_stem_count(2 * n_tx, embed, 2 * embed)
    assert md.module_param_count(enc_s) == cnn + trans + dense_count(flat, m)

    dec_s = md.build_model(md.ModelConfig("stnet", "decoder", **FULL), seed=0)
    assert md.module_param_count(dec_s) == (dense_count(m, flat) + cnn + trans
                                            + conv_count(2, 2))

    hard = md.build_model(md.ModelConfig("stnet", "shared_stem_decoder", "1/4",
                                         (32, 32), n_tasks=2), seed=0)
    counts = md.count_parameters({"dec": hard})
    assert counts.components["dec.shared"] == dense_count(m, flat) + cnn
    assert counts.components["dec.task0"] == trans + conv_count(2, 2)
    assert counts.components["dec.task0"] == counts.components["dec.task1"]
    assert counts.total == md.module_param_count(hard)


def test_regime_totals_and_reduction_bands():
    def build(role, family, **kw):
        return md.build_model(md.ModelConfig(family, role, "1/4", (32, 32), **kw), seed=0)

    independent = md.count_parameters({
        "enc0": build("encoder", "csinet"), "dec0": build("decoder", "csinet"),
        "enc1": build("encoder", "stnet"), "dec1": build("decoder", "stnet"),
    }).total
    joint = md.count_parameters({
        "enc0": build("encoder", "csinet"), "enc1": build("encoder", "stnet"),
        "dec": build("decoder", "stnet"),
    }).total
    hard = md.count_parameters({
        "enc0": build("encoder", "csinet"), "enc1": build("encoder", "stnet"),
        "dec": build("shared_stem_decoder", "stnet", n_tasks=2),
    }).total

    assert independent == 5_323_738
    assert joint == 4_269_856
    assert hard == 4_830_086
    assert joint < hard < independent
    assert 15.0 <= 100.0 * (1 - joint / independent) <= 35.0
    assert 3.0 <= 100.0 * (1 - hard / independent) <= 15.0


def test_dense_layer_count_scales_with_flat_dim():
    for dims in ((8, 8), (8, 16), (16, 16)):
        flat = 2 * dims[0] * dims[1]
        cfg = md.ModelConfig("csinet", "encoder", "1/4", dims)
        enc = md.build_model(cfg, seed=0)
        assert md.module_param_count(enc) == conv_count(2, 2) + dense_count(flat, flat // 4)


def test_count_additivity_and_permutation_invariance():
    a = md.build_model(md.ModelConfig("csinet", "encoder", **TINY), seed=0)
    b = md.build_model(md.ModelConfig("stnet", "decoder", **TINY), seed=0)
    c1 = md.count_parameters({"a": a, "b": b})
    c2 = md.count_parameters({"b": b, "a": a})
    assert c1.total == c2.total == md.module_param_count(a) + md.module_param_count(b)


# ----------------------------------------------------------------- checkpoints

def small_bundle():
    enc_cfg = md.ModelConfig("csinet", "encoder", **TINY)
    dec_cfg = md.ModelConfig("stnet", "decoder", **TINY)
    models = {"enc": md.build_model(enc_cfg, seed=1).bind_names("enc"),
              "dec": md.build_model(dec_cfg, seed=2).bind_names("dec")}
    return models, {"enc": enc_cfg, "dec": dec_cfg}


def test_checkpoint_roundtrip_bit_identical(tmp_path):
    models, configs = small_bundle()
    path = tmp_path / "m.ckpt"
    md.save_checkpoint(path, models, configs, step=7)
    manifest, arrays = md.load_checkpoint(path)
    assert manifest["step"] == 7
    restored, rconfigs = md.restore_models(manifest, arrays)
    for key in models:
        for p, q in zip(models[key].parameters(), restored[key].parameters()):
            assert p.data.tobytes() == q.data.tobytes()
    code = np.random.default_rng(0).standard_normal((2, 32)).astype(np.float32)
    assert (md.decode(models["dec"], code) == md.decode(restored["dec"], code)).all()
    assert (md.count_parameters(models).to_dict() == md.count_parameters(restored).to_dict())


def test_checkpoint_tamper_and_mismatch_errors(tmp_path):
    models, configs = small_bundle()
    path = tmp_path / "m.ckpt"
    md.save_checkpoint(path, models, configs, step=0)
    blob = path.read_bytes()

    clipped = tmp_path / "clipped.ckpt"
    clipped.write_bytes(blob[:-12])
    with pytest.raises(TruncatedPayloadError):
        md.load_checkpoint(clipped)

    other_cfg = {"enc": md.ModelConfig("stnet", "encoder", **TINY),
                 "dec": md.ModelConfig("stnet", "decoder", **TINY)}
    with pytest.raises(CheckpointIncompatibleError):
        md.load_checkpoint(path, expect_configs=other_cfg)

    manifest, arrays = md.load_checkpoint(path)
    del arrays["enc/fc/w"]
    with pytest.raises(CheckpointIncompatibleError):
        md.load_models_into(models, arrays)
