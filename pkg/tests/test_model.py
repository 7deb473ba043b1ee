import csv
import io
import json
import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from steinformer.errors import ConfigError, DataError, UsageError
from steinformer.interactors import DSConv
from steinformer.model import (
    MAGIC,
    LossConfig,
    ModelConfig,
    PatchEmbed,
    STeInFormer,
    count_params,
    dice_loss,
    estimate_flops,
    focal_loss,
    hybrid_loss,
    layer_ledger,
    load_weights,
    mlp_decode,
    model_forward,
    patch_embed,
    read_sidecar,
    read_weights,
    save_weights,
    write_ledger_csv,
)
from steinformer.tensor_core import Conv2d, Tensor, gradcheck, ops
from steinformer.tensor_core import nn as tnn

TINY = dict(
    stage_channels=(4, 4, 8, 8), mixer_heads=2, mixer_p=3, mixer_expansion=1, decoder_channels=4, image_size=(32, 32)
)


def tiny_cfg(**kw):
    return ModelConfig(**{**TINY, **kw})


def images(rng, n, size, dtype=np.float64):
    return Tensor(rng.random((n, 3, size, size)).astype(dtype)), Tensor(rng.random((n, 3, size, size)).astype(dtype))


def logits_for_prob(p):
    """Two-class logits whose softmax gives changed-class probability ``p``."""
    p = np.asarray(p, dtype=np.float64)
    z = np.log(p) - np.log1p(-p)
    return Tensor(np.stack([np.zeros_like(z), z], axis=1))


class TestConfig:
    def test_defaults(self):
        cfg = ModelConfig()
        assert cfg.stage_channels == (32, 48, 64, 96)
        assert (cfg.blocks_per_level, cfg.mlp_ratio, cfg.mixer_heads, cfg.mixer_p) == (1, 2, 8, 7)
        assert cfg.strategy == "pretrained_priors" and cfg.num_classes == 2

    @pytest.mark.parametrize("size", [(48, 64), (64, 100), (0, 32)])
    def test_size_must_divide_by_32(self, size):
        with pytest.raises(ConfigError):
            ModelConfig(image_size=size)

    def test_four_stages(self):
        with pytest.raises(ConfigError, match="4 entries"):
            ModelConfig(stage_channels=(32, 48, 64))

    def test_heads_divide_channels(self):
        with pytest.raises(ConfigError, match="divisible"):
            ModelConfig(mixer_heads=5)
        ModelConfig(mixer_heads=5, mixer_kind="conv")

    def test_residual_init_scale(self):
        with pytest.raises(ConfigError, match="residual_init_scale"):
            ModelConfig(residual_init_scale=0.0)
        size = dict(image_size=(32, 32), stage_channels=(8, 8, 8, 8))
        a = dict(STeInFormer(ModelConfig(**size, residual_init_scale=1.0)).named_parameters())
        b = dict(STeInFormer(ModelConfig(**size, residual_init_scale=0.25)).named_parameters())
        for name, p in a.items():
            ratio = 0.25 if name.endswith(("mixer.proj_out.weight", "mlp.fc2.weight")) else 1.0
            np.testing.assert_allclose(b[name].data, ratio * p.data, rtol=1e-6)

    def test_loss_config_invariants(self):
        for bad in (dict(lambda_dice=-1), dict(gamma=-0.5), dict(alpha=0), dict(alpha=1.5), dict(eps=0)):
            with pytest.raises(ConfigError):
                LossConfig(**bad)


class TestPatchEmbed:
    @pytest.mark.parametrize("size", [256, 64])
    def test_shape(self, rng, size):
        pe = PatchEmbed(rng=rng)
        x = Tensor(rng.random((1, 3, size, size)).astype(np.float32))
        assert patch_embed(x, pe).shape == (1, 32, size // 2, size // 2)

    def test_odd_rejected(self, rng):
        with pytest.raises(ConfigError, match="even"):
            patch_embed(Tensor(np.zeros((1, 3, 7, 8))), PatchEmbed(rng=rng))

    @pytest.mark.parametrize("norm", ["group", "batch"])
    def test_gradcheck(self, rng, norm):
        pe = PatchEmbed(8, norm=norm, rng=rng)
        x = Tensor(rng.random((1, 3, 8, 8)), requires_grad=True)
        proj = Tensor(rng.normal(size=(1, 8, 4, 4)))
        res = gradcheck(lambda: ops.sum_all(ops.mul(patch_embed(x, pe), proj)), [x] + pe.parameters())
        assert res.ok, res


class TestForward:
    def test_batch4_256(self):
        rng = np.random.default_rng(0)
        model = STeInFormer(ModelConfig()).to_dtype(np.float32).eval()
        t1, t2 = images(rng, 4, 256, np.float32)
        from steinformer.tensor_core import no_grad

        with no_grad():
            logits, feats = model_forward(t1, t2, model)
        assert logits.shape == (4, 2, 256, 256)
        assert [f[0].shape for f in feats] == [(4, 32, 128, 128), (4, 48, 64, 64), (4, 64, 32, 32), (4, 96, 16, 16)]
        assert all(g1.shape == g2.shape for g1, g2 in feats)
        assert np.isfinite(logits.data).all()

    def test_deterministic(self, rng):
        t1, t2 = images(rng, 2, 64, np.float32)
        a = STeInFormer(tiny_cfg(image_size=(64, 64)))(t1, t2)[0].data
        b = STeInFormer(tiny_cfg(image_size=(64, 64)))(t1, t2)[0].data
        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("strategy", ["pretrained_priors", "random_selection", "dynamic_assignment"])
    def test_finite_at_init(self, rng, strategy):
        model = STeInFormer(tiny_cfg(strategy=strategy, image_size=(64, 64)))
        t1, t2 = images(rng, 2, 64)
        assert np.isfinite(model(t1, t2)[0].data).all()

    def test_equal_inputs_zero_difference_every_stage(self, rng):
        model = STeInFormer(ModelConfig(image_size=(64, 64)))
        for stage in model.stages:
            for p in stage.cti.fuse.parameters():
                p.data[...] = 0
        t1, _ = images(rng, 1, 64)
        model(t1, Tensor(t1.data.copy()))
        for stage in model.stages:
            assert stage.bottom_shapes[0] == (1, 96, 2, 2)
            assert np.all(stage.cti.last["rc"] == 0)
            np.testing.assert_array_equal(stage.cti.last["w1"], 0.5)

    def test_swap_equivariant_features(self, rng):
        model = STeInFormer(tiny_cfg(image_size=(64, 64)))
        t1, t2 = images(rng, 1, 64)
        _, fa = model(t1, t2)
        _, fb = model(t2, t1)
        for (a1, a2), (b1, b2) in zip(fa, fb):
            np.testing.assert_array_equal(a1.data, b2.data)
            np.testing.assert_array_equal(a2.data, b1.data)

    def test_shape_errors(self, rng):
        model = STeInFormer(tiny_cfg())
        with pytest.raises(ConfigError):
            model(*images(rng, 1, 48))
        a, _ = images(rng, 1, 32)
        b, _ = images(rng, 1, 64)
        with pytest.raises(ConfigError):
            model(a, b)


class TestDecoder:
    def feats(self, rng, n=1, size=64, sc=(32, 48, 64, 96)):
        return [
            (Tensor(rng.normal(size=(n, c, size >> s, size >> s))), Tensor(rng.normal(size=(n, c, size >> s, size >> s))))
            for s, c in enumerate(sc, start=1)
        ]

    def test_channel_math(self):
        model = STeInFormer(ModelConfig(image_size=(64, 64)))
        dec = model.decoder
        assert [(p.in_channels, p.out_channels) for p in dec.proj] == [(64, 32), (96, 32), (128, 32), (192, 32)]
        assert (dec.classifier.in_channels, dec.classifier.out_channels) == (128, 2)

    def test_output_size(self, rng):
        model = STeInFormer(ModelConfig(image_size=(64, 64)))
        assert mlp_decode(self.feats(rng), model.decoder).shape == (1, 2, 64, 64)

    def test_zero_features_give_bias(self, rng):
        dec = STeInFormer(ModelConfig(image_size=(64, 64))).decoder
        dec.classifier.bias.data[...] = [0.3, -1.25]
        for p in dec.proj:
            p.bias.data[...] = 0
        zeros = [(Tensor(np.zeros_like(a.data)), Tensor(np.zeros_like(b.data))) for a, b in self.feats(rng)]
        out = mlp_decode(zeros, dec).data
        np.testing.assert_allclose(out[0, 0], 0.3, atol=1e-15)
        np.testing.assert_allclose(out[0, 1], -1.25, atol=1e-15)

    @pytest.mark.parametrize("act", ["none", "gelu"])
    def test_cross_date_interaction(self, rng, act):
        # a linear head is additive in the two dates, so the mixed second difference vanishes
        dec = STeInFormer(ModelConfig(image_size=(64, 64), decoder_act=act)).decoder
        f, g = self.feats(rng), self.feats(rng)

        def logit(i, j):
            pairs = [(a[0] if i else b[0], a[1] if j else b[1]) for a, b in zip(f, g)]
            return mlp_decode(pairs, dec).data

        mixed = logit(0, 0) - logit(0, 1) - logit(1, 0) + logit(1, 1)
        if act == "none":
            np.testing.assert_allclose(mixed, 0, atol=1e-12)
        else:
            assert np.abs(mixed).max() > 1e-2

    def test_bad_activation(self):
        with pytest.raises(ConfigError):
            ModelConfig(decoder_act="relu6")

    def test_resize_then_project_equals_project_then_resize(self, rng):
        conv = Conv2d(6, 4, 1, rng=rng)
        conv.bias.data[...] = rng.normal(size=4)
        x = Tensor(rng.normal(size=(2, 6, 4, 4)))
        a = conv(ops.bilinear_resize(x, 16, 16)).data
        b = ops.bilinear_resize(conv(x), 16, 16).data
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)

    def test_missing_stage(self, rng):
        dec = STeInFormer(ModelConfig(image_size=(64, 64))).decoder
        with pytest.raises(UsageError):
            mlp_decode(self.feats(rng)[:3], dec)


class TestLosses:
    def test_focal_single_pixel(self):
        loss = focal_loss(logits_for_prob(np.full((1, 1, 1), 0.7)), np.ones((1, 1, 1)))
        assert float(loss.data) == pytest.approx(0.25 * 0.3**2 * -math.log(0.7), abs=1e-12)
        assert float(loss.data) == pytest.approx(0.008025, abs=5e-7)

    def test_focal_confident_is_zero(self, rng):
        y = (rng.random((2, 4, 4)) > 0.5).astype(float)
        logits = Tensor(np.stack([(1 - y) * 40, y * 40], axis=1))
        assert float(focal_loss(logits, y).data) < 1e-12

    def test_focal_degenerates_to_bce(self, rng):
        p = rng.uniform(0.05, 0.95, size=(3, 5, 5))
        y = (rng.random((3, 5, 5)) > 0.5).astype(float)
        bce = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
        got = float(focal_loss(logits_for_prob(p), y, LossConfig(alpha=1.0, gamma=0.0)).data)
        assert abs(got - bce) < 1e-12

    def test_dice_hand_example(self):
        y = np.zeros((1, 4, 4))
        y[0, 0, :4] = 1
        got = float(dice_loss(logits_for_prob(np.full((1, 4, 4), 0.5)), y).data)
        assert abs(got - (1 - 5 / 13)) < 1e-9

    def test_dice_perfect_match(self, rng):
        y = (rng.random((1, 64, 64)) > 0.5).astype(float)
        logits = Tensor(np.stack([(1 - y) * 40, y * 40], axis=1))
        assert float(dice_loss(logits, y).data) <= 1e-3

    def test_dice_complement(self):
        y = np.zeros((1, 64, 64))
        y[0, :32] = 1
        logits = Tensor(np.stack([y * 40, (1 - y) * 40], axis=1))
        hw = 64 * 64
        assert float(dice_loss(logits, y).data) == pytest.approx(1 - 1 / (hw / 2 + hw / 2 + 1), abs=1e-9)

    @pytest.mark.parametrize("lf,ld", [(1.0, 1.0), (2.0, 1.0), (0.0, 0.5)])
    def test_hybrid_weighting(self, rng, lf, ld):
        logits = Tensor(rng.normal(size=(2, 2, 6, 6)))
        y = (rng.random((2, 6, 6)) > 0.6).astype(float)
        cfg = LossConfig(lambda_focal=lf, lambda_dice=ld)
        expect = lf * float(focal_loss(logits, y, cfg).data) + ld * float(dice_loss(logits, y, cfg).data)
        assert abs(float(hybrid_loss(logits, y, cfg).data) - expect) < 1e-12

    def test_hybrid_zero(self):
        y = np.zeros((1, 8, 8))
        y[0, 2:5, 2:5] = 1
        logits = Tensor(np.stack([(1 - y) * 60, y * 60], axis=1))
        # eps smoothing keeps dice a hair above zero
        assert float(hybrid_loss(logits, y).data) < 1e-12 + 1e-14

    @pytest.mark.parametrize("fn", [focal_loss, dice_loss, hybrid_loss])
    def test_nonbinary_labels(self, fn):
        with pytest.raises(DataError, match="binary"):
            fn(Tensor(np.zeros((1, 2, 2, 2))), np.array([[[0, 1], [2, 0]]]))

    def test_label_shape_mismatch(self):
        with pytest.raises(ConfigError):
            focal_loss(Tensor(np.zeros((1, 2, 2, 2))), np.zeros((1, 3, 3)))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.sampled_from([focal_loss, dice_loss]))
    def test_nonnegative_and_descends(self, seed, fn):
        rng = np.random.default_rng(seed)
        logits = Tensor(rng.normal(scale=2, size=(2, 2, 5, 5)), requires_grad=True)
        y = (rng.random((2, 5, 5)) > 0.5).astype(float)
        loss = fn(logits, y)
        assert float(loss.data) >= 0
        loss.backward()
        g = logits.grad
        if np.linalg.norm(g) < 1e-10:
            return
        step = Tensor(logits.data - 1e-3 * g / np.linalg.norm(g))
        assert float(fn(step, y).data) < float(loss.data)

    def test_gradcheck_components(self, rng):
        logits = Tensor(rng.normal(size=(2, 2, 4, 4)), requires_grad=True)
        y = (rng.random((2, 4, 4)) > 0.5).astype(float)
        for fn in (focal_loss, dice_loss, hybrid_loss):
            res = gradcheck(lambda: fn(logits, y, LossConfig(lambda_focal=1.5, gamma=2.5)), [logits])
            assert res.ok, (fn.__name__, res)


def test_hybrid_gradcheck_through_tiny_model():
    rng = np.random.default_rng(5)
    model = STeInFormer(tiny_cfg())
    for p in model.parameters():
        p.data += rng.normal(scale=0.1, size=p.shape)
    t1, t2 = images(rng, 1, 32)
    y = (rng.random((1, 32, 32)) > 0.7).astype(float)
    params = model.parameters()
    res = gradcheck(lambda: hybrid_loss(model(t1, t2)[0], y), params, max_elements=3, rng=np.random.default_rng(1))
    assert res.ok, res
    assert res.checked >= len(params)


class TestAccounting:
    def test_lone_conv_params(self):
        m = Conv2d(3, 8, 1)
        assert m.num_parameters() == 32

    def test_depthwise_separable_params(self):
        assert DSConv(3, 3).num_parameters() == 42

    def test_conv_flops_formula(self):
        assert 2 * Conv2d(2, 4, 1).macs(8, 8) == 1024

    def test_default_in_band(self):
        p = count_params()
        f = estimate_flops(ModelConfig(), 256, 256)
        assert abs(p / 1.26e6 - 1) <= 0.20
        assert abs(f / 9.42e9 - 1) <= 0.25

    def test_params_invariant_to_size(self):
        assert count_params(ModelConfig(image_size=(64, 64))) == count_params(ModelConfig(image_size=(512, 256)))

    def test_flops_scale_4x(self):
        cfg = ModelConfig()
        assert estimate_flops(cfg, 512, 512) == 4 * estimate_flops(cfg, 256, 256)

    def test_ledger_sums(self):
        model = STeInFormer()
        rows = layer_ledger(model, 256, 256)
        assert sum(r.params for r in rows) == model.num_parameters() == count_params()
        assert sum(r.flops for r in rows) == estimate_flops()
        assert len({r.name for r in rows}) == len(rows)

    @pytest.mark.parametrize(
        "kw",
        [
            {},
            {"strategy": "dynamic_assignment"},
            {"mixer_kind": "conv"},
            {"mixer_heads": 16, "stage_channels": (32, 48, 64, 96)},
            {"blocks_per_level": 2},
        ],
    )
    def test_ledger_matches_traced_forward(self, rng, kw):
        cfg = ModelConfig(image_size=(64, 64), **kw)
        model = STeInFormer(cfg)
        traced = []
        obs = lambda m, i, o: traced.append(2 * m.macs(o[2], o[3]))  # noqa: E731
        tnn._CONV_OBSERVERS.append(obs)
        try:
            from steinformer.tensor_core import no_grad

            with no_grad():
                model(*images(rng, 1, 64, np.float32))
        finally:
            tnn._CONV_OBSERVERS.remove(obs)
        assert sum(traced) == sum(r.flops for r in layer_ledger(model, 64, 64))

    def test_csv(self):
        rows = layer_ledger(STeInFormer(tiny_cfg()), 32, 32)
        text = write_ledger_csv(rows)
        parsed = list(csv.DictReader(io.StringIO(text)))
        assert list(parsed[0]) == ["name", "params", "flops"]
        assert sum(int(r["flops"]) for r in parsed) == sum(r.flops for r in rows)


class TestCheckpoint:
    def test_round_trip(self, tmp_path, rng):
        model = STeInFormer(tiny_cfg(norm="batch"))
        for _, m in model.named_modules():
            for name in list(m._buffers):
                getattr(m, name)[...] = rng.random(getattr(m, name).shape)
        path = save_weights(model, tmp_path / "w.stein", {"note": "x"})
        other = STeInFormer(tiny_cfg(norm="batch", init_seed=9))
        load_weights(other, path)
        for (k, a), (_, b) in zip(model.state_dict().items(), other.state_dict().items()):
            np.testing.assert_array_equal(np.float32(a), b, err_msg=k)
        assert read_sidecar(path) == {"note": "x"}

    def test_layout(self, tmp_path):
        model = STeInFormer(tiny_cfg())
        path = save_weights(model, tmp_path / "w.stein")
        raw = path.read_bytes()
        assert raw[:6] == MAGIC
        (n,) = struct.unpack("<I", raw[6:10])
        manifest = json.loads(raw[10 : 10 + n].decode("utf-8"))
        payload = raw[10 + n :]
        state = model.state_dict()
        assert [e["name"] for e in manifest] == list(state)
        assert len(payload) == 4 * sum(v.size for v in state.values())
        first = manifest[0]
        arr = np.frombuffer(payload, "<f4", count=int(np.prod(first["shape"])), offset=first["offset"])
        np.testing.assert_array_equal(arr, np.float32(state[first["name"]]).ravel())

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "x.stein"
        p.write_bytes(b"NOPE00" + b"\0" * 10)
        with pytest.raises(DataError, match="STEIN1"):
            read_weights(p)

    def test_truncated(self, tmp_path):
        path = save_weights(STeInFormer(tiny_cfg()), tmp_path / "w.stein")
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(DataError, match="past end"):
            read_weights(path)

    def test_wrong_architecture(self, tmp_path):
        path = save_weights(STeInFormer(tiny_cfg()), tmp_path / "w.stein")
        with pytest.raises(DataError):
            load_weights(STeInFormer(tiny_cfg(mixer_kind="conv")), path)
