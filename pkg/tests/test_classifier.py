import numpy as np
import pytest

from oracles import sga_naive
from segimgnet.autograd import Tensor, shadow_precision
from segimgnet.autograd.gradcheck import check_gradients, relative_error
from segimgnet.classifier import (AblationFlags, Encoder, EncoderConfig, ModelConfig, SegImgNet, SGABlock,
                                  sga_gate)
from segimgnet.errors import ConfigurationError
from segimgnet.unet import SegOutput, UNetConfig


def randomize(module, rng, scale=0.3):
    for p in module.parameters():
        p.data = (p.data + rng.standard_normal(p.shape) * scale).astype(p.dtype)


def seg_like(rng, n=2, size=64, widths=(16, 32, 64, 128)):
    taps = [Tensor(rng.standard_normal((n, c, size >> (i + 1), size >> (i + 1)))) for i, c in enumerate(widths)]
    return SegOutput(Tensor(rng.random((n, 1, size, size))), taps)


@pytest.fixture(scope="module")
def full_model():
    return SegImgNet(seed=0)


class TestSGAGate:
    def test_zero_tap_gives_half(self, rng):
        block = SGABlock(4, 6, rng)
        block.conv.bias.data[:] = 0
        h = Tensor(rng.standard_normal((2, 6, 5, 5)))
        out = sga_gate(h, Tensor(np.zeros((2, 4, 5, 5))), block)
        np.testing.assert_array_equal(out.data, 0.5 * h.data)

    def test_zero_features_absorb(self, rng):
        block = SGABlock(4, 6, rng)
        out = sga_gate(Tensor(np.zeros((2, 6, 5, 5))), Tensor(rng.standard_normal((2, 4, 5, 5)) * 10), block)
        assert not out.data.any()

    def test_matches_naive_oracle(self, rng):
        for _ in range(10):
            block = SGABlock(8, 8, rng)
            block.conv.bias.data[:] = rng.standard_normal(8)
            hl = rng.standard_normal((1, 8, 8, 8)).astype(np.float32)
            hs = rng.standard_normal((1, 8, 8, 8)).astype(np.float32)
            out = sga_gate(Tensor(hl), Tensor(hs), block).data
            assert relative_error(out, sga_naive(hl, hs, block.conv.weight.data, block.conv.bias.data)) < 1e-5

    def test_gate_range_and_magnitude(self, rng):
        block = SGABlock(4, 6, rng)
        h = Tensor(rng.standard_normal((2, 6, 5, 5)) * 5)
        tap = Tensor(rng.standard_normal((2, 4, 5, 5)) * 5)
        att = block.attention(tap, (5, 5)).data
        assert ((att > 0) & (att < 1)).all()
        assert (np.abs(sga_gate(h, tap, block).data) <= np.abs(h.data)).all()

    def test_resizes_tap(self, rng):
        block = SGABlock(4, 6, rng)
        out = sga_gate(Tensor(np.ones((1, 6, 8, 8))), Tensor(rng.standard_normal((1, 4, 16, 16))), block)
        assert out.shape == (1, 6, 8, 8)

    def test_gradient_through_both_inputs(self, rng):
        with shadow_precision():
            block = SGABlock(3, 2, rng).astype(np.float64)
            hl = Tensor(rng.standard_normal((1, 2, 4, 4)), requires_grad=True)
            hs = Tensor(rng.standard_normal((1, 3, 4, 4)), requires_grad=True)
            f = lambda: (sga_gate(hl, hs, block) * sga_gate(hl, hs, block)).sum()
            assert check_gradients(f, [hl, hs, block.conv.weight, block.conv.bias]) < 1e-6

    @pytest.mark.parametrize("tap_shape", [(2, 5, 4, 4), (3, 4, 4, 4)])
    def test_mismatch(self, rng, tap_shape):
        with pytest.raises(ConfigurationError):
            sga_gate(Tensor(np.zeros((2, 6, 4, 4))), Tensor(np.zeros(tap_shape)), SGABlock(4, 6, rng))


class TestEncoder:
    def test_embedding_shape(self, rng):
        enc = Encoder(1, EncoderConfig(), rng)
        emb, maps = enc(Tensor(rng.random((2, 1, 64, 64))))
        assert emb.shape == (2, 128)
        assert [m.shape for m in maps] == [(2, 16, 32, 32), (2, 32, 16, 16), (2, 64, 8, 8), (2, 128, 4, 4)]

    def test_zero_taps_halve_every_stage(self, rng):
        enc = Encoder(1, EncoderConfig(), rng)
        gates = [SGABlock(c, w, rng) for c, w in zip((16, 32, 64, 128), (16, 32, 64, 128))]
        for g in gates:
            g.conv.bias.data[:] = 0
        x = Tensor(rng.random((2, 1, 64, 64)))
        taps = [Tensor(np.zeros((2, c, 64 >> (i + 1), 64 >> (i + 1)))) for i, c in enumerate((16, 32, 64, 128))]
        _, plain = enc(x)
        _, gated = enc(x, taps, gates)
        for a, b in zip(plain, gated):
            # the next stage starts with a layernorm, which undoes the 0.5 up to its epsilon
            np.testing.assert_allclose(b.data, 0.5 * a.data, rtol=1e-3, atol=1e-5)

    def test_tap_count_mismatch(self, rng):
        enc = Encoder(1, EncoderConfig(), rng)
        with pytest.raises(ConfigurationError, match="4 stages"):
            enc(Tensor(np.zeros((1, 1, 64, 64))), [Tensor(np.zeros((1, 16, 32, 32)))], [SGABlock(16, 16, rng)])

    @pytest.mark.parametrize("kw", [{"widths": (16, 16, 32, 64)}, {"depths": (1, 1)}, {"kernel": 4}])
    def test_bad_config(self, kw):
        with pytest.raises(ConfigurationError):
            EncoderConfig(**kw)

    @pytest.mark.parametrize("use_sga", [True, False])
    def test_tap_gradient_probe(self, rng, use_sga):
        model = SegImgNet(flags=AblationFlags(use_sga=use_sga), seed=1)
        randomize(model, rng)  # a fresh final layernorm makes sum(embedding) constant
        seg = seg_like(rng)
        tap = seg.taps[2]
        tap.requires_grad = True
        taps = seg.taps if use_sga else None
        emb, _ = model.enc_seg(seg.seg_image, taps, model.sga if use_sga else None)
        emb.sum().backward()
        grad = np.zeros(tap.shape) if tap.grad is None else tap.grad
        assert (np.abs(grad).max() > 1e-6) == use_sga


class TestModel:
    def test_rows_are_distributions(self, full_model, rng):
        x = Tensor(rng.random((3, 3, 64, 64)))
        p = full_model(x).data
        assert p.shape == (3, 2)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)
        assert ((p > 0) & (p < 1)).all()

    def test_zero_head_gives_uniform(self, rng):
        model = SegImgNet(seed=2)
        model.head.fc2.weight.data[:] = 0
        model.head.fc2.bias.data[:] = 0
        np.testing.assert_array_equal(model(Tensor(rng.random((2, 3, 64, 64)))).data, 0.5)

    def test_parameter_prefixes(self, full_model):
        prefixes = {n.split(".")[0] for n, _ in full_model.named_parameters()}
        assert prefixes == {"seg", "enc_seg", "enc_raw", "sga", "head"}
        assert all(not n.startswith("seg.") for n, _ in full_model.trainable_parameters())

    @pytest.mark.parametrize("name,absent", [("no-sga", "sga"), ("no-raw", "enc_raw"), ("no-seg", "enc_seg")])
    def test_disabled_parts_have_no_parameters(self, name, absent):
        model = SegImgNet(flags=AblationFlags.from_name(name))
        assert not any(n.startswith(absent + ".") for n, _ in model.named_parameters())

    def test_ablations_share_surviving_initial_weights(self, full_model):
        other = SegImgNet(flags=AblationFlags.from_name("no-sga"), seed=0)
        full = full_model.state_dict()
        for k, v in other.state_dict().items():
            if not k.startswith("head."):
                np.testing.assert_array_equal(v, full[k])

    def test_both_branches_disabled(self):
        with pytest.raises(ConfigurationError):
            AblationFlags(use_seg_branch=False, use_raw_branch=False)

    def test_unknown_variant(self):
        with pytest.raises(ConfigurationError):
            AblationFlags.from_name("half")

    def test_stage_count_must_match_levels(self):
        with pytest.raises(ConfigurationError, match="taps"):
            SegImgNet(ModelConfig(unet=UNetConfig(levels=3)))

    def test_no_sga_ignores_taps(self, rng):
        model = SegImgNet(flags=AblationFlags.from_name("no-sga"), seed=3)
        x = Tensor(rng.random((2, 3, 64, 64)))
        seg = model.segment(x)
        a = model.classify(x, seg).data
        noisy = SegOutput(seg.seg_image, [Tensor(t.data + rng.standard_normal(t.shape)) for t in seg.taps])
        np.testing.assert_array_equal(model.classify(x, noisy).data, a)

    def test_no_raw_ignores_pixels(self, rng):
        model = SegImgNet(flags=AblationFlags.from_name("no-raw"), seed=3)
        x = Tensor(rng.random((2, 3, 64, 64)))
        seg = model.segment(x)
        a = model.classify(x, seg).data
        np.testing.assert_array_equal(model.classify(Tensor(rng.random((2, 3, 64, 64))), seg).data, a)

    def test_no_seg_ignores_segmentation(self, rng):
        model = SegImgNet(flags=AblationFlags.from_name("no-seg"), seed=3)
        x = Tensor(rng.random((2, 3, 64, 64)))
        a = model.classify(x, None).data
        np.testing.assert_array_equal(model.classify(x, seg_like(rng)).data, a)

    def test_batch_order_equivariance(self, full_model, rng):
        x = rng.random((4, 3, 64, 64)).astype(np.float32)
        perm = np.array([3, 1, 0, 2])
        np.testing.assert_allclose(full_model(Tensor(x[perm])).data, full_model(Tensor(x)).data[perm], atol=1e-6)

    def test_binarized_input(self, rng):
        model = SegImgNet(ModelConfig(binarize_seg=True))
        seg = seg_like(rng)
        assert set(np.unique(model.classifier_input(seg).data)) <= {0.0, 1.0}

    def test_frozen_segmenter_receives_no_gradient(self, rng):
        model = SegImgNet(seed=4)
        p = model(Tensor(rng.random((2, 3, 64, 64))))
        p.sum().backward()
        assert all(q.grad is None for n, q in model.named_parameters() if n.startswith("seg."))
        assert all(q.grad is not None for _, q in model.trainable_parameters())

    def test_config_round_trip(self):
        cfg = ModelConfig(encoder=EncoderConfig(depths=(1, 2, 1, 1)), binarize_seg=True)
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg
