import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import conv2d_naive
from rfmodrec.functional import ShapeError
from rfmodrec.gradcheck import grad_check
from rfmodrec import tensor as T
from rfmodrec.tensor import Tensor
from rfmodrec.transforms import (
    CtConfig,
    StftConfig,
    conv_transform,
    hann,
    init_ct_weights,
    resize_bilinear,
    stft,
    stft_image,
    stft_to_image,
)


class TestConvTransform:
    @pytest.mark.parametrize("n,filters", [(1024, 256), (128, 32)])
    def test_reference_geometries(self, n, filters):
        cfg = CtConfig.for_samples(n)
        assert cfg.filters == filters
        w, b = init_ct_weights(cfg, seed=0)
        x = Tensor(np.random.default_rng(0).standard_normal((1, 2, n)).astype(np.float32))
        assert conv_transform(x, cfg, w, b).shape == (1, 2, filters, filters)
        assert conv_transform(Tensor(x.data[0]), cfg, w, b).shape == (2, filters, filters)

    def test_zero_input_zero_output(self):
        cfg = CtConfig(filters=8)
        w, b = init_ct_weights(cfg, seed=3)
        out = conv_transform(Tensor(np.zeros((3, 2, 16), np.float32)), cfg, w, b)
        assert np.all(out.data == 0)

    def test_matches_loop_pipeline(self):
        rng = np.random.default_rng(1)
        cfg = CtConfig(filters=5)
        w, b = init_ct_weights(cfg, seed=2)
        b.data[:] = rng.standard_normal(5)
        x = rng.standard_normal((2, 24))
        conv = conv2d_naive(x[None], w.data.astype(float), b.data, 1, 1)  # (F, 2, N)
        swapped = conv.transpose(1, 0, 2)
        expect = swapped.reshape(2, 5, 6, 4).max(axis=-1)
        out = conv_transform(Tensor(x), cfg, w, b)
        np.testing.assert_allclose(out.data, expect, atol=1e-5)

    def test_indivisible_length_rejected(self):
        cfg = CtConfig(filters=4)
        w, b = init_ct_weights(cfg)
        with pytest.raises(ShapeError, match="divisible"):
            conv_transform(Tensor(np.zeros((1, 2, 30))), cfg, w, b)
        with pytest.raises(ValueError):
            CtConfig.for_samples(130)

    def test_wrong_weight_shape(self):
        cfg = CtConfig(filters=4)
        w, b = init_ct_weights(CtConfig(filters=3))
        with pytest.raises(ShapeError):
            conv_transform(Tensor(np.zeros((1, 2, 16))), cfg, w, None)

    def test_frozen_mode(self):
        w, b = init_ct_weights(CtConfig(filters=4, learnable=False))
        assert not w.requires_grad and not b.requires_grad

    def test_gradients(self):
        rng = np.random.default_rng(4)
        cfg = CtConfig(filters=3)
        w, b = init_ct_weights(cfg, seed=4, dtype=np.float64)
        b.data[:] = rng.standard_normal(3)
        x = Tensor(rng.standard_normal((2, 2, 8)), requires_grad=True)
        proj = rng.standard_normal((2, 2, 3, 2))

        def fwd():
            return T.weighted_sum(conv_transform(x, cfg, w, b), proj)

        res = grad_check(fwd, [x, w, b])
        assert res.passed(1e-4), res


class TestStft:
    def test_frame_count(self):
        cfg = StftConfig()
        assert cfg.hop == 16
        assert cfg.n_frames(1024) == 57
        assert stft(np.zeros(1024, complex), cfg).shape == (57, 128)

    def test_zero_input(self):
        assert np.all(stft(np.zeros(300, complex)) == 0)

    def test_too_short(self):
        with pytest.raises(ValueError):
            stft(np.zeros(100, complex))

    def test_bad_configs(self):
        for kw in [dict(overlap=128), dict(overlap=-1), dict(fft_len=64), dict(out_size=0), dict(channel_mode="x")]:
            with pytest.raises(ValueError):
                StftConfig(**kw)

    @pytest.mark.parametrize("k", range(128))
    def test_tone_argmax(self, k):
        n = np.arange(512)
        X = stft(np.exp(2j * np.pi * k * n / 128))
        assert np.all(np.argmax(np.abs(X), axis=1) == k)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_parseval_single_frame(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal(128) + 1j * rng.standard_normal(128)
        X = stft(x)
        assert X.shape == (1, 128)
        lhs = np.sum(np.abs(X[0]) ** 2)
        rhs = 128 * np.sum(np.abs(x * hann(128)) ** 2)
        assert abs(lhs - rhs) / rhs < 1e-6

    def test_cola_hop16(self):
        w = hann(128)
        total = np.zeros(128 + 16 * 40)
        for s in range(0, len(total) - 127, 16):
            total[s : s + 128] += w
        interior = total[128:-128]
        assert (interior.max() - interior.min()) / interior.mean() < 1e-9
        assert interior.mean() == pytest.approx(4.0)

    def test_symmetric_hann_definition(self):
        w = hann(128, symmetric=True)
        n = np.arange(128)
        np.testing.assert_allclose(w, 0.5 * (1 - np.cos(2 * np.pi * n / 127)))
        assert w[0] == 0 and w[-1] == pytest.approx(0)

    def test_accepts_iq_matrix(self):
        rng = np.random.default_rng(2)
        z = rng.standard_normal(256) + 1j * rng.standard_normal(256)
        iq = np.stack([z.real, z.imag])
        np.testing.assert_allclose(stft(iq), stft(z))


class TestImage:
    @pytest.mark.parametrize("w", [256, 28])
    def test_output_sizes(self, w):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(1024) + 1j * rng.standard_normal(1024)
        img = stft_image(x, StftConfig(out_size=w))
        assert img.shape == (2, w, w) and img.dtype == np.float32
        assert np.all(np.isfinite(img))

    def test_zero(self):
        assert np.all(stft_to_image(np.zeros((57, 128), complex)) == 0)

    def test_identity_packing(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
        img = stft_to_image(X, StftConfig(out_size=16))
        np.testing.assert_array_equal(img[0], X.T.real.astype(np.float32))
        np.testing.assert_array_equal(img[1], X.T.imag.astype(np.float32))

    def test_resize_corners_and_linear(self):
        plane = np.add.outer(np.arange(5.0), 10 * np.arange(3.0))
        out = resize_bilinear(plane, 9, 7)
        assert out[0, 0] == 0 and out[-1, -1] == plane[-1, -1]
        # bilinear resampling reproduces an affine plane exactly
        expect = np.add.outer(np.linspace(0, 4, 9), 10 * np.linspace(0, 2, 7))
        np.testing.assert_allclose(out, expect, atol=1e-12)

    def test_mag_phase_mode(self):
        X = np.full((4, 4), 1j)
        img = stft_to_image(X, StftConfig(out_size=4, channel_mode="mag_phase"))
        np.testing.assert_allclose(img[0], 1)
        np.testing.assert_allclose(img[1], np.pi / 2, rtol=1e-6)
