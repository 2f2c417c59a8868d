"""VAE architecture tests: deconvolution math, analog decoder twin."""

import numpy as np
import pytest

from memdiff import device, latent
from memdiff.device import DeviceConfig
from memdiff.latent import (LatentSpec, VaeDecoder, VaeEncoder, conv2d,
                            conv2d_backward, deconv2d, deconv2d_backward,
                            deconv_out_size, unroll_deconv_matrix)


def noiseless_programmer(g_targets, rng, config):
    return device.exact_array(g_targets, config)


class TestLatentSpec:
    def test_default_geometry(self):
        spec = LatentSpec()
        c = spec.centers
        assert c.shape == (3, 2)
        assert np.allclose(np.linalg.norm(c, axis=1), 1.0)
        # three classes on the unit circle separated by sqrt(3)
        d01 = np.linalg.norm(c[0] - c[1])
        assert d01 == pytest.approx(np.sqrt(3.0))

    def test_too_close_centers_rejected(self):
        with pytest.raises(ValueError):
            LatentSpec(radius=0.2).centers


class TestDeconvShapes:
    def test_shape_formula(self):
        # stride 2, 3x3 kernel, 5x5 input, pad 0 -> 11x11
        assert deconv_out_size(5, 3, 2, 0) == 11

    def test_delta_input_reproduces_kernel(self):
        # 1x1 input, 3x3 kernel, stride 1, pad 0 -> scaled kernel
        w = np.random.default_rng(0).normal(size=(1, 1, 3, 3))
        x = np.full((1, 1, 1, 1), 2.5)
        y = deconv2d(x, w, stride=1, pad=0)
        assert np.allclose(y[0, 0], 2.5 * w[0, 0])

    def test_empty_output_rejected(self):
        w = np.zeros((1, 1, 2, 2))
        with pytest.raises(ValueError):
            deconv2d(np.zeros((1, 1, 1, 1)), w, stride=1, pad=3)


class TestAdjointIdentity:
    def test_conv_deconv_adjoint(self):
        # <conv2d(a, w), x> == <a, deconv2d(x, w)> to 1e-10
        rng = np.random.default_rng(1)
        # input sizes chosen so (out-1)*stride - 2*pad + k recovers them
        for stride, pad, n in ((1, 0, 8), (2, 0, 9), (2, 1, 9)):
            w = rng.normal(size=(3, 2, 3, 3))
            a = rng.normal(size=(2, 2, n, n))
            out_n = latent.conv_out_size(n, 3, stride, pad)
            x = rng.normal(size=(2, 3, out_n, out_n))
            lhs = np.sum(conv2d(a, w, stride, pad) * x)
            rhs = np.sum(a * deconv2d(x, w, stride, pad))
            assert abs(lhs - rhs) < 1e-10

    def test_conv_backward_matches_fd(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(1, 2, 6, 6))
        w = rng.normal(size=(3, 2, 3, 3))
        dy = rng.normal(size=conv2d(x, w, 2, 1).shape)

        dx, dw = conv2d_backward(x, w, dy, 2, 1)
        h = 1e-6
        for arr, grad in ((x, dx), (w, dw)):
            for flat in rng.choice(arr.size, 5, replace=False):
                idx = np.unravel_index(flat, arr.shape)
                orig = arr[idx]
                arr[idx] = orig + h
                fp = np.sum(conv2d(x, w, 2, 1) * dy)
                arr[idx] = orig - h
                fm = np.sum(conv2d(x, w, 2, 1) * dy)
                arr[idx] = orig
                assert grad[idx] == pytest.approx((fp - fm) / (2 * h),
                                                  rel=1e-4, abs=1e-8)

    def test_deconv_backward_matches_fd(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(1, 3, 4, 4))
        w = rng.normal(size=(3, 2, 3, 3))
        dy = rng.normal(size=deconv2d(x, w, 2, 1).shape)
        dx, dw = deconv2d_backward(x, w, dy, 2, 1)
        h = 1e-6
        for arr, grad in ((x, dx), (w, dw)):
            for flat in rng.choice(arr.size, 5, replace=False):
                idx = np.unravel_index(flat, arr.shape)
                orig = arr[idx]
                arr[idx] = orig + h
                fp = np.sum(deconv2d(x, w, 2, 1) * dy)
                arr[idx] = orig - h
                fm = np.sum(deconv2d(x, w, 2, 1) * dy)
                arr[idx] = orig
                assert grad[idx] == pytest.approx((fp - fm) / (2 * h),
                                                  rel=1e-4, abs=1e-8)


class TestUnrolledMatrix:
    def test_matrix_equals_direct_deconv(self):
        rng = np.random.default_rng(4)
        w = rng.normal(size=(4, 1, 4, 4))
        M = unroll_deconv_matrix(w, stride=2, pad=2, in_shape=(7, 7))
        for _ in range(3):
            x = rng.normal(size=(1, 4, 7, 7))
            direct = deconv2d(x, w, stride=2, pad=2).ravel()
            assert np.max(np.abs(M @ x.ravel() - direct)) < 1e-10


class TestEncoder:
    def test_shapes_and_determinism(self):
        enc = VaeEncoder(seed=5)
        x = np.random.default_rng(6).uniform(-1, 1, (4, 1, 12, 12))
        mu, logvar, _ = enc.forward(x)
        assert mu.shape == (4, 2) and logvar.shape == (4, 2)
        mu2, logvar2, _ = enc.forward(x)
        assert np.array_equal(mu, mu2)  # no sampling inside encode

    def test_sigma_positive(self):
        enc = VaeEncoder(seed=7)
        img = np.random.default_rng(8).uniform(-1, 1, (12, 12))
        mu, sigma = latent.encode(enc, img)
        assert np.all(sigma > 0) and np.all(np.isfinite(sigma))

    def test_shape_guard(self):
        enc = VaeEncoder()
        with pytest.raises(ValueError):
            latent.encode(enc, np.zeros((14, 14)))


class TestReparameterize:
    def test_zero_sigma_is_mean(self):
        mu = np.array([0.4, -0.9])
        z = latent.reparameterize(mu, np.zeros(2), np.random.default_rng(9))
        assert np.array_equal(z, mu)

    def test_sample_mean(self):
        rng = np.random.default_rng(10)
        mu = np.array([1.0, -2.0])
        zs = np.array([latent.reparameterize(mu, np.ones(2), rng)
                       for _ in range(10000)])
        assert np.max(np.abs(zs.mean(0) - mu)) < 4.0 / np.sqrt(1e4)

    def test_seeded_reproducible(self):
        mu, sig = np.array([0.1, 0.2]), np.array([0.5, 0.5])
        a = latent.reparameterize(mu, sig, np.random.default_rng(11))
        b = latent.reparameterize(mu, sig, np.random.default_rng(11))
        assert np.array_equal(a, b)


class TestDecode:
    def test_output_shape_and_range(self):
        dec = VaeDecoder(seed=12)
        img = latent.decode(dec, np.zeros(2))
        assert img.shape == (12, 12)
        assert np.all(img >= -1.0) and np.all(img <= 1.0)

    def test_non_finite_latent_rejected(self):
        dec = VaeDecoder()
        with pytest.raises(ValueError):
            latent.decode(dec, np.array([np.nan, 0.0]))

    def test_digital_analog_twin(self):
        # noiseless analog decode equals digital decode to 1e-6
        dec = VaeDecoder(seed=13)
        # keep the decoder matrices inside the representable box, as
        # training does, so deployment is clip-free
        for key in ("lw", "d1w", "d2w"):
            W = dec.params[key]
            np.clip(W, -0.6 * float(W.max()), None, out=W)
        cfg = DeviceConfig().noiseless()
        adec = latent.deploy_decoder(dec, cfg, np.random.default_rng(14),
                                     programmer=noiseless_programmer)
        rng = np.random.default_rng(15)
        for _ in range(5):
            z = rng.uniform(-1.0, 1.5, 2)
            dig = latent.decode(dec, z)
            ana = latent.decode(dec, z, mode="analog", rng=rng,
                                analog_decoder=adec)
            assert np.max(np.abs(dig - ana)) < 1e-6

    def test_analog_mode_needs_decoder_and_rng(self):
        dec = VaeDecoder()
        with pytest.raises(ValueError):
            latent.decode(dec, np.zeros(2), mode="analog")

    def test_unknown_mode_rejected(self):
        dec = VaeDecoder()
        with pytest.raises(ValueError):
            latent.decode(dec, np.zeros(2), mode="quantum")


class TestPersistence:
    def test_save_load_round_trip(self, tmp_path):
        enc, dec = VaeEncoder(seed=16), VaeDecoder(seed=17)
        spec = LatentSpec()
        path = tmp_path / "vae.json"
        latent.save_vae(enc, dec, path, spec=spec)
        enc2, dec2, spec2 = latent.load_vae(path)
        x = np.random.default_rng(18).uniform(-1, 1, (2, 1, 12, 12))
        assert np.allclose(enc.forward(x)[0], enc2.forward(x)[0], atol=1e-12)
        z = np.array([0.3, -0.3])
        assert np.allclose(latent.decode(dec, z), latent.decode(dec2, z),
                           atol=1e-12)
        assert np.allclose(spec2.centers, spec.centers)
