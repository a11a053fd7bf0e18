"""Backend-parity and reference-semantics tests for the hot kernels."""

import numpy as np
import pytest

from fedbalance import _kernels
from fedbalance._kernels import numpy_backend

compiled = pytest.importorskip(
    "fedbalance._kernels._core", reason="compiled kernel extension not built"
)

BACKENDS = [numpy_backend, compiled]


def _conv_naive(x, w, b):
    n, h, wd = x.shape
    f = w.shape[0]
    out = np.zeros((n, f, h, wd))
    for i in range(n):
        for c in range(f):
            for p in range(h):
                for q in range(wd):
                    acc = b[c]
                    for di in range(3):
                        for dj in range(3):
                            si, sj = p + di - 1, q + dj - 1
                            if 0 <= si < h and 0 <= sj < wd:
                                acc += w[c, di, dj] * x[i, si, sj]
                    out[i, c, p, q] = acc
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(42)


class TestConv:
    @pytest.mark.parametrize("backend", BACKENDS, ids=["numpy", "compiled"])
    def test_forward_matches_naive(self, backend, rng):
        x = rng.random((3, 6, 5))
        w = rng.normal(size=(4, 3, 3))
        b = rng.normal(size=4)
        assert np.allclose(backend.conv3x3_forward(x, w, b), _conv_naive(x, w, b), atol=1e-13)

    def test_backward_parity(self, rng):
        x = rng.random((2, 7, 6))
        w = rng.normal(size=(3, 3, 3))
        dy = rng.normal(size=(2, 3, 7, 6))
        for a, b in zip(
            numpy_backend.conv3x3_backward(x, w, dy), compiled.conv3x3_backward(x, w, dy)
        ):
            assert np.allclose(a, b, rtol=1e-12, atol=1e-14)

    def test_backward_matches_numeric_derivative(self, rng):
        x = rng.random((1, 4, 4))
        w = rng.normal(size=(2, 3, 3))
        b = rng.normal(size=2)
        dy = rng.normal(size=(1, 2, 4, 4))
        dx, dw, db = numpy_backend.conv3x3_backward(x, w, dy)
        h = 1e-6

        def loss(xx, ww, bb):
            return float((numpy_backend.conv3x3_forward(xx, ww, bb) * dy).sum())

        for idx in np.ndindex(w.shape):
            wp, wm = w.copy(), w.copy()
            wp[idx] += h
            wm[idx] -= h
            num = (loss(x, wp, b) - loss(x, wm, b)) / (2 * h)
            assert num == pytest.approx(dw[idx], rel=1e-5, abs=1e-7)
        for idx in np.ndindex(x.shape):
            xp, xm = x.copy(), x.copy()
            xp[idx] += h
            xm[idx] -= h
            num = (loss(xp, w, b) - loss(xm, w, b)) / (2 * h)
            assert num == pytest.approx(dx[idx], rel=1e-5, abs=1e-7)


class TestMaxpool:
    def test_parity_and_tie_break(self, rng):
        x = rng.integers(0, 3, size=(2, 2, 6, 6)).astype(np.float64)  # plenty of ties
        y1, s1 = numpy_backend.maxpool2_forward(x)
        y2, s2 = compiled.maxpool2_forward(x)
        assert np.array_equal(y1, y2)
        assert np.array_equal(s1, s2)

    def test_odd_sizes_floor(self, rng):
        x = rng.random((1, 1, 5, 7))
        y, s = numpy_backend.maxpool2_forward(x)
        assert y.shape == (1, 1, 2, 3)
        dx = numpy_backend.maxpool2_backward(np.ones_like(y), s, 5, 7)
        assert dx.shape == (1, 1, 5, 7)
        assert dx[:, :, 4, :].sum() == 0  # dropped row receives no gradient

    def test_backward_parity(self, rng):
        x = rng.random((2, 3, 8, 8))
        _, s = numpy_backend.maxpool2_forward(x)
        dy = rng.normal(size=(2, 3, 4, 4))
        assert np.array_equal(
            numpy_backend.maxpool2_backward(dy, s, 8, 8),
            compiled.maxpool2_backward(dy, s, 8, 8),
        )

    def test_gradient_routes_to_argmax(self):
        x = np.array([[[[1.0, 2.0], [3.0, 0.5]]]])
        y, s = numpy_backend.maxpool2_forward(x)
        assert y[0, 0, 0, 0] == 3.0
        dx = numpy_backend.maxpool2_backward(np.array([[[[5.0]]]]), s, 2, 2)
        assert dx[0, 0, 1, 0] == 5.0
        assert dx.sum() == 5.0


class TestWarp:
    def test_identity_matrix_is_identity(self, rng):
        img = rng.random((9, 9))
        out = numpy_backend.warp_bilinear(img, np.eye(3), 0.0, False)
        assert np.array_equal(out, img)

    def test_translation_fills_outside(self):
        img = np.ones((4, 4))
        m = np.array([[1.0, 0.0, -1.5], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])  # src x = dst x - 1.5
        out = numpy_backend.warp_bilinear(img, m, 0.25, False)
        assert np.allclose(out[:, 0], 0.25)  # source column at -1.5 is outside
        assert np.allclose(out[:, 2:], 1.0)

    def test_clamp_mode_never_fills(self, rng):
        img = rng.random((6, 6))
        m = np.array([[1.0, 0.0, -3.0], [0.0, 1.0, 2.5], [0.0, 0.0, 1.0]])
        out = numpy_backend.warp_bilinear(img, m, -1.0, True)
        assert out.min() >= 0.0

    @pytest.mark.parametrize("clamp", [False, True])
    def test_parity(self, clamp, rng):
        img = rng.random((12, 10))
        for _ in range(5):
            m = np.eye(3) + rng.normal(scale=0.08, size=(3, 3))
            m[2, 2] = 1.0
            a = numpy_backend.warp_bilinear(img, m, 0.3, clamp)
            b = compiled.warp_bilinear(img, m, 0.3, clamp)
            assert np.allclose(a, b, rtol=1e-12, atol=1e-14)


class TestSepconv:
    def test_dirac_kernel_is_identity(self, rng):
        img = rng.random((5, 8))
        k = np.array([0.0, 1.0, 0.0])
        assert np.allclose(numpy_backend.sepconv2d_clamp(img, k), img)

    def test_constant_image_preserved_by_normalized_kernel(self):
        img = np.full((6, 6), 0.4)
        k = np.array([0.25, 0.5, 0.25])
        assert np.allclose(numpy_backend.sepconv2d_clamp(img, k), 0.4)

    def test_parity(self, rng):
        img = rng.random((13, 9))
        for taps in (3, 5):
            k = rng.random(taps)
            k /= k.sum()
            a = numpy_backend.sepconv2d_clamp(img, k)
            b = compiled.sepconv2d_clamp(img, k)
            assert np.allclose(a, b, rtol=1e-12, atol=1e-14)


def test_active_backend_exports_full_api():
    for name in (
        "conv3x3_forward",
        "conv3x3_backward",
        "maxpool2_forward",
        "maxpool2_backward",
        "warp_bilinear",
        "sepconv2d_clamp",
    ):
        assert callable(getattr(_kernels, name))
    assert _kernels.BACKEND in ("compiled", "python")
