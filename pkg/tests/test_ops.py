import numpy as np
import pytest

from qcaps.ops import capsule_affine, conv2d, l2_norm_lastdim


def conv2d_reference(inp, weight, bias, stride):
    """Quadruple-loop oracle, written independently of the kernel."""
    c_in, h, w = inp.shape
    c_out, _, k, _ = weight.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    out = np.zeros((c_out, ho, wo))
    for o in range(c_out):
        for y in range(ho):
            for x in range(wo):
                acc = 0.0
                for c in range(c_in):
                    for i in range(k):
                        for j in range(k):
                            acc += inp[c, y * stride + i, x * stride + j] \
                                * weight[o, c, i, j]
                out[o, y, x] = acc + bias[o]
    return out


class TestConv2d:
    def test_single_value(self):
        out = conv2d(np.array([[[2.0]]]), np.array([[[[3.0]]]]),
                     np.array([0.5]), stride=1)
        assert out.shape == (1, 1, 1)
        assert out[0, 0, 0] == 2.0 * 3.0 + 0.5

    def test_identity_kernel(self):
        inp = np.random.default_rng(0).random((1, 5, 5))
        out = conv2d(inp, np.ones((1, 1, 1, 1)), np.zeros(1), stride=1)
        assert np.allclose(out, inp)

    def test_ones_sum(self):
        out = conv2d(np.ones((1, 3, 3)), np.ones((1, 1, 3, 3)),
                     np.zeros(1), stride=1)
        assert out.shape == (1, 1, 1)
        assert out[0, 0, 0] == 9.0

    @pytest.mark.parametrize("c_in,c_out,h,k,stride", [
        (1, 1, 5, 3, 1), (2, 3, 6, 3, 1), (3, 2, 7, 3, 2),
        (2, 4, 9, 5, 2), (1, 2, 4, 4, 1), (4, 1, 8, 3, 3),
    ])
    def test_matches_reference(self, c_in, c_out, h, k, stride):
        gen = np.random.default_rng(hash((c_in, c_out, h, k, stride)) % 2**32)
        inp = gen.standard_normal((c_in, h, h))
        weight = gen.standard_normal((c_out, c_in, k, k))
        bias = gen.standard_normal(c_out)
        got = conv2d(inp, weight, bias, stride)
        want = conv2d_reference(inp, weight, bias, stride)
        assert got.shape == want.shape
        assert np.max(np.abs(got - want)) < 1e-10

    def test_shape_errors(self):
        with pytest.raises(ValueError, match="channel mismatch"):
            conv2d(np.zeros((2, 5, 5)), np.zeros((1, 3, 3, 3)), np.zeros(1))
        with pytest.raises(ValueError, match="kernel"):
            conv2d(np.zeros((1, 2, 2)), np.zeros((1, 1, 3, 3)), np.zeros(1))
        with pytest.raises(ValueError, match="stride"):
            conv2d(np.zeros((1, 5, 5)), np.zeros((1, 1, 3, 3)), np.zeros(1), stride=0)
        with pytest.raises(ValueError, match="bias"):
            conv2d(np.zeros((1, 5, 5)), np.zeros((2, 1, 3, 3)), np.zeros(1))


class TestCapsuleAffine:
    def test_identity_transform(self):
        n_in, n_out, d = 3, 4, 5
        w = np.broadcast_to(np.eye(d), (n_in, n_out, d, d)).copy()
        u = np.random.default_rng(1).standard_normal((n_in, d))
        votes = capsule_affine(u, w)
        for j in range(n_out):
            assert np.allclose(votes[:, j, :], u)

    def test_zero_input(self):
        w = np.random.default_rng(2).standard_normal((2, 3, 4, 5))
        assert np.array_equal(capsule_affine(np.zeros((2, 5)), w),
                              np.zeros((2, 3, 4)))

    def test_hand_example(self):
        w = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])  # [1,1,2,2]
        u = np.array([[1.0, 1.0]])
        assert np.array_equal(capsule_affine(u, w), np.array([[[3.0, 7.0]]]))

    def test_matches_brute_force(self):
        gen = np.random.default_rng(3)
        for shape in [(1, 1, 1, 1), (2, 3, 4, 2), (4, 4, 4, 4), (3, 1, 2, 4)]:
            n_in, n_out, d_out, d_in = shape
            w = gen.standard_normal(shape)
            u = gen.standard_normal((n_in, d_in))
            got = capsule_affine(u, w)
            for i in range(n_in):
                for j in range(n_out):
                    for o in range(d_out):
                        want = sum(w[i, j, o, d] * u[i, d] for d in range(d_in))
                        assert abs(got[i, j, o] - want) < 1e-12

    def test_shape_error(self):
        with pytest.raises(ValueError, match="mismatch"):
            capsule_affine(np.zeros((2, 3)), np.zeros((2, 4, 5, 6)))


class TestNorm:
    def test_pythagorean(self):
        assert l2_norm_lastdim(np.array([3.0, 4.0])) == 5.0

    def test_zero(self):
        assert l2_norm_lastdim(np.zeros(4)) == 0.0

    def test_ones(self):
        assert l2_norm_lastdim(np.ones(4)) == 2.0

    def test_batched(self):
        t = np.array([[3.0, 4.0], [0.0, 1.0]])
        assert np.array_equal(l2_norm_lastdim(t), np.array([5.0, 1.0]))
