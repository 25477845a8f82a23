"""Kernel tests: brute-force loop oracles, hand-computed values, and properties."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgevad import tensor as tc
from edgevad.tensor import F16, F32, ShapeError


# ---------------------------------------------------------------------------
# independent oracles (nested loops, no shared code with the kernels)
# ---------------------------------------------------------------------------

def conv3d_loops(x, w, b, stride, pad, dilation):
    n, c, d, h, wi = x.shape
    o, _, kd, kh, kw = w.shape
    sd, sh, sw = stride
    pd, ph, pw = pad
    dd, dh, dw = dilation
    od = (d + 2 * pd - ((kd - 1) * dd + 1)) // sd + 1
    oh = (h + 2 * ph - ((kh - 1) * dh + 1)) // sh + 1
    ow = (wi + 2 * pw - ((kw - 1) * dw + 1)) // sw + 1
    out = np.zeros((n, o, od, oh, ow))
    for ni in range(n):
        for oi in range(o):
            for zi in range(od):
                for yi in range(oh):
                    for xi in range(ow):
                        acc = 0.0 if b is None else float(b[oi])
                        for ci in range(c):
                            for a in range(kd):
                                for bb in range(kh):
                                    for cc in range(kw):
                                        z = zi * sd + a * dd - pd
                                        y = yi * sh + bb * dh - ph
                                        xx = xi * sw + cc * dw - pw
                                        if 0 <= z < d and 0 <= y < h and 0 <= xx < wi:
                                            acc += float(x[ni, ci, z, y, xx]) * float(w[oi, ci, a, bb, cc])
                        out[ni, oi, zi, yi, xi] = acc
    return out


def conv1d_loops(x, w, dilation):
    c, t = x.shape
    o, _, k = w.shape
    half = (k - 1) * dilation // 2
    out = np.zeros((o, t))
    for oi in range(o):
        for ti in range(t):
            acc = 0.0
            for ci in range(c):
                for j in range(k):
                    src = ti + j * dilation - half
                    if 0 <= src < t:
                        acc += float(x[ci, src]) * float(w[oi, ci, j])
            out[oi, ti] = acc
    return out


def l2_loops(f):
    out = []
    for row in f:
        s = 0.0
        for v in row:
            s += float(v) * float(v)
        out.append(s ** 0.5)
    return np.array(out)


def topk_sort_oracle(values, k):
    pairs = sorted(((-float(v), i) for i, v in enumerate(values)))
    return [i for _, i in pairs[:k]], [-nv for nv, _ in pairs[:k]]


def rel_err(a, b):
    denom = max(np.max(np.abs(b)), 1e-12)
    return np.max(np.abs(a - b)) / denom


# ---------------------------------------------------------------------------
# conv3d
# ---------------------------------------------------------------------------

class TestConv3d:
    def test_all_zero_input_gives_zero_output(self):
        x = tc.zeros((1, 2, 3, 4, 4))
        w = tc.tensor(np.random.default_rng(0).normal(size=(3, 2, 2, 2, 2)))
        b = tc.zeros((3,))
        out = tc.conv3d(x, w, b)
        assert np.all(out.data == 0.0)

    def test_identity_kernel(self):
        rng = np.random.default_rng(1)
        x = tc.tensor(rng.normal(size=(1, 1, 3, 4, 4)))
        w = tc.tensor(np.ones((1, 1, 1, 1, 1)))
        out = tc.conv3d(x, w)
        np.testing.assert_array_equal(out.data, x.data)

    def test_matches_loop_oracle_on_spec_shape(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(1, 2, 3, 4, 4)).astype(np.float32)
        w = rng.normal(size=(2, 2, 2, 2, 2)).astype(np.float32)
        b = rng.normal(size=(2,)).astype(np.float32)
        got = tc.conv3d(tc.tensor(x), tc.tensor(w), tc.tensor(b)).data
        want = conv3d_loops(x, w, b, (1, 1, 1), (0, 0, 0), (1, 1, 1))
        assert rel_err(got, want) <= 1e-6

    @pytest.mark.parametrize("seed", range(40))
    def test_matches_loop_oracle_randomized(self, seed):
        rng = np.random.default_rng(seed)
        n, c = rng.integers(1, 3), rng.integers(1, 4)
        d, h, w_ = rng.integers(1, 5), rng.integers(1, 9), rng.integers(1, 9)
        kd, kh, kw = rng.integers(1, d + 1), rng.integers(1, h + 1), rng.integers(1, w_ + 1)
        o = rng.integers(1, 4)
        stride = tuple(int(s) for s in rng.integers(1, 3, size=3))
        pad = tuple(int(p) for p in rng.integers(0, 2, size=3))
        dil = (1, 1, 1)
        x = rng.normal(size=(n, c, d, h, w_)).astype(np.float32)
        wt = rng.normal(size=(o, c, kd, kh, kw)).astype(np.float32)
        b = rng.normal(size=(o,)).astype(np.float32) if seed % 2 else None
        want = conv3d_loops(x, wt, b, stride, pad, dil)
        if min(want.shape[2:]) < 1:
            return
        got = tc.conv3d(
            tc.tensor(x), tc.tensor(wt), None if b is None else tc.tensor(b),
            stride=stride, pad=pad, dilation=dil,
        ).data
        assert rel_err(got, want) <= 1e-6

    def test_dilated_matches_oracle(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(1, 2, 6, 7, 7)).astype(np.float32)
        w = rng.normal(size=(2, 2, 2, 3, 3)).astype(np.float32)
        got = tc.conv3d(tc.tensor(x), tc.tensor(w), pad=(1, 2, 2), dilation=(2, 2, 2)).data
        want = conv3d_loops(x, w, None, (1, 1, 1), (1, 2, 2), (2, 2, 2))
        assert rel_err(got, want) <= 1e-6

    def test_channel_mismatch_names_axis(self):
        x = tc.zeros((1, 2, 3, 3, 3))
        w = tc.zeros((1, 3, 1, 1, 1))
        with pytest.raises(ShapeError, match="channel axis"):
            tc.conv3d(x, w)

    def test_collapsed_output_axis_rejected(self):
        x = tc.zeros((1, 1, 2, 2, 2))
        w = tc.zeros((1, 1, 3, 1, 1))
        with pytest.raises(ShapeError, match="depth"):
            tc.conv3d(x, w)


# ---------------------------------------------------------------------------
# conv1d_dilated
# ---------------------------------------------------------------------------

class TestConv1dDilated:
    def test_even_kernel_rejected(self):
        x = tc.tensor([[1.0, 2.0, 3.0, 4.0, 5.0]])
        w = tc.tensor([[[1.0, 1.0]]])
        with pytest.raises(ShapeError, match="even kernel"):
            tc.conv1d_dilated(x, w)

    @pytest.mark.parametrize("dilation", [1, 2, 3])
    def test_delta_kernel_is_identity(self, dilation):
        x = tc.tensor([[1.0, 2.0, 3.0, 4.0, 5.0]])
        w = tc.tensor([[[0.0, 1.0, 0.0]]])
        out = tc.conv1d_dilated(x, w, dilation=dilation)
        np.testing.assert_allclose(out.data, x.data, atol=1e-7)

    def test_hand_convolution(self):
        # [1,2,3,4,5] * [1,0,1] at dilation 2 with same-padding -> [3,4,6,2,3]
        x = tc.tensor([[1.0, 2.0, 3.0, 4.0, 5.0]])
        w = tc.tensor([[[1.0, 0.0, 1.0]]])
        out = tc.conv1d_dilated(x, w, dilation=2)
        np.testing.assert_allclose(out.data, [[3.0, 4.0, 6.0, 2.0, 3.0]], atol=1e-7)

    def test_zero_input_zero_output(self):
        x = tc.zeros((3, 8))
        w = tc.tensor(np.random.default_rng(3).normal(size=(4, 3, 3)))
        assert np.all(tc.conv1d_dilated(x, w, dilation=2).data == 0.0)

    @pytest.mark.parametrize("seed", range(25))
    def test_matches_loop_oracle(self, seed):
        rng = np.random.default_rng(100 + seed)
        c, t, o = rng.integers(1, 4), rng.integers(1, 12), rng.integers(1, 4)
        k = int(rng.choice([1, 3, 5]))
        dil = int(rng.integers(1, 4))
        x = rng.normal(size=(c, t)).astype(np.float32)
        w = rng.normal(size=(o, c, k)).astype(np.float32)
        got = tc.conv1d_dilated(tc.tensor(x), tc.tensor(w), dilation=dil).data
        want = conv1d_loops(x, w, dil)
        assert got.shape == (o, t)
        assert rel_err(got, want) <= 1e-6


# ---------------------------------------------------------------------------
# linear / softmax / l2 / topk
# ---------------------------------------------------------------------------

class TestLinear:
    def test_identity(self):
        x = tc.tensor([[1.0, -2.0, 3.0]])
        w = tc.tensor(np.eye(3))
        np.testing.assert_array_equal(tc.linear(x, w, tc.zeros((3,))).data, x.data)

    def test_dot_product(self):
        out = tc.linear(tc.tensor([1.0, 2.0, 3.0, 4.0]), tc.tensor([[1.0, 1.0, 1.0, 1.0]]), tc.tensor([1.0]))
        np.testing.assert_allclose(out.data, [11.0])

    def test_zero_weight_gives_bias(self):
        out = tc.linear(tc.tensor([[5.0, 6.0]]), tc.zeros((3, 2)), tc.tensor([1.0, 2.0, 3.0]))
        np.testing.assert_array_equal(out.data, [[1.0, 2.0, 3.0]])

    def test_extent_mismatch(self):
        with pytest.raises(ShapeError, match="trailing axis"):
            tc.linear(tc.zeros((2, 3)), tc.zeros((4, 5)))


class TestSoftmax:
    def test_symmetry(self):
        np.testing.assert_allclose(tc.softmax(tc.tensor([0.0, 0.0])).data, [0.5, 0.5])

    def test_large_inputs_stable(self):
        out = tc.softmax(tc.tensor([1000.0, 1000.0])).data
        np.testing.assert_allclose(out, [0.5, 0.5])
        assert np.all(np.isfinite(out))

    def test_closed_form(self):
        out = tc.softmax(tc.tensor([np.log(2.0), 0.0])).data
        np.testing.assert_allclose(out, [2 / 3, 1 / 3], atol=1e-6)

    def test_nan_propagates_with_warning(self):
        with pytest.warns(RuntimeWarning):
            out = tc.softmax(tc.tensor([np.nan, 0.0])).data
        assert np.isnan(out).any()

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=16), st.floats(-50, 50))
    @settings(max_examples=80, deadline=None)
    def test_probability_vector_and_shift_invariance(self, vals, shift):
        a = tc.softmax(tc.tensor(vals)).data
        assert np.all(a >= 0)
        assert abs(float(a.sum()) - 1.0) <= 1e-6
        b = tc.softmax(tc.tensor([v + shift for v in vals])).data
        assert np.max(np.abs(a - b)) <= 1e-6


class TestL2Magnitude:
    def test_3_4_5(self):
        np.testing.assert_allclose(tc.l2_magnitude(tc.tensor([[3.0, 4.0]])).data, [5.0])

    def test_zero_row(self):
        assert tc.l2_magnitude(tc.zeros((1, 7))).data[0] == 0.0

    def test_matches_scalar_loop(self):
        rng = np.random.default_rng(5)
        f = rng.normal(size=(8, 16)).astype(np.float32)
        got = tc.l2_magnitude(tc.tensor(f)).data
        assert rel_err(got, l2_loops(f)) <= 1e-6

    @given(st.floats(-100, 100), st.integers(0, 10))
    @settings(max_examples=60, deadline=None)
    def test_absolute_homogeneity(self, c, seed):
        rng = np.random.default_rng(seed)
        f = rng.normal(size=(5, 6)).astype(np.float32)
        lhs = tc.l2_magnitude(tc.tensor(c * f)).data
        rhs = abs(c) * tc.l2_magnitude(tc.tensor(f)).data
        assert np.max(np.abs(lhs - rhs)) <= 1e-6 * max(1.0, abs(c)) * 40


class TestTopk:
    def test_spec_example(self):
        idx, vals = tc.topk(tc.tensor([0.1, 0.9, 0.5]), 2)
        assert idx == [1, 2] and vals == [pytest.approx(0.9), pytest.approx(0.5)]

    def test_tie_breaks_to_lowest_index(self):
        idx, _ = tc.topk(tc.tensor([1.0, 1.0, 0.0]), 1)
        assert idx == [0]

    def test_k_equals_t_is_descending_sort(self):
        v = [0.3, 0.1, 0.9, 0.9, 0.2]
        idx, vals = tc.topk(tc.tensor(v), 5)
        oi, ov = topk_sort_oracle(v, 5)
        assert idx == oi and vals == pytest.approx(ov)

    def test_k_out_of_range(self):
        with pytest.raises(ValueError):
            tc.topk(tc.tensor([1.0, 2.0]), 3)
        with pytest.raises(ValueError):
            tc.topk(tc.tensor([1.0, 2.0]), 0)

    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=20), st.data())
    @settings(max_examples=100, deadline=None)
    def test_prefix_of_stable_descending_sort(self, vals, data):
        k = data.draw(st.integers(1, len(vals)))
        idx, got = tc.topk(tc.tensor(vals), k)
        oi, ov = topk_sort_oracle(np.asarray(vals, dtype=np.float32), k)
        assert idx == oi
        assert got == pytest.approx(ov)


# ---------------------------------------------------------------------------
# elementwise suite + precision semantics
# ---------------------------------------------------------------------------

class TestElementwise:
    def test_relu(self):
        np.testing.assert_array_equal(tc.relu(tc.tensor([-1.0, 2.0])).data, [0.0, 2.0])

    def test_mean(self):
        assert tc.mean(tc.tensor([2.0, 4.0])).item() == 3.0

    def test_maxpool_constant(self):
        x = tc.tensor(np.full((1, 1, 4, 4, 4), 2.5))
        out = tc.max_pool3d(x, 2, 2)
        assert np.all(out.data == 2.5)
        assert out.shape == (1, 1, 2, 2, 2)

    def test_maxpool_floor_arithmetic(self):
        out = tc.max_pool3d(tc.zeros((1, 1, 5, 7, 9)), (2, 2, 2), (2, 2, 2))
        assert out.shape == (1, 1, 2, 3, 4)

    def test_add_shape_rule(self):
        with pytest.raises(ShapeError):
            tc.add(tc.zeros((2, 3)), tc.zeros((3, 2)))
        out = tc.add(tc.zeros((2, 3)), tc.tensor(5.0))
        assert np.all(out.data == 5.0)

    def test_global_avg_pool(self):
        x = np.arange(2 * 3 * 2 * 2 * 2, dtype=np.float32).reshape(2, 3, 2, 2, 2)
        got = tc.global_avg_pool(tc.tensor(x)).data
        np.testing.assert_allclose(got, x.mean(axis=(2, 3, 4)))


class TestPrecision:
    def test_tensor_is_immutable(self):
        t = tc.tensor([1.0, 2.0])
        with pytest.raises(ValueError):
            t.data[0] = 5.0

    def test_f16_construction_rounds(self):
        t = tc.tensor([0.1], precision=F16)
        assert t.data[0] == np.float32(np.float16(0.1))
        assert t.data[0] != np.float32(0.1)

    def test_f16_exact_values_survive(self):
        t = tc.tensor([1.0, 2.0, 0.5, -3.0], precision=F16)
        np.testing.assert_array_equal(t.data, [1.0, 2.0, 0.5, -3.0])

    @pytest.mark.parametrize(
        "op", ["linear", "conv1d", "conv3d", "relu", "add", "softmax", "l2", "mul_scalar", "mean", "pool", "gap"]
    )
    def test_ops_preserve_precision_tag_and_round(self, op):
        rng = np.random.default_rng(11)
        make = lambda shape: tc.tensor(rng.normal(size=shape), F16)
        if op == "linear":
            out = tc.linear(make((4, 3)), make((2, 3)))
        elif op == "conv1d":
            out = tc.conv1d_dilated(make((2, 6)), make((2, 2, 3)))
        elif op == "conv3d":
            out = tc.conv3d(make((1, 2, 3, 4, 4)), make((2, 2, 2, 2, 2)))
        elif op == "relu":
            out = tc.relu(make((5,)))
        elif op == "add":
            out = tc.add(make((5,)), make((5,)))
        elif op == "l2":
            out = tc.l2_magnitude(make((4, 6)))
        elif op == "mul_scalar":
            out = tc.mul_scalar(make((5,)), 0.37)
        elif op == "mean":
            out = tc.mean(make((4, 4)), axis=1)
        elif op == "pool":
            out = tc.max_pool3d(make((1, 1, 4, 4, 4)), 2, 2)
        elif op == "gap":
            out = tc.global_avg_pool(make((2, 3, 2, 2, 2)))
        else:
            out = tc.softmax(make((5,)))
        assert out.precision == F16
        np.testing.assert_array_equal(out.data, tc.round_f16(out.data))

    def test_mul_scalar(self):
        out = tc.mul_scalar(tc.tensor([2.0, -4.0]), 1.5)
        np.testing.assert_allclose(out.data, [3.0, -6.0])

    def test_f32_stays_f32(self):
        out = tc.relu(tc.tensor([1.213251234e-5]))
        assert out.precision == F32
        assert out.data[0] == np.float32(1.213251234e-5)
