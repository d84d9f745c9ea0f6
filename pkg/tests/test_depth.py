import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from photofit.depth import VAR_EPS, ReprConfig, decode, encode, variance_regularizer
from photofit.errors import InvalidInputError


class TestDecode:
    def test_disparity_reciprocal(self):
        d, _ = decode(np.array([[2.0]]), ReprConfig("disparity"))
        assert d[0, 0] == 0.5

    def test_scaled_disparity_endpoint(self):
        # depth range (0.1, 100) => sigma_max = 10, sigma_min = 0.01; x = 1 hits min depth
        cfg = ReprConfig.from_depth_range("scaled_disparity", 0.1, 100.0)
        assert cfg.sigma_max == 10.0
        d, _ = decode(np.array([[1.0]]), cfg)
        np.testing.assert_allclose(d[0, 0], 0.1)

    def test_softplus_at_zero(self):
        d, g = decode(np.array([[0.0]]), ReprConfig("softplus"))
        np.testing.assert_allclose(d[0, 0], np.log(2.0), rtol=1e-12)
        np.testing.assert_allclose(g[0, 0], 0.5, rtol=1e-12)

    def test_softplus_large_input_stable(self):
        d, g = decode(np.array([[500.0]]), ReprConfig("softplus"))
        assert d[0, 0] == 500.0 and g[0, 0] == 1.0

    def test_softplus_strictly_positive(self):
        d, _ = decode(np.array([[-700.0, -30.0, 0.0, 30.0]]), ReprConfig("softplus"))
        assert (d > 0).all()

    def test_scaled_output_range_exact(self):
        cfg = ReprConfig.from_depth_range("scaled_disparity", 0.1, 100.0)
        d, _ = decode(np.array([[0.0, 1.0]]), cfg)
        np.testing.assert_allclose(d, [[100.0, 0.1]])

    def test_precondition_violations_name_pixel_and_kind(self):
        with pytest.raises(InvalidInputError, match=r"x > 0.*\(0, 1\)"):
            decode(np.array([[1.0, -2.0]]), ReprConfig("disparity"))
        with pytest.raises(InvalidInputError, match=r"\[0, 1\]"):
            decode(np.array([[1.5]]), ReprConfig("scaled_disparity"))

    @settings(max_examples=30, deadline=None)
    @given(st.sampled_from(["disparity", "scaled_disparity", "softplus"]), st.integers(0, 10_000))
    def test_monotone_and_fd(self, kind, seed):
        rng = np.random.default_rng(seed)
        cfg = ReprConfig.from_depth_range(kind)
        if kind == "disparity":
            x = rng.uniform(0.05, 5.0, (4, 5))
        elif kind == "scaled_disparity":
            x = rng.uniform(0.01, 0.99, (4, 5))
        else:
            x = rng.uniform(-5.0, 20.0, (4, 5))
        d, g = decode(x, cfg)
        # sign of dd/dx per decoder: reciprocal forms decrease, softplus increases
        assert (g < 0).all() if kind != "softplus" else (g > 0).all()
        h = 1e-7
        fd = (decode(x + h, cfg)[0] - decode(x - h, cfg)[0]) / (2 * h)
        np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-9)

    def test_encode_roundtrip(self):
        for kind in ("disparity", "scaled_disparity", "softplus"):
            cfg = ReprConfig.from_depth_range(kind)
            depth = np.array([[0.5, 5.0, 50.0]])
            x = encode(depth, cfg)
            d, _ = decode(x, cfg)
            np.testing.assert_allclose(d, depth, rtol=1e-12)


class TestVarianceRegularizer:
    def test_constant_map_is_capped_and_flagged(self):
        loss, grad, degenerate = variance_regularizer(np.full((4, 4), 7.0))
        assert degenerate
        assert loss == 1e-6 / VAR_EPS
        assert (grad == 0).all()

    def test_forced_arithmetic(self):
        # two-pixel map with Var = 1e-6 gives loss exactly 1.0
        d = np.array([[10.0 - 1e-3, 10.0 + 1e-3]])
        loss, _, degenerate = variance_regularizer(d)
        assert not degenerate
        np.testing.assert_allclose(loss, 1.0, rtol=1e-9)

    def test_gradient_matches_fd(self):
        rng = np.random.default_rng(21)
        d = rng.uniform(5.0, 15.0, (6, 7))
        _, grad, _ = variance_regularizer(d)
        h = 1e-5
        for (i, j) in [(0, 0), (2, 3), (5, 6)]:
            dp, dm = d.copy(), d.copy()
            dp[i, j] += h
            dm[i, j] -= h
            fd = (variance_regularizer(dp)[0] - variance_regularizer(dm)[0]) / (2 * h)
            assert abs(grad[i, j] - fd) < 1e-5 * max(abs(fd), 1e-12)

    def test_needs_two_pixels(self):
        with pytest.raises(InvalidInputError):
            variance_regularizer(np.array([[1.0]]))

    def test_respects_validity_mask(self):
        d = np.array([[1.0, 1.0, 100.0]])
        valid = np.array([[True, True, False]])
        _, _, degenerate = variance_regularizer(d, valid)
        assert degenerate
