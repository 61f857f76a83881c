import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import smooth_signal
from oracles import brute_force_dtw, enumerate_paths
from physgold.alignment import AlignConfig, WarpPath, ctw_align, dtw, warp_to_reference
from physgold.signal import SignalBundle

short = arrays(float, st.integers(1, 6), elements=st.floats(-5, 5))


class TestDTW:
    def test_identical_is_diagonal(self):
        x = [0.3, 1.0, -2.0, 4.0]
        path, cost = dtw(x, x)
        assert cost == 0.0
        assert path.is_identity()

    def test_shifted_impulse(self):
        path, cost = dtw([0, 0, 1, 0], [0, 1, 0, 0])
        assert cost == 0.0
        best, optimal = brute_force_dtw([0, 0, 1, 0], [0, 1, 0, 0])
        assert best == 0.0 and list(path.pairs) in optimal

    def test_swapped_pair(self):
        # the three admissible paths cost 2, 2 and 2
        assert len(enumerate_paths(2, 2)) == 3
        assert dtw([0, 1], [1, 0])[1] == 2.0

    def test_tie_break_prefers_diagonal(self):
        path, _ = dtw([0, 0, 0], [0, 0, 0])
        assert path.pairs == ((0, 0), (1, 1), (2, 2))

    def test_band_too_narrow(self):
        with pytest.raises(ValueError, match="band"):
            dtw([1, 2, 3, 4], [1, 2], band=1)

    def test_empty(self):
        with pytest.raises(ValueError):
            dtw([], [1.0])

    def test_band_limits_path(self):
        x = np.r_[np.zeros(10), 1.0, np.zeros(9)]
        y = np.r_[np.zeros(2), 1.0, np.zeros(17)]
        path, cost = dtw(x, y, band=3)
        assert max(abs(i - j) for i, j in path.pairs) <= 3
        assert cost > 0

    @settings(max_examples=200, deadline=None)
    @given(short, short)
    def test_properties(self, x, y):
        path, cost = dtw(x, y)
        path.validate(len(x), len(y))
        assert dtw(y, x)[1] == pytest.approx(cost, abs=1e-12)
        best, optimal = brute_force_dtw(x, y)
        assert cost == best
        assert [list(p) for p in path.pairs] in [[list(p) for p in o] for o in optimal]


class TestWarp:
    def test_diagonal_identity(self):
        x = np.array([3.0, 1.0, 4.0])
        np.testing.assert_array_equal(warp_to_reference(x, WarpPath.diagonal(3), 3), x)

    def test_many_to_one_mean(self):
        np.testing.assert_array_equal(warp_to_reference([0.0, 2.0], WarpPath(((0, 0), (1, 0))), 1), [1.0])

    def test_relocates_impulse(self):
        x = np.array([0.0, 0.0, 1.0, 0.0])
        ref = np.array([0.0, 1.0, 0.0, 0.0])
        _, optimal = brute_force_dtw(x, ref)
        for pairs in optimal:
            np.testing.assert_array_equal(warp_to_reference(x, WarpPath(tuple(pairs)), 4), ref)

    def test_invalid_path(self):
        with pytest.raises(ValueError):
            warp_to_reference([1.0, 2.0], WarpPath(((0, 0), (1, 2))), 3)
        with pytest.raises(ValueError):
            warp_to_reference([1.0, 2.0], WarpPath(((0, 0),)), 2)

    @given(st.integers(1, 7), st.integers(1, 7), st.floats(-10, 10))
    def test_constant_stays_constant(self, nx, ny, c):
        for pairs in enumerate_paths(nx, ny)[:20]:
            out = warp_to_reference(np.full(nx, c), WarpPath(tuple(pairs)), ny)
            np.testing.assert_allclose(out, c)


def _lagged_bundle(rng, n=600, lag=8, noise=0.05):
    base = smooth_signal(rng, n + lag)
    a = base[lag:] + noise * rng.normal(size=n)
    b = base[:n] + noise * rng.normal(size=n)
    return SignalBundle.from_arrays("s", 2.0, {"A1": a, "A2": b})


class TestCTW:
    def test_identical_channels(self, rng):
        x = smooth_signal(rng, 200)
        res = ctw_align(SignalBundle.from_arrays("s", 2.0, {"A1": x, "A2": x, "A3": x}), ["A1", "A2", "A3"])
        assert res.converged and res.iterations == 1
        assert all(p.is_identity() for p in res.paths.values())

    def test_lagged_copy_improves(self, rng):
        res = ctw_align(_lagged_bundle(rng), ["A1", "A2"])
        assert res.post_agreement >= res.pre_agreement
        for name, path in res.paths.items():
            path.validate(600, 600)
        assert all(len(res.aligned[n]) == 600 for n in ("A1", "A2"))

    def test_constant_channel_passes_through(self, rng):
        x = smooth_signal(rng, 300)
        b = SignalBundle.from_arrays("s", 2.0, {"A1": x, "A2": np.roll(x, 5), "A3": np.full(300, 2.0)})
        res = ctw_align(b, ["A1", "A2", "A3"])
        assert res.degenerate == ["A3"]
        assert res.paths["A3"].is_identity()
        np.testing.assert_array_equal(res.aligned["A3"].values, 0.0)

    def test_all_constant_rejected(self):
        b = SignalBundle.from_arrays("s", 2.0, {"A1": np.ones(20), "A2": np.zeros(20)})
        with pytest.raises(ValueError, match="constant"):
            ctw_align(b, ["A1", "A2"])

    def test_needs_two(self, rng):
        with pytest.raises(ValueError):
            ctw_align(_lagged_bundle(rng), ["A1"])

    def test_physio_warp_toggle(self, rng):
        x = smooth_signal(rng, 300)
        b = SignalBundle.from_arrays("s", 2.0, {"A1": x, "A2": np.roll(x, 4), "EDA": np.roll(x, 9)})
        res = ctw_align(b, ["A1", "A2", "EDA"], AlignConfig(warp_physio=False))
        assert res.paths["EDA"].is_identity()
        assert not res.paths["A2"].is_identity()

    def test_deterministic(self, rng):
        b = _lagged_bundle(rng)
        r1, r2 = ctw_align(b, ["A1", "A2"]), ctw_align(b, ["A1", "A2"])
        assert r1.paths == r2.paths
        np.testing.assert_array_equal(r1.aligned["A1"].values, r2.aligned["A1"].values)

    def test_paths_csv(self, rng):
        res = ctw_align(_lagged_bundle(rng, n=50), ["A1", "A2"])
        lines = res.paths_csv().splitlines()
        assert lines[0] == "channel,i,j"
        assert len(lines) == 1 + sum(len(p) for p in res.paths.values())
