import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cratercount.scores import (REPRESENTATIONS_1D, REPRESENTATIONS_2D, Axis, HistogramSpec,
                                ScoreHistogram, accumulate, accumulate_scores, axis_key,
                                join_scores, make_spec_from_training, parse_axis_key,
                                representation_axes)
from cratercount.templates import APPEARANCE, DERIVATIVE, DP, MSE, MatchResult


def results(key, scores, labels=None):
    kind, measure = parse_axis_key(key)
    labels = labels or ["unknown"] * len(scores)
    return [MatchResult(str(i), measure, kind, float(s), 0.1, lab)
            for i, (s, lab) in enumerate(zip(scores, labels))]


class TestNaming:
    def test_axis_keys(self):
        assert axis_key(APPEARANCE, MSE) == "grey_mse"
        assert axis_key(DERIVATIVE, DP) == "grad_dp"
        assert parse_axis_key("grad_mse") == (DERIVATIVE, MSE)

    def test_bad_key(self):
        with pytest.raises(ValueError):
            parse_axis_key("grey_ncc")

    def test_representations(self):
        assert len(REPRESENTATIONS_1D) == 4
        assert len(REPRESENTATIONS_2D) == 6
        assert representation_axes("grey_dp+grad_dp") == ["grey_dp", "grad_dp"]


class TestSpec:
    def test_range_without_margin(self):
        spec = make_spec_from_training([results("grey_dp", [0.0, 1.0])], margin=0.0)
        ax = spec.axes[0]
        assert (ax.lo, ax.hi) == (0.0, 1.0)

    def test_range_with_margin(self):
        ax = make_spec_from_training([results("grey_dp", [0.0, 1.0])], margin=0.1).axes[0]
        assert ax.lo == pytest.approx(-0.1) and ax.hi == pytest.approx(1.1)

    def test_default_bin_counts(self):
        one = make_spec_from_training([results("grey_dp", [0, 1])])
        two = make_spec_from_training([results("grey_dp", [0, 1]), results("grad_mse", [2, 5])])
        assert one.shape == (64,)
        assert two.shape == (32, 32) and two.n_bins == 1024

    def test_degenerate_range(self):
        with pytest.raises(ValueError):
            make_spec_from_training([results("grey_dp", [0.3, 0.3])])

    def test_axis_validation(self):
        with pytest.raises(ValueError):
            Axis(DP, APPEARANCE, 1, 0, 1)
        with pytest.raises(ValueError):
            Axis(DP, APPEARANCE, 4, 1, 1)

    def test_json_round_trip(self):
        spec = HistogramSpec((Axis(DP, APPEARANCE, 8, -0.1, 0.3), Axis(MSE, DERIVATIVE, 5, 0, 9)))
        assert HistogramSpec.from_json(spec.to_json()) == spec


class TestBinning:
    spec = HistogramSpec((Axis(DP, APPEARANCE, 4, 0.0, 1.0),))

    def test_empty_input(self):
        h = accumulate(self.spec, [])
        assert h.total == 0 and h.overflow_count == 0
        np.testing.assert_array_equal(h.counts, 0)

    def test_boundary_goes_to_upper_bin(self):
        np.testing.assert_array_equal(self.spec.bin_index([[0.25], [0.5], [0.0]]), [1, 2, 0])

    def test_last_bin_closed(self):
        assert self.spec.bin_index([[1.0]])[0] == 3

    def test_overflow(self):
        h = accumulate_scores(self.spec, [[-0.01], [1.01], [np.nan], [0.4]])
        assert h.overflow_count == 3 and h.total == 1

    def test_copies_land_in_one_bin(self):
        spec2 = HistogramSpec((Axis(DP, APPEARANCE, 4, 0, 1), Axis(DP, DERIVATIVE, 3, 0, 3)))
        h = accumulate_scores(spec2, [[0.6, 2.5]] * 7)
        assert h.counts[2 * 3 + 2] == 7 and h.total == 7

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.floats(-1, 2), st.floats(-1, 2)), max_size=60))
    def test_every_entry_counted_once(self, pts):
        spec2 = HistogramSpec((Axis(DP, APPEARANCE, 5, 0, 1), Axis(MSE, DERIVATIVE, 7, 0, 1)))
        h = accumulate_scores(spec2, np.array(pts, dtype=float).reshape(-1, 2))
        assert h.total + h.overflow_count == len(pts)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=50))
    def test_matches_numpy_histogram(self, vals):
        h = accumulate_scores(self.spec, np.array(vals)[:, None])
        ref, _ = np.histogram(vals, bins=4, range=(0, 1))
        np.testing.assert_array_equal(h.counts, ref)


class TestJoin:
    def test_join_and_missing_axis(self):
        spec = HistogramSpec((Axis(DP, APPEARANCE, 4, 0, 1), Axis(DP, DERIVATIVE, 4, 0, 1)))
        res = results("grey_dp", [0.1, 0.2, 0.3]) + results("grad_dp", [0.4, 0.5])
        with pytest.raises(KeyError, match="'2'"):
            join_scores(spec, res)
        ids, vals = join_scores(spec, res, ["0", "1"])
        np.testing.assert_array_equal(vals, [[0.1, 0.4], [0.2, 0.5]])

    def test_overflow_warning(self):
        spec = HistogramSpec((Axis(DP, APPEARANCE, 4, 0, 1),))
        with pytest.warns(UserWarning, match="outside"):
            accumulate(spec, results("grey_dp", [0.5, 3.0]), warn_overflow=True)


class TestHistogram:
    spec = HistogramSpec((Axis(DP, APPEARANCE, 3, 0, 1),))

    def test_add(self):
        a = ScoreHistogram(self.spec, [1, 2, 3], 1)
        b = ScoreHistogram(self.spec, [0, 1, 0], 2)
        c = a + b
        np.testing.assert_array_equal(c.counts, [1, 3, 3])
        assert c.overflow_count == 3

    def test_shape_and_sign_checked(self):
        with pytest.raises(ValueError):
            ScoreHistogram(self.spec, [1, 2])
        with pytest.raises(ValueError):
            ScoreHistogram(self.spec, [1, -2, 0])

    def test_json(self):
        h = ScoreHistogram(self.spec, [4, 0, 9], 2)
        d = h.to_json()
        assert set(d) == {"spec", "counts", "overflow_count"}
        back = ScoreHistogram.from_json(d)
        np.testing.assert_array_equal(back.counts, h.counts)
        assert back.spec == h.spec and back.overflow_count == 2
