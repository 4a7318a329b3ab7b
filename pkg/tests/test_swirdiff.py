import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from swirpad.swirdiff import (DiffSpec, build_diff_stack, enumerate_ordered_pairs,
                              normalized_diff, parse_spec_list)

from conftest import make_stack

SWIR7 = [940, 1050, 1200, 1300, 1450, 1550, 1650]


class TestDiffSpec:
    def test_textual_form(self):
        assert str(DiffSpec(1550, 1200)) == "1550-1200"
        assert DiffSpec.parse("1550-1200") == DiffSpec(1550, 1200)

    def test_parse_list(self):
        assert parse_spec_list("1450-940, 1550-1200") == (
            DiffSpec(1450, 940), DiffSpec(1550, 1200))

    def test_rejects_equal_wavelengths(self):
        with pytest.raises(ValueError):
            DiffSpec(940, 940)

    def test_parse_garbage(self):
        with pytest.raises(ValueError):
            DiffSpec.parse("940")
        with pytest.raises(ValueError):
            DiffSpec.parse("a-b")


class TestEnumerate:
    def test_seven_bands_gives_42(self):
        assert len(enumerate_ordered_pairs(SWIR7)) == 42

    def test_two_bands(self):
        assert enumerate_ordered_pairs([940, 1450]) == [
            DiffSpec(940, 1450), DiffSpec(1450, 940)]

    def test_single_band_empty(self):
        assert enumerate_ordered_pairs([940]) == []

    def test_duplicates_rejected(self):
        with pytest.raises(ValueError):
            enumerate_ordered_pairs([940, 940, 1450])

    def test_order_is_index_lexicographic(self):
        pairs = enumerate_ordered_pairs([3, 1, 2])
        assert pairs[:2] == [DiffSpec(3, 1), DiffSpec(3, 2)]
        assert pairs[2:4] == [DiffSpec(1, 3), DiffSpec(1, 2)]


class TestNormalizedDiff:
    def test_equal_images_zero(self):
        a = np.random.default_rng(0).uniform(0, 1, (5, 5)).astype(np.float32)
        assert np.all(normalized_diff(a, a.copy()) == 0.0)

    def test_single_pixel_value(self):
        # 0.4 / 0.8001
        d = normalized_diff(np.array([[0.6]]), np.array([[0.2]]), 1e-4)
        assert d[0, 0] == pytest.approx(0.499938, abs=1e-6)

    def test_all_zero_inputs(self):
        z = np.zeros((3, 3))
        assert np.all(normalized_diff(z, z) == 0.0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            normalized_diff(np.zeros((2, 2)), np.zeros((3, 3)))

    @settings(max_examples=40, deadline=None)
    @given(hnp.arrays(np.float64, (4, 3), elements=st.floats(0, 1)),
           hnp.arrays(np.float64, (4, 3), elements=st.floats(0, 1)))
    def test_antisymmetry_exact(self, a, b):
        assert np.array_equal(normalized_diff(a, b), -normalized_diff(b, a))

    @settings(max_examples=40, deadline=None)
    @given(hnp.arrays(np.float64, (4, 3), elements=st.floats(0, 1)),
           hnp.arrays(np.float64, (4, 3), elements=st.floats(0, 1)))
    def test_bounded_below_one(self, a, b):
        assert np.all(np.abs(normalized_diff(a, b)) < 1.0)

    def test_scale_invariance_at_zero_epsilon(self):
        # exact for power-of-two scaling, which is rounding-free
        rng = np.random.default_rng(1)
        a = rng.uniform(0.1, 1, (6, 6))
        b = rng.uniform(0.1, 1, (6, 6))
        base = normalized_diff(a, b, epsilon=0)
        for c in (0.25, 0.5, 2.0, 8.0):
            assert np.array_equal(normalized_diff(c * a, c * b, epsilon=0), base)

    def test_zero_epsilon_requires_positive_sum(self):
        with pytest.raises(ValueError):
            normalized_diff(np.zeros((2, 2)), np.zeros((2, 2)), epsilon=0)


class TestBuildDiffStack:
    def stack(self):
        rng = np.random.default_rng(2)
        return make_stack({wl: rng.uniform(0, 1, (8, 8)) for wl in SWIR7})

    def test_full_enumeration_is_42_channels(self):
        ds = build_diff_stack(self.stack(), enumerate_ordered_pairs(SWIR7))
        assert ds.maps.shape == (42, 8, 8)

    def test_swapped_specs_are_negations(self):
        ds = build_diff_stack(self.stack(),
                              [DiffSpec(940, 1450), DiffSpec(1450, 940)])
        assert np.array_equal(ds.maps[0], -ds.maps[1])

    def test_empty_specs(self):
        ds = build_diff_stack(self.stack(), [])
        assert ds.maps.shape == (0, 8, 8)

    def test_missing_wavelength_named(self):
        with pytest.raises(ValueError, match="999"):
            build_diff_stack(self.stack(), [DiffSpec(940, 999)])

    def test_order_preserved(self):
        specs = [DiffSpec(1450, 940), DiffSpec(940, 1050)]
        ds = build_diff_stack(self.stack(), specs)
        assert ds.specs == tuple(specs)
