"""Exposure scaling tests: fitted constants, inverses, and the scaling
relation between a reference tone curve and its rescaled counterpart."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdrsplat.exposure import (
    DegenerateExposuresError,
    ExposureScaler,
    ev_to_seconds,
    fit_scaler,
    hdr_from_learned,
    learned_from_hdr,
    scale_time,
)


class TestFitScaler:
    def test_reference_exposure_set(self):
        sc = fit_scaler([1 / 16, 1 / 4, 1.0])
        assert sc.r == 0.5
        assert abs(sc.s - 0.6931) < 1e-4
        ts = scale_time(sc, np.array([1 / 16, 1 / 4, 1.0]))
        assert ts[0] == pytest.approx(-math.log(2), abs=1e-12)
        assert ts[1] == pytest.approx(0.0, abs=1e-12)
        assert ts[2] == pytest.approx(math.log(2), abs=1e-12)

    def test_two_exposures_e_squared_apart(self):
        # log times sit 2 apart, so the scaled pair is symmetric at +-r
        t0 = 0.05
        sc = fit_scaler([t0, t0 * math.e ** 2])
        r = 2 / math.e ** 2
        assert sc.r == pytest.approx(r, rel=1e-12)
        assert scale_time(sc, t0) == pytest.approx(-r, abs=1e-12)
        assert scale_time(sc, t0 * math.e ** 2) == pytest.approx(r, abs=1e-12)

    def test_duplicates_deduplicated(self):
        sc = fit_scaler([1.0, 1 / 4, 1 / 4, 1 / 16, 1.0])
        assert sc.r == 0.5

    def test_single_distinct_time_rejected(self):
        with pytest.raises(DegenerateExposuresError):
            fit_scaler([1.0, 1.0])

    def test_nonpositive_time_rejected(self):
        with pytest.raises(ValueError):
            fit_scaler([0.0, 1.0])
        with pytest.raises(ValueError):
            fit_scaler([-2.0, 1.0])

    def test_close_spacing_warns_and_expands(self, caplog):
        with caplog.at_level("WARNING", logger="hdrsplat.exposure"):
            sc = fit_scaler([1.0, 1.5])
        assert sc.r == pytest.approx(4 / 3, rel=1e-12)
        assert any("r=" in rec.message for rec in caplog.records)

    @given(st.floats(1.2, 50.0), st.floats(1e-4, 10.0), st.integers(2, 7))
    @settings(max_examples=60)
    def test_geometric_series_properties(self, k, t1, n):
        times = [t1 * k ** i for i in range(n)]
        sc = fit_scaler(times)
        assert sc.r == pytest.approx(2 / k, rel=1e-9)
        ts = scale_time(sc, np.array(times))
        # symmetric about 0 with uniform spacing 2 ln k / k
        assert ts[0] == pytest.approx(-ts[-1], abs=1e-9)
        assert np.diff(ts) == pytest.approx(2 * math.log(k) / k, rel=1e-9)

    def test_fitted_set_always_symmetric(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            times = np.sort(rng.uniform(1e-3, 4.0, rng.integers(2, 8)))
            times = np.unique(times)
            if times.size < 2:
                continue
            sc = fit_scaler(times)
            assert scale_time(sc, times[0]) == pytest.approx(
                -scale_time(sc, times[-1]), abs=1e-9
            )


class TestScaleTime:
    def test_zero_points(self):
        sc = fit_scaler([1 / 16, 1 / 4, 1.0])
        assert scale_time(sc, math.exp(-sc.s / sc.r)) == pytest.approx(0.0, abs=1e-12)
        assert scale_time(sc, math.sqrt((1 / 16) * 1.0)) == pytest.approx(0.0, abs=1e-12)
        assert scale_time(sc, 1 / 4) == pytest.approx(0.0, abs=1e-12)

    def test_nonpositive_rejected(self):
        sc = ExposureScaler(0.5, 0.0)
        with pytest.raises(ValueError):
            scale_time(sc, 0.0)

    def test_ev_conversion(self):
        assert ev_to_seconds(0.0) == 1.0
        assert ev_to_seconds(3.0) == 8.0
        assert ev_to_seconds(-4.0) == pytest.approx(1 / 16)


class TestHdrMaps:
    def test_exponent_landmarks(self):
        sc = ExposureScaler(0.5, 0.7)
        assert hdr_from_learned(-sc.s, sc) == pytest.approx(1.0, rel=1e-15)
        assert hdr_from_learned(sc.r - sc.s, sc) == pytest.approx(math.e, rel=1e-15)
        assert learned_from_hdr(1.0, sc) == pytest.approx(-sc.s, abs=1e-15)

    def test_roundtrip_exact(self):
        sc = fit_scaler([1 / 16, 1 / 4, 1.0])
        rng = np.random.default_rng(1)
        e_prime = rng.uniform(-8.0, 5.0, 1000)
        back = learned_from_hdr(hdr_from_learned(e_prime, sc), sc)
        assert np.max(np.abs(back - e_prime) / np.maximum(np.abs(e_prime), 1.0)) < 1e-12
        e = rng.uniform(1e-6, 1e4, 1000)
        fwd = hdr_from_learned(learned_from_hdr(e, sc), sc)
        assert np.max(np.abs(fwd - e) / e) < 1e-12

    def test_substitution_identity(self):
        sc = ExposureScaler(0.37, -0.9)
        rng = np.random.default_rng(2)
        xs = rng.uniform(-5, 5, 200)
        e = np.exp((xs + sc.s) / sc.r)
        assert learned_from_hdr(e, sc) == pytest.approx(xs, abs=1e-10)

    def test_monotone_and_positive(self):
        sc = ExposureScaler(0.5, 0.2)
        e_prime = np.linspace(-50, 50, 501)
        e = hdr_from_learned(e_prime, sc)
        assert np.all(e > 0)
        assert np.all(np.diff(e) > 0)

    def test_overflow_saturates(self, caplog):
        sc = ExposureScaler(0.01, 0.0)
        with caplog.at_level("WARNING", logger="hdrsplat.exposure"):
            v = hdr_from_learned(1e4, sc)
        assert v == np.finfo(np.float64).max
        assert np.isfinite(v)

    def test_nonpositive_hdr_rejected(self):
        sc = ExposureScaler(0.5, 0.0)
        with pytest.raises(ValueError):
            learned_from_hdr(0.0, sc)

    def test_invalid_scaler_rejected(self):
        with pytest.raises(ValueError):
            ExposureScaler(0.0, 0.0)
        with pytest.raises(ValueError):
            ExposureScaler(1.0, math.nan)


class TestScalingRelation:
    def test_reference_curve_composed_with_rescale(self):
        # with C = g1(ln E + ln t), the curve g2(x) = g1(x / r) reproduces
        # C from the scaled coordinates: g2(t' + e') = g1(ln E + ln t)
        sc = fit_scaler([1 / 16, 1 / 8, 1 / 2, 1.0, 3.0])
        rng = np.random.default_rng(3)
        e = rng.uniform(1e-4, 50.0, 1000)
        t = rng.uniform(1e-3, 5.0, 1000)

        def g1(x):
            return 1.0 / (1.0 + np.exp(-0.8 * x))

        def g2(x):
            return g1(x / sc.r)

        lhs = g1(np.log(e) + np.log(t))
        rhs = g2(scale_time(sc, t) + learned_from_hdr(e, sc))
        assert np.max(np.abs(lhs - rhs)) < 1e-12
