import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from slowdef.errors import DomainError
from slowdef.raster import PhaseGrid
from slowdef.rewrap import (C_BAND_WAVELENGTH_M, WrapParams, count_wrap_discontinuities,
                            displacement_to_wrapped, wrap, wrap_float32, wrap_gain, wrap_shift)

LAM = C_BAND_WAVELENGTH_M


def g(vals):
    a = np.atleast_2d(np.asarray(vals, dtype=np.float64))
    return PhaseGrid(a, np.ones(a.shape, bool), 100.0)


def test_wrap_gain_examples():
    assert wrap_gain(g([0.5]), 2).values[0, 0] == pytest.approx(1.0)
    assert wrap_gain(g([3.0]), 2).values[0, 0] == pytest.approx(6.0 - 2 * np.pi, abs=1e-12)
    assert wrap_gain(g([3.0]), 2).values[0, 0] == pytest.approx(-0.28319, abs=1e-5)


def test_wrap_gain_identity_on_wrapped_input():
    vals = np.linspace(-np.pi, np.pi, 101, endpoint=False)
    np.testing.assert_array_equal(wrap_gain(g(vals), 1).values[0], vals)


def test_wrap_gain_rejects_bad_mu():
    with pytest.raises(DomainError):
        wrap_gain(g([0.0]), 0)
    with pytest.raises(DomainError):
        WrapParams(mu=0)


def test_wrap_shift_examples():
    vals = np.array([-7.0, 0.3, 12.0])
    np.testing.assert_allclose(wrap_shift(g(vals), 0.0).values[0], wrap(vals))
    assert wrap_shift(g([np.pi - 0.1]), 0.2).values[0, 0] == pytest.approx(-np.pi + 0.1, abs=1e-12)
    assert wrap_shift(g([np.pi - 0.1]), 0.2).values[0, 0] == pytest.approx(-3.04159, abs=1e-5)
    np.testing.assert_allclose(wrap_shift(g(vals), 2 * np.pi).values, wrap_shift(g(vals), 0.0).values,
                               atol=1e-12)


def test_displacement_to_wrapped_examples():
    p = WrapParams(1, 0.0, LAM)
    full = displacement_to_wrapped(g([LAM / 2]), p).values[0, 0]
    assert abs(full) < 1e-9
    assert displacement_to_wrapped(g([LAM / 8]), p).values[0, 0] == pytest.approx(-np.pi / 2)
    assert displacement_to_wrapped(g([LAM / 8]), WrapParams(2, 0.0, LAM)).values[0, 0] == pytest.approx(-np.pi)


def test_mask_preserved():
    grid = PhaseGrid(np.array([[1.0, 9.0]]), np.array([[True, False]]), 1.0)
    out = wrap_gain(grid, 4)
    assert out.mask.tolist() == [[True, False]]


@pytest.mark.parametrize("k", [1, 2, 3, 4])
@pytest.mark.parametrize("mu", [1, 2, 4, 8])
def test_fringe_count_on_ramp(k, mu):
    # planar ramp spanning 2*pi*k, sampled finely enough that no fringe aliases
    ramp = np.linspace(0.0, 2 * np.pi * k, 4001)[None, :].repeat(3, axis=0)
    out = wrap_gain(g(ramp), mu)
    for row in out.values:
        assert count_wrap_discontinuities(row) == mu * k


@given(st.lists(st.floats(-1e4, 1e4), min_size=1, max_size=30), st.integers(1, 16))
def test_output_range(vals, mu):
    out = wrap_gain(g(vals), mu).values
    assert np.all(out >= -np.pi) and np.all(out < np.pi)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=30),
       st.floats(0, 20), st.floats(0, 20))
def test_shift_composition(vals, t1, t2):
    a = wrap_shift(wrap_shift(g(vals), t1), t2).values
    b = wrap_shift(g(vals), t1 + t2).values
    d = wrap(a - b)
    assert np.all(np.abs(d) < 1e-9)


def test_wrap_float32_stays_in_range():
    v = np.nextafter(np.pi, 0.0)
    out = wrap_float32(np.array([v, 0.0, -np.pi]))
    assert out.dtype == np.float32
    assert np.all(out.astype(np.float64) < np.pi) and np.all(out.astype(np.float64) >= -np.pi)
