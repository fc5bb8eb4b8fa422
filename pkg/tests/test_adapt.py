import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zeroshot_shm.adapt import (
    SpectralMapping,
    build_channel_mapping,
    build_mapping,
    estimate_spectra,
    estimate_spectrum,
    inverse_transform,
    transform,
)


def test_spectrum_examples():
    np.testing.assert_array_equal(estimate_spectrum(np.array([[1.0, 3.0], [3.0, 1.0]])).power, [5, 5])
    np.testing.assert_array_equal(estimate_spectrum(np.array([[2.0, 0.5]])).power, [4, 0.25])


def test_spectrum_matches_accumulate_and_divide():
    rows = np.random.default_rng(0).uniform(0, 10, (50, 12))
    acc = np.zeros(12)
    for r in rows:
        for j, v in enumerate(r):
            acc[j] += v * v
    np.testing.assert_allclose(estimate_spectrum(rows).power, acc / 50, rtol=1e-12)


def test_spectrum_needs_windows():
    with pytest.raises(ValueError):
        estimate_spectrum(np.zeros((0, 3)))


def test_mapping_hand_example():
    m = build_channel_mapping([4.0, 1.0, 9.0], [1.0, 16.0, 4.0])
    np.testing.assert_array_equal(m.arg_s, [1, 0, 2])
    np.testing.assert_array_equal(m.arg_t, [0, 2, 1])
    np.testing.assert_allclose(m.c_st, [1.0, 1.0, 0.75], rtol=1e-15)
    np.testing.assert_allclose(m.apply(np.array([2.0, 8.0, 4.0])), [4.0, 2.0, 6.0], rtol=1e-15)


def test_identity_mapping():
    ss = np.array([3.0, 1.0, 2.0, 7.0])
    m = build_channel_mapping(ss, ss)
    np.testing.assert_array_equal(m.arg_s, m.arg_t)
    np.testing.assert_array_equal(m.c_st, 1.0)
    f = np.array([0.1, 0.2, 0.3, 0.4])
    np.testing.assert_array_equal(m.apply(f), f)
    np.testing.assert_array_equal(m.apply(np.zeros(4)), 0.0)


def test_ties_broken_by_lower_index():
    m = build_channel_mapping([2.0, 1.0, 2.0], [5.0, 5.0, 5.0])
    np.testing.assert_array_equal(m.arg_s, [1, 0, 2])
    np.testing.assert_array_equal(m.arg_t, [0, 1, 2])


def test_zero_target_line_uses_floor():
    m = build_channel_mapping([1.0, 4.0], [0.0, 1.0])
    assert m.floored_lines == [0]
    assert m.c_st[0] == pytest.approx(np.sqrt(1.0 / 1e-12))
    assert np.all(np.isfinite(m.apply(np.array([1.0, 1.0]))))


def test_length_mismatch():
    with pytest.raises(ValueError):
        build_channel_mapping([1.0, 2.0], [1.0, 2.0, 3.0])
    mapping = build_mapping(np.ones((2, 4)), np.ones((2, 4)))
    with pytest.raises(ValueError):
        transform(mapping, np.ones(7))


def test_no_reclipping():
    m = build_mapping([[100.0, 1.0]], [[1.0, 1.0]])
    out = transform(m, np.array([[[10.0, 10.0]]]))
    assert out.max() > 10


def test_flat_and_batched_agree():
    rng = np.random.default_rng(2)
    mapping = build_mapping(rng.uniform(0.1, 5, (3, 8)), rng.uniform(0.1, 5, (3, 8)))
    batch = rng.uniform(0, 10, (4, 3, 8))
    out = transform(mapping, batch)
    for i in range(4):
        np.testing.assert_array_equal(transform(mapping, batch[i].reshape(-1)), out[i].reshape(-1))


def test_mapping_json_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    mapping = build_mapping(rng.uniform(0, 5, (2, 6)), rng.uniform(0, 5, (2, 6)), w=12, calibration_windows=9)
    mapping.save(tmp_path / "m.json")
    back = SpectralMapping.load(tmp_path / "m.json")
    x = rng.uniform(0, 10, (5, 2, 6))
    np.testing.assert_array_equal(transform(back, x), transform(mapping, x))
    assert back.w == 12 and back.calibration_windows == 9


spectra = st.integers(0, 2**32 - 1).map(lambda s: np.random.default_rng(s))


@settings(max_examples=20, deadline=None)
@given(rng=spectra, n_windows=st.integers(1, 40), lines=st.integers(2, 64))
def test_transformed_calibration_power_equals_source(rng, n_windows, lines):
    source = rng.lognormal(0, 2, size=lines)
    calib = rng.lognormal(0, 1, size=(n_windows, 1, lines))
    # occasionally a dead target line to exercise the floor
    if rng.uniform() < 0.3:
        calib[:, 0, rng.integers(lines)] = 0.0
    ts = estimate_spectra(calib)
    mapping = build_mapping(source[None], ts)
    m = mapping.channels[0]
    power = estimate_spectra(transform(mapping, calib))[0]
    keep = np.ones(lines, bool)
    for k in range(lines):
        if m.arg_t[k] in m.floored_lines:
            keep[m.arg_s[k]] = False
    np.testing.assert_allclose(power[keep], source[keep], rtol=1e-9)
    # order alignment with the same tie rule
    if keep.all():
        np.testing.assert_array_equal(np.argsort(power, kind="stable"), m.arg_s)


@settings(max_examples=20, deadline=None)
@given(rng=spectra, lines=st.integers(2, 64))
def test_inverse_reconstructs(rng, lines):
    mapping = build_mapping(rng.uniform(0, 5, (2, lines)), rng.uniform(0, 5, (2, lines)))
    x = rng.uniform(0, 10, (3, 2, lines))
    np.testing.assert_allclose(inverse_transform(mapping, transform(mapping, x)), x, rtol=1e-12, atol=1e-300)


@settings(max_examples=20, deadline=None)
@given(rng=spectra)
def test_transform_is_permutation_with_positive_scaling(rng):
    mapping = build_mapping(rng.uniform(0.1, 5, (1, 10)), rng.uniform(0.1, 5, (1, 10)))
    m = mapping.channels[0]
    assert sorted(m.arg_s.tolist()) == list(range(10)) == sorted(m.arg_t.tolist())
    assert np.all(m.c_st > 0)
