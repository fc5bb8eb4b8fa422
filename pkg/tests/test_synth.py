import json
import math

import numpy as np
import pytest

from zeroshot_shm.adapt import estimate_spectra
from zeroshot_shm.signals import load_records, window_matrix
from zeroshot_shm.spectral import feature_matrix
from zeroshot_shm.synth import (
    DamageSpec,
    StructureSpec,
    default_source_spec,
    default_target_spec,
    make_tl_fixture,
    mass_matrix,
    natural_frequencies,
    simulate,
    simulate_response,
    stiffness_matrix,
    write_fixture,
)


def two_dof(**kw):
    base = dict(
        dof_count=2, masses=(1.0, 1.0), story_stiffnesses=(1.0, 1.0), damping_ratio=0.02,
        sensor_dofs=(0, 1), sampling_rate_hz=20.0,
    )
    base.update(kw)
    return StructureSpec(**base)


def test_two_dof_frequencies():
    w = natural_frequencies(two_dof())
    np.testing.assert_allclose(w, [math.sqrt((3 - math.sqrt(5)) / 2), math.sqrt((3 + math.sqrt(5)) / 2)], rtol=1e-12)
    np.testing.assert_allclose(w, [0.618, 1.618], atol=1e-3)


def test_stiffness_matrix_is_tridiagonal_shear_form():
    spec = two_dof(dof_count=3, masses=(1, 1, 1), story_stiffnesses=(3.0, 2.0, 1.0), sensor_dofs=(0,))
    np.testing.assert_array_equal(stiffness_matrix(spec), [[5, -2, 0], [-2, 3, -1], [0, -1, 1]])
    damaged = stiffness_matrix(spec, DamageSpec(1, 0.5))
    np.testing.assert_array_equal(damaged, [[4, -1, 0], [-1, 2, -1], [0, -1, 1]])


def test_identity_damage_gives_identical_output():
    spec = default_source_spec()
    a = simulate(spec, None, 5.0, seed=11)
    b = simulate(spec, DamageSpec(0, 1.0), 5.0, seed=11)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.samples, y.samples)


@pytest.mark.parametrize("spec", [default_source_spec(), default_target_spec()], ids=["source", "target"])
def test_damage_lowers_fundamental_monotonically(spec):
    f = [natural_frequencies(spec, DamageSpec(0, k))[0] for k in (1.0, 0.9, 0.7, 0.5)]
    assert all(a > b for a, b in zip(f, f[1:]))


def test_damage_validation():
    with pytest.raises(ValueError):
        DamageSpec(0, 1.5)
    with pytest.raises(ValueError):
        DamageSpec(0, 0.0)


def test_spec_validation():
    with pytest.raises(ValueError):
        two_dof(masses=(1.0,))
    with pytest.raises(ValueError):
        two_dof(sensor_dofs=(0, 2))
    with pytest.raises(ValueError):
        two_dof(damping_ratio=1.5)


def _energy(spec, states):
    M, K = mass_matrix(spec), stiffness_matrix(spec)
    n = spec.dof_count
    u, v = states[:, :n], states[:, n:]
    return 0.5 * np.einsum("ti,ij,tj->t", v, M, v) + 0.5 * np.einsum("ti,ij,tj->t", u, K, u)


def test_free_response_energy_decays():
    spec = two_dof()
    x0 = np.array([0.0, 0.0, 1.0, -0.5])  # velocity impulse
    _, states = simulate_response(spec, np.zeros((400, 2)), 0.05, x0=x0)
    e = _energy(spec, states)
    assert np.all(np.diff(e) <= 1e-15 * e[0])
    assert e[-1] < 0.5 * e[0]


def test_halving_dt_changes_rms_below_one_percent():
    spec = two_dof()
    x0 = np.array([0.3, -0.1, 0.0, 0.0])
    acc1, _ = simulate_response(spec, np.zeros((200, 2)), 0.1, x0=x0)
    acc2, _ = simulate_response(spec, np.zeros((400, 2)), 0.05, x0=x0)
    r1 = np.sqrt(np.mean(acc1**2))
    r2 = np.sqrt(np.mean(acc2[::2] ** 2))
    assert abs(r1 - r2) / r2 < 0.01


def test_simulate_is_deterministic_and_seed_dependent():
    spec = default_source_spec()
    a = simulate(spec, None, 2.0, seed=1)
    b = simulate(spec, None, 2.0, seed=1)
    c = simulate(spec, None, 2.0, seed=2)
    np.testing.assert_array_equal(a[0].samples, b[0].samples)
    assert not np.array_equal(a[0].samples, c[0].samples)
    assert len(a) == len(spec.sensor_dofs) and len(a[0]) == 512


@pytest.fixture(scope="module")
def short_fixture():
    return make_tl_fixture(
        seed=5, source_healthy_s=60, source_damage_s=20, target_healthy_s=30, target_damage_s=10
    )


def test_fixture_structure(short_fixture):
    fx = short_fixture
    assert len(fx.source_spec.sensor_dofs) == len(fx.target_spec.sensor_dofs) == 4
    assert fx.source_spec.dof_count != fx.target_spec.dof_count
    assert fx.source_spec.sampling_rate_hz != fx.target_spec.sampling_rate_hz
    labels = sorted(c.label for c in fx.damage_cases("target"))
    assert labels == ["damage_0.5", "damage_0.7", "damage_0.9"]


def test_fixture_spectra_orders_differ(short_fixture):
    fx = short_fixture
    feats = {
        d: feature_matrix(window_matrix(fx.get(d, "healthy").records, 256)) for d in ("source", "target")
    }
    ss, ts = estimate_spectra(feats["source"]), estimate_spectra(feats["target"])
    for ch in range(4):
        differ = np.mean(np.argsort(ss[ch], kind="stable") != np.argsort(ts[ch], kind="stable"))
        assert differ >= 0.5


def test_fixture_seed_contract():
    kw = dict(damage_factors=(0.5,), source_healthy_s=2, source_damage_s=2, target_healthy_s=2, target_damage_s=2)
    a, b = make_tl_fixture(1, **kw), make_tl_fixture(2, **kw)
    assert a.source_spec == b.source_spec
    assert not np.array_equal(a.cases[0].records[0].samples, b.cases[0].records[0].samples)


def test_write_fixture_round_trip(tmp_path):
    fx = make_tl_fixture(
        3, damage_factors=(0.7,), source_healthy_s=2, source_damage_s=2, target_healthy_s=2, target_damage_s=2
    )
    path = write_fixture(fx, tmp_path / "data")
    root = path.parent
    manifest = json.loads(path.read_text())
    assert {(c["domain"], c["label"]) for c in manifest["cases"]} == {
        ("source", "healthy"), ("target", "healthy"), ("source", "damage_0.7"), ("target", "damage_0.7"),
    }
    case = next(c for c in manifest["cases"] if c["label"] == "damage_0.7" and c["domain"] == "target")
    assert case["damage"]["stiffness_factor"] == 0.7
    recs = load_records(root / case["path"], [0, 1, 2, 3])
    np.testing.assert_array_equal(recs[2].samples, fx.get("target", "damage_0.7").records[2].samples)
