import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_structure
from layerformer.errors import BadMaterialId, ConfigError, InvalidStructure
from layerformer.materials import MaterialDb, constant_material
from layerformer.tmm import (
    AmbientConfig,
    FieldSolution,
    Structure,
    WavelengthGrid,
    field_distribution,
    simulate,
    simulate_batch,
    z_samples,
)
from oracles.airy import airy_rt
from oracles.quarter_wave import bare_interface_reflectance, quarter_wave_reflectance

# frozen from tests/oracles/quarter_wave.py: 1/25 and 25/121
R_AIR_GLASS = 0.04
R_QUARTER_WAVE = 0.2066115702479339

AIR_GLASS = AmbientConfig(1.0, 1.5)


def test_frozen_values_match_oracle_script():
    assert bare_interface_reflectance(1.0, 1.5) == pytest.approx(R_AIR_GLASS, abs=1e-15)
    assert quarter_wave_reflectance(1.0, 2.0, 1.5) == pytest.approx(R_QUARTER_WAVE, abs=1e-15)


class TestAnalytic:
    def test_bare_interface(self, toy_db):
        sp = simulate(toy_db, Structure(()), amb=AIR_GLASS)
        assert np.all(np.abs(sp.R - R_AIR_GLASS) <= 1e-12)
        assert np.all(np.abs(sp.T - 0.96) <= 1e-12)

    def test_quarter_wave(self, toy_db):
        s = Structure(((2, 700.0 / 8),))  # toy_n2.0
        sp = simulate(toy_db, s, amb=AIR_GLASS)
        j = int(np.flatnonzero(sp.grid.wavelengths == 700.0)[0])
        assert abs(sp.R[j] - R_QUARTER_WAVE) < 1e-12
        assert abs(sp.T[j] - (1 - R_QUARTER_WAVE)) < 1e-12

    def test_half_wave_is_absentee(self, toy_db):
        sp = simulate(toy_db, Structure(((1, 700.0 / 3),)), amb=AIR_GLASS)  # n=1.5, half wave at 700
        j = int(np.flatnonzero(sp.grid.wavelengths == 700.0)[0])
        assert abs(sp.R[j] - R_AIR_GLASS) < 1e-12

    def test_absorber_is_lossy_and_passive(self, toy_db):
        thin = simulate(toy_db, Structure(((0, 100.0),)))
        thick = simulate(toy_db, Structure(((0, 500.0),)))
        assert np.all(thick.A > 0) and np.all(thin.A > 0)
        assert np.all(thick.T < thin.T)
        # single-pass attenuation exp(-4 pi k d / lambda) bounds transmission from above
        assert np.all(thick.T < np.exp(-4 * np.pi * 0.5 * 500.0 / thick.grid.wavelengths))

    def test_index_matched_stack_is_transparent(self):
        db = MaterialDb((constant_material("air_like", 1.0),))
        sp = simulate(db, Structure(((0, 123.0), (0, 77.0))), amb=AmbientConfig(1.0, 1.0))
        assert np.allclose(sp.R, 0, atol=1e-15) and np.allclose(sp.T, 1, atol=1e-14)


class TestOracleEquivalence:
    def test_random_structures(self, mixed_db):
        rng = np.random.default_rng(11)
        worst = 0.0
        for _ in range(200):
            s = random_structure(rng, len(mixed_db))
            sp = simulate(mixed_db, s)
            R, T = airy_rt(mixed_db, s)
            worst = max(worst, np.max(np.abs(R - sp.R)), np.max(np.abs(T - sp.T)))
        assert worst < 1e-8

    def test_nondefault_ambient(self, mixed_db):
        amb = AmbientConfig(1.33, 2.0 + 0.1j)
        s = Structure(((0, 40.0), (3, 210.0), (4, 15.0)))
        sp = simulate(mixed_db, s, amb=amb)
        R, T = airy_rt(mixed_db, s, amb=amb)
        assert np.max(np.abs(R - sp.R)) < 1e-12 and np.max(np.abs(T - sp.T)) < 1e-12


layer = st.tuples(st.integers(0, 3), st.floats(10.0, 500.0))


@settings(max_examples=150, deadline=None)
@given(st.lists(layer, min_size=1, max_size=20))
def test_energy_conservation(lossless_db, layers):
    sp = simulate(lossless_db, Structure(tuple(layers)))
    assert np.max(np.abs(sp.R + sp.T - 1.0)) < 1e-10


@settings(max_examples=150, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.floats(10.0, 500.0)), min_size=0, max_size=20))
def test_passivity(mixed_db, layers):
    sp = simulate(mixed_db, Structure(tuple(layers)))
    assert np.all(sp.R >= 0) and np.all(sp.R <= 1)
    assert np.all(sp.T >= 0) and np.all(sp.T <= 1)
    assert np.all(sp.R + sp.T <= 1 + 1e-9)


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.tuples(st.integers(0, 4), st.floats(20.0, 500.0)), min_size=1, max_size=10),
    st.integers(0, 9),
    st.floats(0.05, 0.95),
)
def test_splitting_a_layer_changes_nothing(mixed_db, layers, which, frac):
    which %= len(layers)
    m, d = layers[which]
    d1 = d * frac
    split = layers[:which] + [(m, d1), (m, d - d1)] + layers[which + 1 :]
    a = simulate(mixed_db, Structure(tuple(layers)))
    # the split halves may be thinner than the 10 nm minimum, so skip validation
    s = object.__new__(Structure)
    object.__setattr__(s, "layers", tuple(split))
    object.__setattr__(s, "max_layers", 21)
    b = simulate(mixed_db, s)
    assert np.max(np.abs(a.R - b.R)) < 1e-10 and np.max(np.abs(a.T - b.T)) < 1e-10


def test_grid_refinement_is_pointwise(mixed_db):
    s = Structure(((0, 80.0), (4, 30.0), (2, 300.0)))
    coarse = simulate(mixed_db, s, WavelengthGrid(400, 1100, 10))
    fine = simulate(mixed_db, s, WavelengthGrid(400, 1100, 2))
    assert np.array_equal(fine.R[::5], coarse.R)
    assert np.array_equal(fine.T[::5], coarse.T)


class TestBatch:
    def test_singleton(self, toy_db):
        s = Structure(((0, 100.0), (2, 40.0)))
        (one,) = simulate_batch(toy_db, [s])
        ref = simulate(toy_db, s)
        assert np.array_equal(one.R, ref.R) and np.array_equal(one.T, ref.T)

    def test_repeat_is_deterministic(self, toy_db):
        s = Structure(((1, 330.0),))
        out = simulate_batch(toy_db, [s, s, s], workers=3)
        assert all(np.array_equal(o.R, out[0].R) and np.array_equal(o.T, out[0].T) for o in out)

    @pytest.mark.parametrize("workers", [1, 4])
    def test_matches_serial(self, mixed_db, workers):
        rng = np.random.default_rng(3)
        batch = [random_structure(rng, len(mixed_db)) for _ in range(1000)]
        out = simulate_batch(mixed_db, batch, workers=workers)
        for s, sp in zip(batch, out):
            ref = simulate(mixed_db, s)
            assert np.array_equal(sp.R, ref.R) and np.array_equal(sp.T, ref.T)

    def test_error_carries_index(self, toy_db):
        batch = [Structure(((0, 50.0),)), Structure(((1, 50.0),)), Structure(((7, 50.0),))]
        with pytest.raises(BadMaterialId) as info:
            simulate_batch(toy_db, batch, workers=2)
        assert info.value.index == 2

    def test_env_caps_workers(self, monkeypatch):
        from layerformer.tmm import worker_count

        monkeypatch.setenv("OL_THREADS", "3")
        assert worker_count() == 3
        assert worker_count(2) == 2


class TestField:
    def test_empty_stack_unit_field(self, toy_db):
        fmap = field_distribution(toy_db, Structure(()), amb=AmbientConfig(1.0, 1.0), z_step_nm=5.0)
        assert fmap.magnitude.shape == (71, 1)
        assert np.allclose(fmap.magnitude, 1.0, atol=1e-15)

    def test_front_boundary(self, mixed_db):
        s = Structure(((4, 25.0), (2, 120.0), (0, 60.0)))
        sol = FieldSolution(mixed_db, s, WavelengthGrid().wavelengths, AmbientConfig())
        fmap = field_distribution(mixed_db, s, z_step_nm=5.0)
        assert np.allclose(fmap.magnitude[:, 0] ** 2, np.abs(1 + sol.r) ** 2, rtol=0, atol=1e-12)

    def test_interface_continuity(self, mixed_db):
        rng = np.random.default_rng(8)
        wl = WavelengthGrid().wavelengths
        for _ in range(20):
            s = random_structure(rng, len(mixed_db), max_layers=8)
            sol = FieldSolution(mixed_db, s, wl, AmbientConfig())
            eps = 1e-11
            for j in range(len(s)):
                z = sol.boundaries[j + 1]
                left = sol.field(j, s.thicknesses[j])
                right = sol.field(j + 1, 0.0)
                assert np.max(np.abs(np.abs(left) - np.abs(right))) < 1e-8
                # sampling just either side of the interface converges to the same value
                near = np.abs(sol.at(z - eps)) - np.abs(sol.at(z + eps))
                assert np.max(np.abs(near)) < 1e-8
            # field leaving the stack is the transmitted wave
            assert np.max(np.abs(sol.field(len(s), 0.0) - sol.t)) < 1e-10

    def test_refined_sampling_agrees(self, toy_db):
        s = Structure(((2, 87.5), (1, 120.0)))
        coarse = field_distribution(toy_db, s, z_step_nm=2.5)
        fine = field_distribution(toy_db, s, z_step_nm=0.5)
        assert np.allclose(fine.magnitude[:, ::5], coarse.magnitude, atol=1e-12)

    def test_shape(self, toy_db):
        s = Structure(((2, 87.5), (1, 120.0)))
        fmap = field_distribution(toy_db, s, z_step_nm=4.0)
        assert fmap.magnitude.shape == (71, int(np.ceil(207.5 / 4.0)) + 1)
        assert z_samples(200.0, 10.0).size == 21

    def test_bad_step(self, toy_db):
        with pytest.raises(ConfigError):
            field_distribution(toy_db, Structure(((0, 20.0),)), z_step_nm=0.0)


class TestValidation:
    def test_structure_bounds(self):
        with pytest.raises(InvalidStructure):
            Structure(((0, 9.9),))
        with pytest.raises(InvalidStructure):
            Structure(((0, 500.1),))
        with pytest.raises(InvalidStructure):
            Structure(tuple((0, 50.0) for _ in range(21)))

    def test_grid(self):
        g = WavelengthGrid()
        assert g.count == 71 and g.wavelengths[0] == 400 and g.wavelengths[-1] == 1100
        assert WavelengthGrid.parse("500:600:20").count == 6
        with pytest.raises(ConfigError):
            WavelengthGrid(400, 1100, 30)

    def test_lossy_incident_rejected(self):
        with pytest.raises(ConfigError):
            AmbientConfig(1.0 + 0.1j, 1.45)

    def test_spectrum_dimension(self, toy_db):
        assert simulate(toy_db, Structure(((0, 50.0),))).flat().shape == (142,)
