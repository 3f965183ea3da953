"""Split-step GPE evolution, presets and conserved quantities."""

import numpy as np
import pytest

from qlighthill.gpe import (GaugeConfig, NO_POTENTIAL, NumericalAbort, PhysicsParams, PotentialSpec,
                            closed_form, conserved_diagnostics, energy_of, evolve, initialize_state,
                            norm_of, preflight_dt, strang_step)
from qlighthill.grid import make_grid

FREE = PhysicsParams()


@pytest.fixture
def line():
    return make_grid(1, [40.0], [256], [-20.0])


class TestPhysicsParams:
    def test_rejects_nonpositive_hbar(self):
        with pytest.raises(ValueError, match="hbar"):
            PhysicsParams(hbar=0.0)

    def test_rejects_charge(self):
        with pytest.raises(ValueError, match="charge"):
            PhysicsParams(charge=1.0)

    def test_gauge_only_trivial(self):
        GaugeConfig()
        with pytest.raises(ValueError):
            GaugeConfig(vector_potential=np.ones(3))

    def test_healing_length(self):
        assert PhysicsParams(coupling=4.0).healing_length(1.0) == pytest.approx(0.5)


class TestPotentialSpec:
    def test_harmonic_values_and_gradient(self, line):
        V = PotentialSpec("harmonic", omega=2.0)
        x = line.coords[0]
        assert np.allclose(V.values(line, FREE), 2.0 * x**2)
        assert np.allclose(V.gradient(line, FREE)[0], 4.0 * x)

    def test_expression_gradient_is_symbolic(self, line):
        V = PotentialSpec("expression", expression="cos(x) + x**2 / 10")
        x = line.coords[0]
        assert np.allclose(V.gradient(line, FREE)[0], -np.sin(x) + x / 5)
        assert V.is_static

    def test_scripted_scale_is_time_dependent(self, line):
        V = PotentialSpec("harmonic", omega=1.0, time_scale="1 + t")
        assert not V.is_static
        assert np.allclose(V.values(line, FREE, 1.0), 2 * V.values(line, FREE, 0.0))

    def test_unknown_symbol_rejected(self, line):
        V = PotentialSpec("expression", expression="x + q")
        with pytest.raises(ValueError, match="unknown symbols"):
            V.values(line, FREE)

    def test_tabulated_must_be_finite(self):
        with pytest.raises(ValueError):
            PotentialSpec("tabulated", table=np.array([1.0, np.nan]))


class TestPresets:
    def test_uniform(self, line):
        psi = initialize_state(line, "uniform", FREE, amplitude=2.0)
        assert np.all(psi == 2.0) and np.all(np.abs(psi) ** 2 == 4.0)

    def test_plane_wave(self):
        g = make_grid(1, [2 * np.pi], [64], [0.0])
        psi = initialize_state(g, "plane_wave", FREE, k=3)
        assert np.allclose(psi, np.exp(3j * g.coords[0]))
        assert np.allclose(np.abs(psi) ** 2, 1.0)

    def test_harmonic_ground_width(self, line):
        omega = 0.5
        psi = initialize_state(line, "harmonic_ground", FREE, omega=omega)
        n = np.abs(psi) ** 2
        x = line.coords[0]
        var = (n * x**2).sum() / n.sum()
        assert var == pytest.approx(0.5 * FREE.hbar / (FREE.mass * omega), rel=1e-10)

    def test_vortex_needs_two_dimensions(self, line):
        with pytest.raises(ValueError, match="dim"):
            initialize_state(line, "vortex", FREE)

    def test_soliton_sign_requirements(self, line):
        with pytest.raises(ValueError, match="g > 0"):
            initialize_state(line, "dark_soliton", FREE)
        with pytest.raises(ValueError, match="g < 0"):
            initialize_state(line, "bright_soliton", PhysicsParams(coupling=1.0))

    def test_dark_soliton_approaches_tanh(self):
        g = make_grid(1, [60.0], [512], [-30.0])
        psi = initialize_state(g, "dark_soliton", PhysicsParams(coupling=1.0), position=-15.0)
        x = g.coords[0]
        core = np.abs(x + 15.0) < 6
        assert np.max(np.abs(psi.real[core] - np.tanh(x[core] + 15.0))) < 1e-10

    def test_unknown_preset(self, line):
        with pytest.raises(ValueError, match="unknown preset"):
            initialize_state(line, "soliton", FREE)


class TestStrangStep:
    def test_plane_wave_phase_advance(self):
        g = make_grid(1, [2 * np.pi], [64], [0.0])
        psi = np.exp(3j * g.coords[0])
        dt = 0.01
        out = strang_step(psi, g, None, FREE, dt)
        assert np.allclose(out, psi * np.exp(-1j * 9 * dt / 2), atol=1e-13)

    def test_uniform_self_phase_rotation(self, line):
        p = PhysicsParams(coupling=2.0)
        A = 1.5
        psi = np.full(line.shape, A, dtype=complex)
        traj = evolve(psi, line, NO_POTENTIAL, p, 1.0, 0.01)
        expect = A * np.exp(-1j * 2.0 * A**2 * traj.times[-1])
        assert np.allclose(traj.psi[-1], expect, atol=1e-11)
        assert np.allclose(np.abs(traj.psi[-1]), A, atol=1e-13)

    def test_small_step_limit(self, line):
        psi = initialize_state(line, "gaussian", FREE, sigma=1.0)
        diffs = [np.linalg.norm(strang_step(psi, line, None, FREE, dt) - psi) for dt in (1e-2, 1e-3, 1e-4)]
        assert diffs[0] > diffs[1] > diffs[2] and diffs[2] < 1e-3

    def test_rejects_nonpositive_dt(self, line):
        with pytest.raises(ValueError):
            strang_step(np.ones(line.shape, complex), line, None, FREE, 0.0)


class TestEvolve:
    def test_harmonic_ground_stationary_over_one_period(self, line):
        V = PotentialSpec("harmonic", omega=1.0)
        psi = initialize_state(line, "harmonic_ground", FREE, omega=1.0)
        traj = evolve(psi, line, V, FREE, 2 * np.pi, 2 * np.pi / 2000)
        n0, n1 = np.abs(psi) ** 2, np.abs(traj.psi[-1]) ** 2
        assert np.linalg.norm(n1 - n0) / np.linalg.norm(n0) < 1e-8

    def test_free_gaussian_spreading_law(self, line):
        sigma, t_end = 1.0, 2.0
        psi = initialize_state(line, "gaussian", FREE, sigma=sigma)
        traj = evolve(psi, line, NO_POTENTIAL, FREE, t_end, 1e-3)
        n = np.abs(traj.psi[-1]) ** 2
        x = line.coords[0]
        var = (n * x**2).sum() / n.sum()
        assert var == pytest.approx(sigma**2 * (1 + (t_end / (2 * sigma**2)) ** 2), rel=1e-9)

    def test_free_gaussian_second_order_in_dt(self, line):
        p = PhysicsParams(coupling=0.0)
        psi0 = initialize_state(line, "gaussian", p, sigma=1.0, boost=1.0)
        exact = closed_form(line, "gaussian", p, 1.0, sigma=1.0, boost=1.0)
        V = PotentialSpec("expression", expression="0.2*cos(2*pi*x/40)")
        ref = evolve(psi0, line, V, p, 1.0, 1e-4).psi[-1]
        errs = [np.linalg.norm(evolve(psi0, line, V, p, 1.0, dt).psi[-1] - ref) for dt in (0.02, 0.01)]
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)
        assert np.linalg.norm(evolve(psi0, line, NO_POTENTIAL, p, 1.0, 0.01).psi[-1] - exact) < 1e-10

    def test_dark_soliton_stationary(self):
        g = make_grid(1, [24.0], [256], [-12.0])
        p = PhysicsParams(coupling=1.0)
        psi = initialize_state(g, "dark_soliton", p, position=-6.0)
        traj = evolve(psi, g, NO_POTENTIAL, p, 1.0, preflight_dt(g, p, psi))
        n0, n1 = np.abs(psi) ** 2, np.abs(traj.psi[-1]) ** 2
        assert np.linalg.norm(n1 - n0) / np.linalg.norm(n0) < 1e-6

    def test_snapshot_stride(self, line):
        psi = initialize_state(line, "gaussian", FREE)
        traj = evolve(psi, line, NO_POTENTIAL, FREE, 0.1, 0.01, snapshot_stride=5)
        assert np.allclose(np.diff(traj.times), 0.05)
        assert traj.snapshot_dt == pytest.approx(0.05)

    def test_blowup_aborts_with_time(self, line):
        psi = initialize_state(line, "gaussian", FREE)
        psi[3] = np.nan
        with pytest.raises(NumericalAbort) as err:
            evolve(psi, line, NO_POTENTIAL, FREE, 0.1, 0.01)
        assert err.value.time == 0.0

    def test_norm_drift_aborts(self, line):
        psi = initialize_state(line, "gaussian", FREE)
        with pytest.raises(NumericalAbort, match="norm drift"):
            evolve(psi, line, NO_POTENTIAL, FREE, 0.1, 0.01, norm_tol=-1.0)

    def test_time_reversal(self, line):
        p = PhysicsParams(coupling=1.0)
        psi0 = initialize_state(line, "gaussian", p, sigma=1.0, boost=0.5)
        fwd = evolve(psi0, line, NO_POTENTIAL, p, 0.5, 1e-3).psi[-1]
        back = np.conj(evolve(np.conj(fwd), line, NO_POTENTIAL, p, 0.5, 1e-3).psi[-1])
        assert np.linalg.norm(back - psi0) / np.linalg.norm(psi0) < 1e-6

    def test_homogeneity_without_interaction(self, line):
        w = 2 * np.exp(1j * np.pi / 3)
        psi0 = initialize_state(line, "gaussian", FREE, boost=1.0)
        a = evolve(psi0, line, NO_POTENTIAL, FREE, 0.2, 1e-3).psi[-1]
        b = evolve(w * psi0, line, NO_POTENTIAL, FREE, 0.2, 1e-3).psi[-1]
        assert np.max(np.abs(b - w * a)) < 1e-13 * np.max(np.abs(b))


class TestDiagnostics:
    def test_norm_conserved_to_round_off(self, line):
        p = PhysicsParams(coupling=1.0)
        psi = initialize_state(line, "gaussian", p, boost=1.0)
        traj = evolve(psi, line, PotentialSpec("harmonic", omega=0.3), p, 1.0, 1e-3)
        norm, _ = conserved_diagnostics(traj)
        assert np.max(np.abs(norm - norm[0])) / norm[0] < 1e-12

    def test_harmonic_ground_energy(self, line):
        omega = 0.7
        V = PotentialSpec("harmonic", omega=omega)
        psi = initialize_state(line, "harmonic_ground", FREE, omega=omega)
        E = energy_of(psi, line, FREE, V.values(line, FREE))
        assert E == pytest.approx(0.5 * omega * norm_of(psi, line), rel=1e-8)

    def test_free_gaussian_energy_constant(self, line):
        psi = initialize_state(line, "gaussian", FREE, boost=1.0)
        traj = evolve(psi, line, NO_POTENTIAL, FREE, 1.0, 1e-3, snapshot_stride=100)
        assert np.max(np.abs(traj.energy - traj.energy[0])) / traj.energy[0] < 1e-8


class TestPreflight:
    def test_kinetic_limit(self, line):
        dt = preflight_dt(line, FREE, np.ones(line.shape, complex))
        assert dt == pytest.approx(0.1 * line.spacing[0] ** 2)

    def test_interaction_limit(self, line):
        p = PhysicsParams(coupling=1e4)
        dt = preflight_dt(line, p, np.ones(line.shape, complex))
        assert dt == pytest.approx(0.05 / 1e4)
