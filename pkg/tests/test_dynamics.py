import math

import numpy as np
import pytest
from pydantic import ValidationError as PydanticValidationError
from scipy.integrate import simpson
from scipy.linalg import expm

from core.dynamics import (
    IDENTITY,
    PROJECTOR_E,
    PROJECTOR_G,
    SIGMA_MINUS,
    SIGMA_PLUS,
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    DriveSpec,
    ExperimentConstants,
    Postselect,
    QubitRates,
    TimeGrid,
    adjoint_derivative,
    adjoint_liouvillian,
    amplitude_for_theta,
    bloch_vector,
    dynamics_frame,
    envelope_area,
    expectation,
    lindblad_derivative,
    liouvillian,
    propagate_backward,
    propagate_backward_batch,
    propagate_forward,
    propagate_forward_batch,
    pulse_envelope,
    terminal_effect,
    thermal_state,
    validate_density_matrix,
    validate_effect_matrix,
    weak_value,
)
from core.error_processor import PostselectionError, ValidationError

PLUS = 0.5 * np.array([[1, 1], [1, 1]], dtype=complex)


def _spec(theta, constants):
    return DriveSpec.for_theta(theta, constants.gamma_a, constants.t_d, constants.w)


def _grid(constants, n_steps=4096):
    return TimeGrid(0.0, constants.t_d, n_steps)


def _vec_superoperator(H, rates):
    """Liouvillian sobre vec fila construido con productos de Kronecker"""
    eye = np.eye(2)

    def left(A):
        return np.kron(A, eye)

    def right(B):
        return np.kron(eye, B.T)

    def dissipator(L):
        LdL = L.conj().T @ L
        return left(L) @ right(L.conj().T) - 0.5 * (left(LdL) + right(LdL))

    return (-1j * (left(H) - right(H))
            + 0.5 * rates.gamma_phi * dissipator(SIGMA_Z)
            + rates.gamma_down * dissipator(SIGMA_MINUS)
            + rates.gamma_up * dissipator(SIGMA_PLUS))


def _expm_oracle(rho0, spec, rates, segments):
    edges = np.linspace(0.0, spec.t_d, segments + 1)
    v = np.asarray(rho0, dtype=complex).ravel()
    cache = {}
    for a, b in zip(edges[:-1], edges[1:]):
        t = np.linspace(a, b, 9)
        omega = float(simpson(spec.rabi(t), x=t) / (b - a))
        if omega not in cache:
            cache[omega] = expm(_vec_superoperator(-0.5 * omega * SIGMA_Y, rates) * (b - a))
        v = cache[omega] @ v
    return v.reshape(2, 2)


class TestTypes:
    def test_constants_defaults(self, constants):
        assert constants.gamma_a == pytest.approx(2 * math.pi * 20e3)
        assert constants.p_g_th + constants.p_e_th + constants.p_f_th == pytest.approx(1.0)
        assert constants.gamma_2 == pytest.approx(0.5 / 5.5e-6 + 1 / 2.4e-6)

    def test_constants_reject_bad_populations(self):
        with pytest.raises(PydanticValidationError):
            ExperimentConstants(p_g_th=0.9, p_e_th=0.2, p_f_th=0.02)

    def test_constants_reject_unknown_field(self):
        with pytest.raises(PydanticValidationError):
            ExperimentConstants(gamma_b=1.0)

    def test_rates_split(self, rates):
        assert rates.gamma_up + rates.gamma_down == pytest.approx(rates.gamma_1, rel=1e-15)
        assert rates.gamma_up == pytest.approx(0.088 / 0.98 / 5.5e-6)

    def test_rates_reject_radiative_above_total(self):
        with pytest.raises(ValidationError):
            QubitRates(gamma_1=1e5, gamma_phi=0.0, gamma_a=2e5, p_e_th=0.0)

    def test_rates_reject_inverted_population(self):
        with pytest.raises(ValidationError):
            QubitRates(gamma_1=1e5, gamma_phi=0.0, gamma_a=1e4, p_e_th=0.5)

    @pytest.mark.parametrize("n_steps", [8, 15, 17])
    def test_grid_rejects_bad_step_count(self, n_steps):
        with pytest.raises(ValidationError):
            TimeGrid(0.0, 1.0, n_steps)

    def test_grid_spacing(self):
        grid = TimeGrid(0.0, 400e-9, 4096)
        assert grid.dt == pytest.approx(400e-9 / 4096)
        assert grid.times.size == 4097
        assert grid.half_times.size == 8193

    def test_density_matrix_checks(self):
        validate_density_matrix(thermal_state(0.088))
        with pytest.raises(ValidationError):
            validate_density_matrix(np.diag([0.6, 0.6]))
        with pytest.raises(ValidationError):
            validate_density_matrix(np.array([[0.5, 0.5j], [0.5j, 0.5]]))
        with pytest.raises(ValidationError):
            validate_density_matrix(np.diag([1.2, -0.2]))

    def test_effect_matrix_is_not_trace_normalized(self):
        validate_effect_matrix(2.0 * IDENTITY)
        with pytest.raises(ValidationError):
            validate_effect_matrix(np.diag([1.0, -0.1]))


class TestEnvelope:
    def test_junction_and_flat_top(self, constants):
        spec = DriveSpec(amplitude=3.0, w=constants.w, t_d=constants.t_d, gamma_a=constants.gamma_a)
        assert pulse_envelope(spec, 2 * spec.w) == pytest.approx(3.0, rel=1e-15)
        assert pulse_envelope(spec, spec.t_d / 2) == 3.0
        assert pulse_envelope(spec, spec.t_d - 2 * spec.w) == pytest.approx(3.0, rel=1e-15)

    def test_start_value(self, constants):
        spec = DriveSpec(amplitude=1.0, w=10e-9, t_d=constants.t_d, gamma_a=constants.gamma_a)
        assert pulse_envelope(spec, 0.0) == pytest.approx(2.0 ** -16, rel=1e-12)
        assert pulse_envelope(spec, spec.t_d) == pytest.approx(2.0 ** -16, rel=1e-12)

    def test_continuous_at_junctions(self, constants):
        spec = DriveSpec(amplitude=1.0, w=constants.w, t_d=constants.t_d, gamma_a=constants.gamma_a)
        eps = 1e-18
        for junction in (2 * spec.w, spec.t_d - 2 * spec.w):
            left = pulse_envelope(spec, junction - eps)
            right = pulse_envelope(spec, junction + eps)
            assert abs(left - right) < 1e-12

    def test_non_negative(self, constants):
        spec = _spec(math.pi, constants)
        assert np.all(pulse_envelope(spec, np.linspace(0, spec.t_d, 1001)) >= 0)

    def test_rejects_time_outside_pulse(self, constants):
        spec = _spec(math.pi, constants)
        with pytest.raises(ValidationError):
            pulse_envelope(spec, -1e-9)
        with pytest.raises(ValidationError):
            pulse_envelope(spec, spec.t_d + 1e-9)

    def test_rejects_overlapping_edges(self):
        with pytest.raises(ValidationError):
            DriveSpec(amplitude=1.0, w=10e-9, t_d=30e-9, gamma_a=1e5)

    def test_zero_angle_gives_zero_amplitude(self, constants):
        assert amplitude_for_theta(0.0, constants.gamma_a, constants.t_d, constants.w) == 0.0

    def test_negative_angle_rejected(self, constants):
        with pytest.raises(ValidationError):
            amplitude_for_theta(-0.1, constants.gamma_a, constants.t_d, constants.w)

    @pytest.mark.parametrize("theta", [0.3, math.pi, 4.4 * math.pi])
    def test_amplitude_matches_closed_form_area(self, theta, constants):
        amplitude = amplitude_for_theta(theta, constants.gamma_a, constants.t_d, constants.w)
        area = envelope_area(constants.t_d, constants.w)
        assert amplitude == pytest.approx(theta / (2 * math.sqrt(constants.gamma_a) * area), rel=1e-7)
        assert _spec(theta, constants).theta == pytest.approx(theta, rel=1e-7)

    def test_square_pulse_limit(self, constants):
        # w -> 0: el área tiende a t_d
        w = 1e-13
        amplitude = amplitude_for_theta(math.pi, constants.gamma_a, constants.t_d, w)
        assert amplitude == pytest.approx(math.pi / (2 * math.sqrt(constants.gamma_a) * constants.t_d), rel=1e-3)
        n_in = amplitude ** 2 * constants.t_d
        assert n_in == pytest.approx(49.1, abs=0.05)


class TestGenerators:
    def test_thermal_state_is_stationary(self, rates):
        rho = thermal_state(rates.stationary_excited_population)
        np.testing.assert_allclose(lindblad_derivative(rho, 0.0, rates), 0.0, atol=1e-6)

    def test_pure_decay(self):
        rates = QubitRates(gamma_1=1 / 5.5e-6, gamma_phi=0.0, gamma_a=1e5, p_e_th=0.0)
        drho = lindblad_derivative(PROJECTOR_E, 0.0, rates)
        assert drho[1, 1].real == pytest.approx(-rates.gamma_down)
        assert drho[0, 0].real == pytest.approx(rates.gamma_down)

    def test_drive_rotates_towards_plus_x(self, ideal_rates):
        omega = 2 * math.pi * 1e6
        drho = lindblad_derivative(PROJECTOR_G, omega, ideal_rates)
        assert expectation(SIGMA_X, drho).real == pytest.approx(omega)
        assert abs(expectation(SIGMA_Y, drho)) < 1e-9
        assert abs(expectation(SIGMA_Z, drho)) < 1e-9

    def test_derivative_is_traceless_and_hermitian(self, rates, rng):
        for _ in range(10):
            bloch = rng.normal(size=3)
            bloch *= rng.uniform(0, 1) / np.linalg.norm(bloch)
            rho = 0.5 * (IDENTITY + bloch[0] * SIGMA_X + bloch[1] * SIGMA_Y + bloch[2] * SIGMA_Z)
            drho = lindblad_derivative(rho, rng.uniform(0, 5e7), rates)
            assert abs(np.trace(drho)) < 1e-12 * np.abs(drho).max() + 1e-6
            np.testing.assert_allclose(drho, drho.conj().T, atol=1e-9)

    def test_identity_is_backward_stationary(self, rates):
        np.testing.assert_allclose(adjoint_derivative(IDENTITY, 3e7, rates), 0.0, atol=1e-6)

    def test_adjoint_decay_of_excited_effect(self):
        rates = QubitRates(gamma_1=1 / 5.5e-6, gamma_phi=0.0, gamma_a=1e5, p_e_th=0.0)
        deff = adjoint_derivative(PROJECTOR_E, 0.0, rates)
        assert deff[1, 1].real == pytest.approx(rates.gamma_down)
        assert abs(deff[0, 0]) < 1e-9

    def test_adjoint_without_rates_or_drive(self, ideal_rates):
        effect = np.array([[0.7, 0.1 - 0.2j], [0.1 + 0.2j, 0.4]])
        np.testing.assert_array_equal(adjoint_derivative(effect, 0.0, ideal_rates), 0.0)

    def test_superoperators_match_derivatives(self, rates, rng):
        drift, drive = liouvillian(rates)
        adj_drift, adj_drive = adjoint_liouvillian(rates)
        rho = thermal_state(0.3)
        effect = np.array([[0.7, 0.1 - 0.2j], [0.1 + 0.2j, 0.4]])
        for omega in rng.uniform(0, 5e7, size=3):
            np.testing.assert_allclose((drift + omega * drive) @ rho.ravel(),
                                       lindblad_derivative(rho, omega, rates).ravel(), atol=1e-6)
            np.testing.assert_allclose((adj_drift + omega * adj_drive) @ effect.ravel(),
                                       adjoint_derivative(effect, omega, rates).ravel(), atol=1e-6)

    def test_overlap_with_effect_is_conserved(self, rates):
        # d/dt Tr[E rho] = 0 when both run their own equations
        rho = 0.5 * (IDENTITY + 0.3 * SIGMA_X - 0.2 * SIGMA_Y + 0.4 * SIGMA_Z)
        effect = np.array([[0.7, 0.1 - 0.2j], [0.1 + 0.2j, 0.4]])
        omega = 2 * math.pi * 3e6
        rate = np.trace(adjoint_derivative(effect, omega, rates) @ rho) \
            + np.trace(effect @ lindblad_derivative(rho, omega, rates))
        assert abs(rate) < 1e-6


class TestPropagation:
    def test_stationary_state_without_drive(self, constants, rates):
        rho0 = thermal_state(rates.stationary_excited_population)
        spec = _spec(0.0, constants)
        traj = propagate_forward(rho0, spec, rates, _grid(constants, 512))
        np.testing.assert_allclose(traj.matrices, np.broadcast_to(rho0, traj.matrices.shape), atol=1e-12)

    def test_ideal_pi_pulse_inverts(self, constants, ideal_rates):
        traj = propagate_forward(PROJECTOR_G, _spec(math.pi, constants), ideal_rates, _grid(constants))
        assert bloch_vector(traj.final)[2] == pytest.approx(1.0, abs=1e-8)

    def test_unitary_without_rates(self, constants, ideal_rates):
        traj = propagate_forward(PLUS, _spec(2.3 * math.pi, constants), ideal_rates, _grid(constants, 2048))
        purity = np.einsum("tij,tji->t", traj.matrices, traj.matrices).real
        np.testing.assert_allclose(purity, 1.0, atol=1e-9)

    def test_trace_and_positivity(self, constants, rates):
        traj = propagate_forward(thermal_state(0.088), _spec(3.7 * math.pi, constants), rates, _grid(constants))
        traces = np.trace(traj.matrices, axis1=1, axis2=2)
        np.testing.assert_allclose(traces, 1.0, atol=1e-9)
        eigenvalues = np.linalg.eigvalsh(traj.matrices)
        assert eigenvalues.min() > -1e-9

    def test_matches_matrix_exponential(self, constants, rates):
        spec = _spec(math.pi, constants)
        traj = propagate_forward(PROJECTOR_G, spec, rates, _grid(constants))
        oracle = _expm_oracle(PROJECTOR_G, spec, rates, 16384)
        np.testing.assert_allclose(bloch_vector(traj.final), bloch_vector(oracle), atol=1e-6)
        assert traj.final[1, 1].real < 0.99

    def test_fourth_order_convergence(self, constants, rates):
        spec = _spec(1.5 * math.pi, constants)
        reference = propagate_forward(PROJECTOR_G, spec, rates, _grid(constants, 10240)).final
        errors = [
            np.abs(bloch_vector(propagate_forward(PROJECTOR_G, spec, rates, _grid(constants, n)).final)
                   - bloch_vector(reference)).max()
            for n in (320, 640)
        ]
        assert errors[0] / errors[1] >= 12

    def test_step_halving(self, constants, rates):
        spec = _spec(2 * math.pi, constants)
        coarse = propagate_forward(PROJECTOR_G, spec, rates, _grid(constants, 4096))
        fine = propagate_forward(PROJECTOR_G, spec, rates, _grid(constants, 8192))
        diff = bloch_vector(coarse.matrices) - bloch_vector(fine.matrices[::2])
        assert np.abs(diff).max() < 1e-8

    def test_identity_effect_stays_identity(self, constants, rates):
        traj = propagate_backward(IDENTITY, _spec(math.pi, constants), rates, _grid(constants, 512))
        np.testing.assert_allclose(traj.matrices, np.broadcast_to(IDENTITY, traj.matrices.shape), atol=1e-12)

    @pytest.mark.parametrize("theta", [0.5 * math.pi, math.pi, 1.3 * math.pi])
    def test_backward_unitary_conjugation(self, theta, constants, ideal_rates):
        traj = propagate_backward(PROJECTOR_E, _spec(theta, constants), ideal_rates, _grid(constants))
        U = expm(0.5j * theta * SIGMA_Y)
        np.testing.assert_allclose(traj.matrices[0], U.conj().T @ PROJECTOR_E @ U, atol=1e-8)

    def test_fidelity_degraded_terminal_effect(self):
        effect = terminal_effect(Postselect.E, F_e=0.867)
        np.testing.assert_allclose(np.linalg.eigvalsh(effect), [0.133, 0.867], atol=1e-15)

    def test_rescaling_is_recorded(self, constants, rates):
        spec = _spec(1.2 * math.pi, constants)
        grid = _grid(constants, 1024)
        small = 0.3 * terminal_effect(Postselect.E, F_e=0.9)
        plain = propagate_backward(small, spec, rates, grid)
        scaled = propagate_backward(small, spec, rates, grid, rescale=True)
        assert np.any(scaled.log_scale != 0)
        assert np.abs(scaled.matrices[0]).max() >= 0.5
        np.testing.assert_allclose(scaled.unscaled(), plain.matrices, rtol=1e-12, atol=1e-15)

    def test_two_point_consistency(self, constants, rng):
        for _ in range(20):
            theta = rng.uniform(0, 6 * math.pi)
            rates = QubitRates(
                gamma_1=rng.uniform(1.0, 2.0) / constants.T1,
                gamma_phi=rng.uniform(0.5, 2.0) / constants.T_phi,
                gamma_a=constants.gamma_a,
                p_e_th=rng.uniform(0.0, 0.2),
            )
            outcome = rng.choice([Postselect.G, Postselect.E])
            effect = terminal_effect(outcome, rng.uniform(0.5, 0.99), rng.uniform(0.5, 0.99))
            spec = _spec(theta, constants)
            grid = _grid(constants, 1024)
            rho = propagate_forward(thermal_state(rates.p_e_th), spec, rates, grid)
            eff = propagate_backward(effect, spec, rates, grid)
            overlap = np.einsum("tij,tji->t", eff.matrices, rho.matrices).real
            assert np.abs(overlap - overlap[-1]).max() / overlap[-1] < 1e-6

    def test_batch_matches_single(self, constants, rates):
        grid = _grid(constants, 512)
        specs = [_spec(theta, constants) for theta in (0.4, 2.0, 7.0)]
        batch = propagate_forward_batch(thermal_state(0.088), specs, rates, grid)
        assert batch.failures == [None, None, None]
        for index, spec in enumerate(specs):
            single = propagate_forward(thermal_state(0.088), spec, rates, grid)
            np.testing.assert_allclose(batch.matrices[index], single.matrices, atol=1e-14)
        backward = propagate_backward_batch(PROJECTOR_G, specs, rates, grid)
        assert backward.trajectory(2).matrices.shape == (513, 2, 2)


class TestObservables:
    def test_weak_value_with_identity_is_expectation(self, rng):
        rho = thermal_state(0.3)
        operator = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        assert weak_value(operator, rho, IDENTITY) == expectation(operator, rho)
        assert weak_value(operator, rho) == expectation(operator, rho)

    def test_weak_value_of_eigenstate(self):
        assert weak_value(SIGMA_Z, PROJECTOR_G, PROJECTOR_G) == pytest.approx(-1.0)

    def test_weak_value_of_lowering_vanishes(self):
        assert weak_value(SIGMA_MINUS, PLUS, PROJECTOR_E) == pytest.approx(0.0, abs=1e-15)

    def test_incompatible_postselection(self):
        with pytest.raises(PostselectionError):
            weak_value(SIGMA_MINUS, PROJECTOR_E, PROJECTOR_G)

    def test_weak_value_stack(self):
        rho = np.stack([PLUS, thermal_state(0.2)])
        effect = np.stack([PROJECTOR_E, PROJECTOR_G])
        values = weak_value(SIGMA_Z, rho, effect)
        np.testing.assert_allclose(values, [1.0, -1.0])

    @pytest.mark.parametrize("p_e, expected", [
        (0.0, np.diag([1.0, 0.0])),
        (0.088, np.diag([0.912, 0.088])),
        (0.5, 0.5 * np.eye(2)),
    ])
    def test_thermal_state(self, p_e, expected):
        np.testing.assert_allclose(thermal_state(p_e), expected)

    def test_thermal_state_rejects_bad_probability(self):
        with pytest.raises(ValidationError):
            thermal_state(1.2)

    def test_terminal_effects(self):
        np.testing.assert_array_equal(terminal_effect("none", 0.7, 0.7), IDENTITY)
        np.testing.assert_allclose(terminal_effect("e", 0.985, 0.867), np.diag([0.133, 0.867]))
        np.testing.assert_allclose(terminal_effect("g", 0.985, 0.867), np.diag([0.985, 0.015]))

    def test_terminal_effect_rejects_low_fidelity(self):
        with pytest.raises(ValidationError):
            terminal_effect("g", F_g=0.4)

    def test_dynamics_frame_columns(self, constants, rates):
        spec = _spec(math.pi, constants)
        grid = _grid(constants, 256)
        rho = propagate_forward(thermal_state(0.088), spec, rates, grid)
        eff = propagate_backward(terminal_effect("g", 0.985, 0.867), spec, rates, grid)
        frame = dynamics_frame(rho, eff, delay_ns=12.0)
        assert frame["t_ns"][0] == pytest.approx(12.0)
        assert frame["t_ns"][-1] == pytest.approx(412.0)
        assert frame["E_gg"][-1] == pytest.approx(0.985)
        assert frame["sz"][0] == pytest.approx(-0.824)
