import math

import numpy as np
import pytest
from sklearn.mixture import GaussianMixture

from core.calibration import (
    IMPLIED_P_OUTCOME_E,
    IMPLIED_P_OUTCOME_G,
    REJECTED,
    GaussianComponent,
    IQSample,
    MixtureModel,
    PowerRecord,
    TransitBand,
    amplitude_to_field,
    as_complex,
    batch_power_to_flux,
    circles_overlap,
    classify_with_rejection,
    conditional_outcome_model,
    em_fit,
    fidelity_report,
    fit_conditional_model,
    ground_population_decay,
    power_to_flux,
    readout_fidelity,
    relabel,
    sector_probabilities,
    t1_batch_filter,
    t1_from_repeat_probability,
    t1_repeat_probability,
)
from core.error_processor import ValidationError
from core.synthetic import (
    THERMAL_WEIGHTS,
    forward_power_record,
    generate_decay_data,
    generate_iq_samples,
    power_batches,
    waiting_times,
)

SIGMA = 1e-3
P_OUTCOME_GIVEN_STATE = {"g": 0.696, "e": 0.605}


@pytest.fixture(scope="module")
def thermal_readout():
    return generate_iq_samples(100_000, THERMAL_WEIGHTS, SIGMA, seed=7)


@pytest.fixture(scope="module")
def fitted(thermal_readout):
    return em_fit(thermal_readout.samples, k=3, seed=0)


@pytest.fixture(scope="module")
def transit_readout():
    return generate_iq_samples(100_000, THERMAL_WEIGHTS, SIGMA, seed=11, transit_fraction=0.12)


@pytest.fixture(scope="module")
def transit_fitted(transit_readout):
    return em_fit(transit_readout.samples, k=3, seed=0)


class TestSamples:
    def test_accepts_all_sample_forms(self):
        pairs = np.array([[1.0, 2.0], [3.0, -1.0]])
        expected = np.array([1 + 2j, 3 - 1j])
        np.testing.assert_array_equal(as_complex(pairs), expected)
        np.testing.assert_array_equal(as_complex([IQSample(1.0, 2.0), IQSample(3.0, -1.0)]), expected)
        np.testing.assert_array_equal(as_complex(expected), expected)

    def test_rejects_non_finite(self):
        with pytest.raises(ValidationError):
            IQSample(float("nan"), 0.0)
        with pytest.raises(ValidationError):
            as_complex(np.array([1 + 1j, complex("inf")]))

    def test_rejects_bad_shape(self):
        with pytest.raises(ValidationError):
            as_complex(np.zeros((3, 3)))


class TestMixtureFit:
    def test_single_component_is_sample_mean(self, rng):
        z = 0.3 + 0.1j + SIGMA * (rng.standard_normal(500) + 1j * rng.standard_normal(500))
        model = em_fit(z, k=1)
        assert model.centers[0] == pytest.approx(z.mean(), rel=1e-12)
        assert model.components[0].weight == 1.0

    def test_recovers_thermal_weights(self, fitted):
        np.testing.assert_allclose(fitted.weights, THERMAL_WEIGHTS, atol=0.005)
        assert fitted.labels == ["g", "e", "f"]
        assert fitted.sigma_iq == pytest.approx(SIGMA, rel=0.02)

    def test_recovers_centers(self, fitted, thermal_readout):
        for label in ("g", "e", "f"):
            assert abs(fitted.component(label).center - thermal_readout.centers[label]) < 0.1 * SIGMA

    def test_log_likelihood_non_decreasing(self, fitted, thermal_readout):
        history = np.array(fitted.log_likelihood_history)
        assert np.all(np.diff(history) >= -1e-9 * np.abs(history[1:]))
        assert fitted.converged
        assert fitted.log_likelihood(thermal_readout.samples) == pytest.approx(history[-1], rel=1e-10)

    def test_agrees_with_sklearn(self, fitted, thermal_readout):
        z = thermal_readout.samples
        reference = GaussianMixture(n_components=3, covariance_type="spherical", random_state=0)
        reference.fit(np.column_stack([z.real, z.imag]))
        np.testing.assert_allclose(np.sort(fitted.weights), np.sort(reference.weights_), atol=0.005)

    def test_same_seed_same_model(self, thermal_readout):
        z = thermal_readout.samples[:5000]
        a = em_fit(z, k=2, seed=3)
        b = em_fit(z, k=2, seed=3)
        np.testing.assert_array_equal(a.centers, b.centers)

    def test_seed_beyond_32_bits(self, thermal_readout):
        z = thermal_readout.samples[:5000]
        a = em_fit(z, k=2, seed=2 ** 40)
        b = em_fit(z, k=2, seed=2 ** 40)
        np.testing.assert_array_equal(a.centers, b.centers)
        assert em_fit(z, k=2, seed=2 ** 64 - 1).labels == ["g", "e"]
        with pytest.raises(ValidationError):
            em_fit(z, k=2, seed=-1)

    def test_invalid_arguments(self, thermal_readout):
        with pytest.raises(ValidationError):
            em_fit(thermal_readout.samples, k=4)
        with pytest.raises(ValidationError):
            em_fit(thermal_readout.samples[:150], k=2)

    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValidationError):
            MixtureModel([GaussianComponent(0j, SIGMA, 0.5, "g")])

    def test_relabel_by_reference(self, thermal_readout):
        model = thermal_readout.true_model()
        swapped = MixtureModel([
            GaussianComponent(c.center, c.sigma_iq, c.weight, label)
            for c, label in zip(model.components, ["e", "g", "f"])
        ])
        fixed = relabel(swapped, thermal_readout.centers)
        assert fixed.labels == ["g", "e", "f"]
        with pytest.raises(ValidationError):
            relabel(swapped, {"g": 0j})


class TestClassification:
    def test_center_and_midpoint(self, thermal_readout):
        model = thermal_readout.true_model()
        centers = thermal_readout.centers
        assert classify_with_rejection(model, centers["g"]) == "g"
        assert classify_with_rejection(model, IQSample(centers["e"].real, centers["e"].imag)) == "e"
        assert classify_with_rejection(model, 0.5 * (centers["g"] + centers["e"])) == REJECTED

    def test_circles_overlap(self, thermal_readout):
        model = thermal_readout.true_model()
        assert not circles_overlap(model)
        assert circles_overlap(model, radius_factor=4.0)

    def test_true_model_with_transit_band(self, transit_readout):
        model = transit_readout.true_model()
        assert model.transit_weight == 0.12
        assert model.sector_labels == ["g", "e", "f", "transit"]
        sectors = sector_probabilities(model, transit_readout.samples)
        assert sectors["transit"] == pytest.approx(0.12, abs=0.03)

    def test_sector_probabilities(self, fitted, thermal_readout):
        sectors = sector_probabilities(fitted, thermal_readout.samples)
        assert sum(sectors.values()) == pytest.approx(1.0)
        assert sectors["g"] == pytest.approx(THERMAL_WEIGHTS[0], abs=0.01)

    def test_report_fields(self, fitted, thermal_readout):
        report = fidelity_report(fitted, thermal_readout.samples)
        payload = report.to_dict()
        assert set(payload["fidelities"]) == {"g", "e"}
        assert all(0.0 < f <= 1.0 for f in payload["fidelities"].values())
        assert sum(payload["p_outcome"].values()) + payload["rejection_fraction"] == pytest.approx(1.0)


class TestTransitReadouts:
    def test_recovers_weights(self, transit_fitted):
        np.testing.assert_allclose(transit_fitted.weights, THERMAL_WEIGHTS, atol=0.005)
        assert transit_fitted.transit_weight == pytest.approx(0.12, abs=0.01)
        assert transit_fitted.sigma_iq == pytest.approx(SIGMA, rel=0.02)

    def test_rejection_and_fidelities(self, transit_fitted, transit_readout):
        report = fidelity_report(transit_fitted, transit_readout.samples)
        assert 0.35 <= report.rejection_fraction <= 0.45
        assert set(report.fidelities) == {"g", "e"}
        assert all(0.0 < f <= 1.0 for f in report.fidelities.values())
        assert all(0.0 < p <= 1.0 for p in report.p_outcome_given_state.values())

    def test_log_likelihood_matches_history(self, transit_fitted, transit_readout):
        history = np.array(transit_fitted.log_likelihood_history)
        assert np.all(np.diff(history) >= -1e-9 * np.abs(history[1:]))
        assert transit_fitted.n_iter >= len(history)
        assert transit_fitted.log_likelihood(transit_readout.samples) == pytest.approx(history[-1], rel=1e-10)

    def test_without_band_weights_are_biased(self, transit_readout):
        model = em_fit(transit_readout.samples[:20_000], k=3, seed=0, transit=False)
        assert model.transit is None
        assert model.weights[0] < THERMAL_WEIGHTS[0] - 0.02

    def test_band_density_is_normalised(self):
        band = TransitBand(0j, 6.0 + 0j, 1.0)
        u, v = np.meshgrid(np.arange(-6.0, 12.0, 0.05), np.arange(-6.0, 6.0, 0.05))
        density = np.exp(band.log_density((u + 1j * v).ravel()))
        assert density.sum() * 0.05 ** 2 == pytest.approx(1.0, rel=1e-3)

    def test_band_far_tail_is_finite(self):
        band = TransitBand(0j, 6.0 + 0j, 1.0)
        assert np.all(np.isfinite(band.log_density(np.array([-60.0 + 0j, 80.0 + 0j]))))

    def test_invalid_band(self):
        with pytest.raises(ValidationError):
            TransitBand(1j, 1j, 1.0)
        with pytest.raises(ValidationError):
            TransitBand(0j, 1.0 + 0j, 1.0, (0.8, 0.2))
        with pytest.raises(ValidationError):
            MixtureModel([GaussianComponent(0j, SIGMA, 1.0, "g")], transit_weight=0.1)


class TestReadoutFidelity:
    def test_perfect_assignment(self):
        assert readout_fidelity(1.0, 0.3, 0.3) == pytest.approx(1.0)

    def test_reference_fidelities(self):
        assert readout_fidelity(0.696, 0.892, IMPLIED_P_OUTCOME_G) == pytest.approx(0.985)
        assert readout_fidelity(0.605, 0.088, IMPLIED_P_OUTCOME_E) == pytest.approx(0.867)

    def test_scale_invariance(self):
        assert readout_fidelity(0.7, 0.2, 0.4) == pytest.approx(readout_fidelity(0.7, 0.1, 0.2))

    def test_fidelity_above_one_rejected(self):
        with pytest.raises(ValidationError):
            readout_fidelity(0.9, 0.9, 0.5)

    def test_incompatible_outcome_probabilities(self, fitted, thermal_readout):
        with pytest.raises(ValidationError):
            fidelity_report(fitted, thermal_readout.samples, P_OUTCOME_GIVEN_STATE)

    @pytest.mark.parametrize("args", [(0.7, 0.0, 0.4), (1.2, 0.2, 0.4), (0.7, 0.2, -0.1)])
    def test_out_of_range(self, args):
        with pytest.raises(ValidationError):
            readout_fidelity(*args)


class TestT1Models:
    def test_repeat_probability(self, constants):
        value = t1_repeat_probability(constants.T1, constants.T1, constants.p_g_th)
        assert value == pytest.approx(0.892 + 0.108 / math.e, rel=1e-12)

    def test_repeat_probability_limits(self, constants):
        assert t1_repeat_probability(0.0, constants.T1, 0.088) == pytest.approx(1.0)
        assert t1_repeat_probability(1e3 * constants.T1, constants.T1, 0.088) == pytest.approx(0.088)

    def test_inverse(self, constants):
        t_w = 2e-6
        p = t1_repeat_probability(t_w, constants.T1, constants.p_g_th)
        assert t1_from_repeat_probability(p, t_w, constants.p_g_th) == pytest.approx(constants.T1)

    def test_inverse_out_of_range(self, constants):
        with pytest.raises(ValidationError):
            t1_from_repeat_probability(0.85, 1e-6, constants.p_g_th)

    def test_batch_filter(self):
        keep = t1_batch_filter([5.4e-6, 5.9e-6, 5.6e-6, 5.3e-6])
        assert keep.tolist() == [True, False, True, True]

    def test_ground_population_decay(self, constants):
        t = np.array([0.0, constants.T1])
        np.testing.assert_allclose(ground_population_decay(t, constants.T1, constants.p_g_th),
                                   [1.0, 0.892 + 0.108 / math.e])


class TestConditionalModel:
    def test_initial_value(self, constants):
        assert conditional_outcome_model(0.0, constants.T1, constants.p_g_th, 0.696, 0.0) == pytest.approx(0.696)

    def test_long_time_limit(self, constants):
        value = conditional_outcome_model(1e3 * constants.T1, constants.T1, constants.p_g_th, 0.696, 0.0)
        assert value == pytest.approx(0.892 * 0.696)

    def test_invalid_probabilities(self, constants):
        with pytest.raises(ValidationError):
            conditional_outcome_model(0.0, constants.T1, constants.p_g_th, 1.2, 0.0)

    def test_noiseless_fit(self, constants):
        t_w = waiting_times(constants.T1)
        data = generate_decay_data(t_w, constants.T1, constants.p_g_th, 0.696, 0.0)
        fit = fit_conditional_model(t_w, data, constants.T1, constants.p_g_th)
        assert fit.P_gg0 == pytest.approx(0.696, abs=1e-8)
        assert fit.P_ge0 == pytest.approx(0.0, abs=1e-8)
        assert fit.residual_rms < 1e-10

    def test_short_span_rejected(self, constants):
        t_w = np.linspace(0.0, constants.T1, 20)
        with pytest.raises(ValidationError):
            fit_conditional_model(t_w, np.full(20, 0.7), constants.T1, constants.p_g_th)

    def test_too_few_points(self, constants):
        t_w = np.array([0.0, 2 * constants.T1, 3 * constants.T1])
        with pytest.raises(ValidationError):
            fit_conditional_model(t_w, np.full(3, 0.7), constants.T1, constants.p_g_th)

    @pytest.mark.slow
    def test_noisy_fits_centered_on_truth(self, constants):
        t_w = waiting_times(constants.T1)
        fits = [
            fit_conditional_model(
                t_w,
                generate_decay_data(t_w, constants.T1, constants.p_g_th, 0.696, 0.0, noise=0.005, seed=seed),
                constants.T1, constants.p_g_th,
            )
            for seed in range(100)
        ]
        assert abs(np.median([f.P_gg0 for f in fits]) - 0.696) < 0.005
        assert np.median([f.P_ge0 for f in fits]) < 0.01
        assert all(0.0 <= f.P_ge0 <= 1.0 for f in fits)


class TestPowerCalibration:
    GAIN = 2e-17
    P_VAC = 1e-12
    P_C = 5e-14
    OMEGA_A = 2 * math.pi * 20e3

    def _flux(self):
        return np.linspace(0.0, 3e8, 257)

    def test_round_trip(self, constants):
        flux = self._flux()
        record = forward_power_record(flux, self.GAIN, self.OMEGA_A, constants.gamma_a,
                                      self.P_VAC, self.P_C)
        np.testing.assert_allclose(power_to_flux(record), flux, rtol=1e-12, atol=1e-12 * flux.max())
        assert record.gain == pytest.approx(self.GAIN)
        assert record.p_c == pytest.approx(self.P_C)

    def test_vacuum_level_is_zero_flux(self, constants):
        record = forward_power_record(np.zeros(4), self.GAIN, self.OMEGA_A, constants.gamma_a,
                                      self.P_VAC, self.P_C)
        np.testing.assert_array_equal(power_to_flux(record), np.zeros(4))

    def test_field_round_trip(self, constants):
        record = forward_power_record(self._flux(), self.GAIN, self.OMEGA_A, constants.gamma_a,
                                      self.P_VAC, self.P_C)
        alpha = np.array([0.0, 1e3 + 2e3j, -4e3j])
        signal = alpha * 2 * math.sqrt(record.gamma_a) / record.omega_a * math.sqrt(
            record.p_ref - record.p_c_plus_vac)
        np.testing.assert_allclose(amplitude_to_field(signal.real, signal.imag, record), alpha,
                                   rtol=1e-12, atol=1e-9)

    def test_batches_with_drifting_gain(self, constants):
        flux = self._flux()
        records = power_batches(flux, [1e-17, 2e-17, 3e-17], self.OMEGA_A, constants.gamma_a,
                                self.P_VAC, self.P_C)
        np.testing.assert_allclose(batch_power_to_flux(records), flux, rtol=1e-10, atol=1e-10 * flux.max())

    def test_batch_shape_mismatch(self, constants):
        records = [
            forward_power_record(np.zeros(n), self.GAIN, self.OMEGA_A, constants.gamma_a,
                                 self.P_VAC, self.P_C)
            for n in (4, 5)
        ]
        with pytest.raises(ValidationError):
            batch_power_to_flux(records)
        with pytest.raises(ValidationError):
            batch_power_to_flux([])

    def test_reference_must_exceed_offsets(self, constants):
        with pytest.raises(ValidationError):
            PowerRecord(np.zeros(3), self.P_VAC, 1e-12, 2e-12, self.OMEGA_A, constants.gamma_a)
