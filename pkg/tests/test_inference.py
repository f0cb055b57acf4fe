"""Wavepacket and sweep fits: oracles, round trips, invariances."""

import numpy as np
import pytest

from dlczsim import inference, physics, source, stats

ATOM = physics.AtomSpec.cesium_d2()
SIX_POWERS_W = (2.1e-3, 1.2e-3, 0.6e-3, 0.3e-3, 0.15e-3, 0.075e-3)


def synthetic_wavepacket(power_w, chi, alpha, scale, rng=None, n_bins=840,
                         dt=1e-9):
    """Counts proportional to the model; Poisson-fluctuated when an rng
    is given."""
    spec = physics.ReadoutSpec(power=power_w, alpha=alpha, chi=chi, dt=dt,
                               read_duration=n_bins * dt)
    t = (np.arange(n_bins) + 0.5) * dt
    expected = physics.wavepacket_density(t, spec, ATOM) * scale
    counts = rng.poisson(expected) if rng is not None else np.round(expected)
    counts = counts.astype(np.int64)
    return stats.Wavepacket(bin_width=dt, counts_heralded=counts,
                            counts_all=counts, n_heralds=max(int(scale), 1),
                            n_trials=max(int(scale), 1))


class TestObjectiveGradient:
    def test_matches_finite_differences_at_random_points(self):
        rng = np.random.default_rng(42)
        wp = synthetic_wavepacket(0.3e-3, 3.0, 9.0, 1e5, rng=rng)
        residual, jacobian, _, _ = inference._stacked_problem(
            [(wp, 0.3e-3)], ATOM, [1.0])

        def objective(params):
            r = residual(params)
            return 0.5 * float(r @ r)

        worst = 0.0
        for _ in range(100):
            chi = rng.uniform(1.05, 6.0)
            alpha = rng.uniform(2.0, 27.0)
            p = np.array([chi, alpha])
            grad = jacobian(p).T @ residual(p)
            for i, h in enumerate((1e-6 * chi, 1e-6 * alpha)):
                up, dn = p.copy(), p.copy()
                up[i] += h
                dn[i] -= h
                fd = (objective(up) - objective(dn)) / (2 * h)
                rel = abs(grad[i] - fd) / max(abs(fd), abs(grad[i]), 1e-12)
                worst = max(worst, rel)
        assert worst < 1e-5


class TestWavepacketFit:
    def test_noiseless_global_roundtrip(self):
        curves = [(synthetic_wavepacket(p, 3.8, 9.0, 1e12), p)
                  for p in SIX_POWERS_W]
        fit = inference.fit_wavepacket(curves, ATOM, mode="global")
        assert fit.chi.value == pytest.approx(3.8, rel=1e-6)
        assert fit.alpha.value == pytest.approx(9.0, rel=1e-6)
        assert fit.converged
        cov = fit.covariance
        assert np.allclose(cov, cov.T)
        assert np.all(np.linalg.eigvalsh(cov) >= -1e-18)

    def test_simulated_recovery_within_errors(self):
        chi_true = 1.0 + 0.53 * 4.8
        readout = physics.ReadoutSpec(power=0.3e-3, alpha=9.0, chi=chi_true,
                                      dt=1e-9, read_duration=840e-9)
        model = source.SourceModel(
            mean_excitation=0.02, field1_cond_efficiency=0.5,
            field1_noise=1e-4, retrieval_efficiency=0.47,
            chain_efficiency=0.19, field2_background_rate=1e-4,
            coherence_time=700e-9, write_read_delay=0.0)
        timing = source.TrialTiming(trial_period=1e-6, write_duration=50e-9,
                                    read_duration=840e-9, apd_window=1e-6,
                                    n_trials=2_000_000)
        events = source.simulate(ATOM, readout, model, timing, seed=404)
        wp = stats.histogram_wavepacket(events, timing, 1e-9)
        fit = inference.fit_wavepacket([(wp, 0.3e-3)], ATOM, mode="per-curve")[0]
        assert abs(fit.chi.value - chi_true) < 3 * fit.chi.error
        assert abs(fit.alpha.value - 9.0) < 3 * fit.alpha.error

    def test_recovered_chi_bias_shrinks_with_statistics(self):
        chi_true = physics.chi_from_od(4.8, ATOM)
        readout = physics.ReadoutSpec(power=0.3e-3, alpha=9.0, chi=chi_true,
                                      dt=1e-9, read_duration=840e-9)
        model = source.SourceModel(
            mean_excitation=0.02, field1_cond_efficiency=0.5,
            field1_noise=1e-4, retrieval_efficiency=0.47,
            chain_efficiency=0.19, field2_background_rate=1e-4,
            coherence_time=700e-9, write_read_delay=0.0)
        biases, errors = [], []
        for k, n_trials in enumerate((10 ** 5, 10 ** 6, 10 ** 7)):
            timing = source.TrialTiming(trial_period=1e-6,
                                        write_duration=50e-9,
                                        read_duration=840e-9, apd_window=1e-6,
                                        n_trials=n_trials)
            events = source.simulate(ATOM, readout, model, timing,
                                     seed=777 + k)
            wp = stats.histogram_wavepacket(events, timing, 1e-9)
            fit = inference.fit_wavepacket([(wp, 0.3e-3)], ATOM,
                                           mode="per-curve")[0]
            biases.append(abs(fit.chi.value - chi_true))
            errors.append(fit.chi.error)
        assert errors[0] > errors[1] > errors[2]
        assert biases[2] < biases[0]
        assert biases[2] <= 3 * errors[2]

    def test_chi_monotone_across_od_sweep(self):
        rng = np.random.default_rng(7)
        ods = (4.8, 4.0, 3.4, 2.6, 1.6, 1.0)
        fits = []
        for od in ods:
            chi = physics.chi_from_od(od, ATOM)
            wp = synthetic_wavepacket(0.3e-3, chi, 9.0, 2e4, rng=rng)
            fits.append(inference.fit_wavepacket([(wp, 0.3e-3)], ATOM,
                                                 mode="per-curve")[0])
        values = [f.chi.value for f in fits][::-1]  # ascending OD
        assert all(b > a for a, b in zip(values[:-1], values[1:]))

    def test_fit_idempotence(self):
        rng = np.random.default_rng(3)
        wp = synthetic_wavepacket(0.6e-3, 2.5, 9.0, 1e5, rng=rng)
        fit = inference.fit_wavepacket([(wp, 0.6e-3)], ATOM, mode="per-curve")[0]
        from scipy.optimize import least_squares
        residual, jacobian, _, prepared = inference._stacked_problem(
            [(wp, 0.6e-3)], ATOM, [1.0])
        x0 = np.array([fit.chi.value, fit.alpha.value])
        for curve in prepared:  # weights the returned optimum was fit with
            curve.reweight_from_model(x0[0], x0[1], ATOM)
        res = least_squares(residual, x0=x0, jac=jacobian,
                            bounds=([1.0, 1e-8], [np.inf, np.inf]),
                            method="trf", ftol=1e-10, xtol=1e-13, gtol=1e-12)
        assert np.all(np.abs(res.x - x0) <= 1e-9 * np.abs(x0))

    def test_error_scaling_invariance(self):
        rng = np.random.default_rng(5)
        wp = synthetic_wavepacket(0.3e-3, 3.0, 9.0, 5e4, rng=rng)
        base = inference.fit_wavepacket([(wp, 0.3e-3)], ATOM, mode="per-curve")[0]
        scaled = inference.fit_wavepacket([(wp, 0.3e-3)], ATOM,
                                          mode="per-curve", weights=[1 / 3.0])[0]
        assert scaled.chi.value == pytest.approx(base.chi.value, rel=1e-7)
        assert scaled.alpha.value == pytest.approx(base.alpha.value, rel=1e-7)
        assert scaled.chi.error == pytest.approx(3.0 * base.chi.error, rel=1e-6)
        assert scaled.alpha.error == pytest.approx(3.0 * base.alpha.error, rel=1e-6)

    def test_input_validation(self):
        wp = synthetic_wavepacket(0.3e-3, 3.0, 9.0, 1e4)
        with pytest.raises(ValueError, match="at least two"):
            inference.fit_wavepacket([(wp, 0.3e-3)], ATOM, mode="global")
        with pytest.raises(ValueError, match="mode"):
            inference.fit_wavepacket([(wp, 0.3e-3)], ATOM, mode="bayesian")
        with pytest.raises(ValueError, match="weight"):
            inference.fit_wavepacket([(wp, 0.3e-3)], ATOM, mode="per-curve",
                                     weights=[1.0, 2.0])
        empty = stats.Wavepacket(bin_width=1e-9,
                                 counts_heralded=np.zeros(100, dtype=np.int64),
                                 counts_all=np.zeros(100, dtype=np.int64),
                                 n_heralds=10, n_trials=10)
        with pytest.raises(ValueError, match="all-zero"):
            inference.fit_wavepacket([(empty, 0.3e-3)], ATOM, mode="per-curve")

    def test_nonconvergence_carries_best_point(self, monkeypatch):
        monkeypatch.setattr(inference, "MAX_EVALUATIONS", 1)
        rng = np.random.default_rng(11)
        wp = synthetic_wavepacket(0.3e-3, 3.0, 9.0, 1e4, rng=rng)
        with pytest.raises(inference.FitConvergenceError) as info:
            inference.fit_wavepacket([(wp, 0.3e-3)], ATOM, mode="per-curve")
        assert info.value.best is not None
        assert not info.value.best.converged


class TestCooperativityFit:
    def test_exact_points(self):
        points = [(od, 1.0 + 0.53 * od, 0.0) for od in (1.0, 2.0, 4.0, 4.8)]
        fit = inference.fit_cooperativity(points)
        assert fit.beta.value == pytest.approx(0.53, rel=1e-12)
        assert fit.beta.error == pytest.approx(0.0, abs=1e-12)

    def test_matches_closed_form_weighted_least_squares(self):
        rng = np.random.default_rng(8)
        ods = np.array([0.5, 1.0, 2.0, 3.0, 4.8])
        errs = rng.uniform(0.02, 0.1, len(ods))
        chis = 1.0 + 0.53 * ods + errs * rng.standard_normal(len(ods))
        fit = inference.fit_cooperativity(list(zip(ods, chis, errs)))
        w = 1.0 / errs ** 2
        beta_oracle = np.sum(w * ods * (chis - 1)) / np.sum(w * ods ** 2)
        err_oracle = 1.0 / np.sqrt(np.sum(w * ods ** 2))
        assert fit.beta.value == pytest.approx(beta_oracle, rel=1e-12)
        assert fit.beta.error == pytest.approx(err_oracle, rel=1e-12)

    def test_noisy_recovery_property(self):
        ods = np.array([1.0, 1.6, 2.6, 3.4, 4.0, 4.8])
        hits = 0
        for rep in range(40):
            rng = np.random.default_rng(1000 + rep)
            chis = 1.0 + 0.53 * ods + 0.05 * rng.standard_normal(len(ods))
            fit = inference.fit_cooperativity(
                [(od, chi, 0.05) for od, chi in zip(ods, chis)])
            if abs(fit.beta.value - 0.53) < 3 * fit.beta.error:
                hits += 1
        assert hits >= 38

    def test_degenerate_inputs(self):
        with pytest.raises(ValueError):
            inference.fit_cooperativity([(1.0, 1.5, 0.1)])
        with pytest.raises(ValueError, match="distinct"):
            inference.fit_cooperativity([(2.0, 2.0, 0.1), (2.0, 2.1, 0.1)])


def saturating_sweep(rng=None, n_trials=2_000_000):
    """Synthetic threshold sweep: quadratic onset saturating at high OD,
    constant background floor, binomial counting noise."""
    ods = np.geomspace(0.3, 5.0, 8)
    floor = 0.004
    points = []
    for od in ods:
        signal = 0.095 * od ** 2 / (od ** 2 + 9.0)
        pc_true, p2_true = signal + floor, floor
        if rng is None:
            pc, p2 = pc_true, p2_true
        else:
            pc = rng.binomial(n_trials, pc_true) / n_trials
            p2 = rng.binomial(n_trials, p2_true) / n_trials
        pc_err = np.sqrt(pc_true * (1 - pc_true) / n_trials)
        p2_err = np.sqrt(p2_true * (1 - p2_true) / n_trials)
        points.append((od, pc, pc_err, p2, p2_err))
    return points


class TestThresholdSlopeFit:
    def test_exact_quadratic_onset(self):
        points = [(od, 0.001 * od ** 2 + 0.002, 1e-5, 0.002, 1e-5)
                  for od in (0.3, 0.5, 0.8, 1.2, 2.0, 30.0)]
        fit = inference.fit_threshold_slope(points)
        assert fit.s.value == pytest.approx(2.0, rel=1e-9)

    def test_saturating_curve_with_noise(self):
        fit = inference.fit_threshold_slope(saturating_sweep(np.random.default_rng(2)))
        assert 1.6 <= fit.s.value <= 2.2

    def test_bootstrap_error_agrees_with_analytic(self):
        rng = np.random.default_rng(31)
        base = saturating_sweep()
        fit = inference.fit_threshold_slope(base)
        slopes = []
        for _ in range(1000):
            resampled = [
                (od, pc + pc_err * rng.standard_normal(),
                 pc_err, p2 + p2_err * rng.standard_normal(), p2_err)
                for od, pc, pc_err, p2, p2_err in base]
            try:
                slopes.append(inference.fit_threshold_slope(resampled).s.value)
            except ValueError:
                continue
        boot = np.std(slopes)
        assert abs(boot - fit.s.error) / fit.s.error < 0.3

    def test_window_selection_reports_shortage(self):
        points = [(od, 0.005, 0.004, 0.004, 0.004) for od in (0.5, 1.0, 2.0, 4.0)]
        with pytest.raises(ValueError, match="onset window"):
            inference.fit_threshold_slope(points)

    def test_crossing_interpolation(self):
        points = [(0.3, 1.2, 1.0), (0.6, 1.8, 1.0), (0.9, 2.4, 1.0)]
        crossing = inference.threshold_crossing(points)
        assert crossing == pytest.approx(0.7, rel=1e-12)
        assert inference.threshold_crossing([(0.3, 3.0, 1.0)]) == 0.3
        assert inference.threshold_crossing([(0.3, 1.0, 1.0)]) is None
