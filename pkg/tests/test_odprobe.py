"""Pulse propagation and the three optical-depth extraction routes."""

import numpy as np
import pytest
from scipy.special import j1

from dlczsim import odprobe, physics

ATOM = physics.AtomSpec.cesium_d2()
HWHM = 0.5 * ATOM.gamma


LONG_DURATION = 8e-6
LONG_RISE = 50e-9


def long_flat_pulse(n=8192, dt=2e-9):
    return odprobe.flat_top_pulse(LONG_DURATION, dt, LONG_RISE, n)


def center_index(pulse):
    # middle of the flat top, where edge transients have fully decayed
    t_center = 2 * LONG_RISE + 0.5 * LONG_DURATION
    return int(round(t_center / pulse.sample_period))


class TestPropagation:
    def test_zero_depth_is_identity(self):
        pulse = long_flat_pulse(2048)
        out = odprobe.propagate(pulse, 0.0, ATOM)
        assert np.array_equal(out.amplitude, pulse.amplitude)

    def test_cw_transmission_is_exp_minus_od(self):
        pulse = long_flat_pulse()
        c = center_index(pulse)
        for od in (0.5, 4.29, 6.0):
            out = odprobe.propagate(pulse, od, ATOM)
            ratio = out.intensity[c] / pulse.intensity[c]
            assert ratio == pytest.approx(np.exp(-od), rel=1e-4)

    def test_short_pulse_rings_and_leaks_energy(self):
        # oracle: direct convolution with the analytic impulse response
        # delta(t) - exp(-g t) sqrt(q g / t) J1(2 sqrt(q g t)), q = od/2
        od = 2.5
        dt = 0.5e-9
        n = 4096
        pulse = odprobe.flat_top_pulse(50e-9, dt, 8e-9, n)
        out = odprobe.propagate(pulse, od, ATOM)
        t = np.arange(1, 4 * n) * dt
        q = 0.5 * od
        tail = -np.exp(-HWHM * t) * np.sqrt(q * HWHM / t) * j1(
            2.0 * np.sqrt(q * HWHM * t))
        oracle = pulse.amplitude + np.convolve(pulse.amplitude, tail)[:n] * dt
        peak = np.abs(out.amplitude).max()
        assert np.max(np.abs(oracle - out.amplitude)) < 0.02 * peak
        # transient overshoot: more than one lobe in the envelope
        mag = np.abs(out.amplitude)
        lobes = np.sum((mag[1:-1] > mag[:-2]) & (mag[1:-1] > mag[2:])
                       & (mag[1:-1] > 0.01 * peak))
        assert lobes >= 2
        assert out.energy / pulse.energy > np.exp(-od)

    def test_energy_strictly_decreases_with_od(self):
        pulse = odprobe.flat_top_pulse(100e-9, 1e-9, 10e-9, 2048)
        energies = [odprobe.propagate(pulse, od, ATOM).energy
                    for od in (0.0, 0.5, 1.0, 2.0, 4.0, 6.0)]
        assert all(b < a for a, b in zip(energies[:-1], energies[1:]))

    def test_linearity(self):
        pulse = odprobe.flat_top_pulse(100e-9, 1e-9, 10e-9, 2048)
        out1 = odprobe.propagate(pulse, 1.7, ATOM)
        scaled = odprobe.ProbePulse(3.5 * pulse.amplitude, pulse.sample_period)
        out2 = odprobe.propagate(scaled, 1.7, ATOM)
        assert np.allclose(out2.amplitude, 3.5 * out1.amplitude, rtol=1e-12)

    def test_causality(self):
        rise = 30e-9
        pulse = odprobe.flat_top_pulse(300e-9, 1e-9, rise, 4096, delay=6 * rise)
        out = odprobe.propagate(pulse, 3.0, ATOM)
        quiet = pulse.times < rise  # 5 rise times before the edge
        leak = np.max(np.abs(out.amplitude[quiet]))
        assert leak < 1e-10 * np.abs(out.amplitude).max()

    def test_detuned_carrier_absorbs_less(self):
        pulse = long_flat_pulse(4096)
        detuned = odprobe.ProbePulse(pulse.amplitude, pulse.sample_period,
                                     detuning=ATOM.gamma)
        c = center_index(pulse)
        on_res = odprobe.propagate(pulse, 2.0, ATOM).intensity[c]
        off_res = odprobe.propagate(detuned, 2.0, ATOM).intensity[c]
        assert off_res > on_res
        # full Lorentzian: od/(1 + (2 delta/Gamma)^2) = od/5 at delta = Gamma
        assert off_res / pulse.intensity[c] == pytest.approx(np.exp(-2.0 / 5.0),
                                                             rel=1e-3)

    def test_pulse_validation(self):
        with pytest.raises(ValueError, match="samples"):
            odprobe.ProbePulse(np.ones(100), 1e-9)
        with pytest.raises(ValueError, match="finite"):
            odprobe.ProbePulse(np.full(2048, np.nan), 1e-9)
        with pytest.raises(ValueError):
            odprobe.propagate(long_flat_pulse(2048), -0.1, ATOM)


class TestLogRatio:
    def test_trivial_values(self):
        assert odprobe.od_log_ratio(1.0, 1.0).od.value == 0.0
        assert odprobe.od_log_ratio(1.0, np.exp(-1.0)).od.value == pytest.approx(1.0)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            odprobe.od_log_ratio(0.0, 0.1)
        with pytest.raises(ValueError):
            odprobe.od_log_ratio(1.0, -0.1)
        with pytest.raises(ValueError):
            odprobe.od_log_ratio(1.0, 1.1)

    def test_recovers_od_from_propagated_pulse(self):
        pulse = long_flat_pulse()
        out = odprobe.propagate(pulse, 4.8, ATOM)
        c = center_index(pulse)
        est = odprobe.od_log_ratio(float(pulse.intensity[c]),
                                   float(out.intensity[c]))
        assert est.od.value == pytest.approx(4.8, abs=1e-3)
        assert est.method == "log_ratio"


class TestLorentzianScan:
    def scan_points(self, od, noise=0.0, rng=None, n=13):
        deltas = np.linspace(-3 * HWHM, 3 * HWHM, n)
        trans = odprobe.transmission_spectrum(deltas, od, ATOM)
        if noise:
            trans = np.clip(trans * (1 + noise * rng.standard_normal(n)),
                            1e-9, 1.0)
        return list(zip(deltas, trans))

    def test_exact_scan(self):
        fit = odprobe.od_lorentzian_scan(self.scan_points(2.0), ATOM)
        assert fit.od.value == pytest.approx(2.0, abs=1e-9)
        assert fit.method == "lorentzian_scan"

    def test_both_fit_targets_agree(self):
        rng = np.random.default_rng(4)
        points = self.scan_points(3.0, noise=0.02, rng=rng)
        on_trans = odprobe.od_lorentzian_scan(points, ATOM, on="transmission")
        on_od = odprobe.od_lorentzian_scan(points, ATOM, on="od")
        joint = np.hypot(on_trans.od.error, on_od.od.error)
        assert abs(on_trans.od.value - on_od.od.value) < 2.5 * joint + 0.02

    def test_noisy_recovery(self):
        hits = 0
        for rep in range(30):
            rng = np.random.default_rng(500 + rep)
            fit = odprobe.od_lorentzian_scan(
                self.scan_points(2.0, noise=0.05, rng=rng), ATOM)
            if abs(fit.od.value - 2.0) < 3 * max(fit.od.error, 1e-6):
                hits += 1
        assert hits >= 27

    def test_agreement_with_log_ratio(self):
        pulse = long_flat_pulse()
        out = odprobe.propagate(pulse, 4.29, ATOM)
        c = center_index(pulse)
        ratio = odprobe.od_log_ratio(float(pulse.intensity[c]),
                                     float(out.intensity[c]))
        rng = np.random.default_rng(8)
        scan = odprobe.od_lorentzian_scan(
            self.scan_points(4.29, noise=0.01, rng=rng), ATOM)
        assert abs(scan.od.value - ratio.od.value) < 2 * scan.od.error + 0.02

    def test_validation(self):
        with pytest.raises(ValueError, match="five"):
            odprobe.od_lorentzian_scan(self.scan_points(2.0)[:4], ATOM)
        narrow = [(d * 0.05, t) for d, t in self.scan_points(2.0)]
        with pytest.raises(ValueError, match="linewidth"):
            odprobe.od_lorentzian_scan(narrow, ATOM)


class TestPulseShapeFit:
    def test_noiseless_roundtrip(self):
        pulse = odprobe.flat_top_pulse(500e-9, 1e-9, 30e-9, 4096)
        out = odprobe.propagate(pulse, 4.3, ATOM)
        target = odprobe.ProbePulse(np.abs(out.amplitude), out.sample_period)
        fit = odprobe.od_pulse_shape(pulse, target, ATOM)
        assert fit.od.value == pytest.approx(4.3, abs=1e-4)
        assert fit.method == "pulse_shape"

    def test_one_percent_noise_two_percent_recovery(self):
        pulse = odprobe.flat_top_pulse(500e-9, 1e-9, 30e-9, 4096)
        out = odprobe.propagate(pulse, 4.3, ATOM)
        for rep in range(5):
            rng = np.random.default_rng(600 + rep)
            noisy = np.abs(out.amplitude) + 0.01 * np.abs(pulse.amplitude).max() \
                * rng.standard_normal(len(out.amplitude))
            target = odprobe.ProbePulse(np.abs(noisy), out.sample_period)
            fit = odprobe.od_pulse_shape(pulse, target, ATOM)
            assert abs(fit.od.value - 4.3) / 4.3 < 0.02

    def test_average_over_trials_shows_no_trend(self):
        # repeated 4-trial averages at constant true depth: the fitted
        # sequence should be trendless
        pulse = odprobe.flat_top_pulse(500e-9, 1e-9, 30e-9, 4096)
        out = odprobe.propagate(pulse, 4.29, ATOM)
        rng = np.random.default_rng(9)
        estimates = []
        for _ in range(12):
            traces = [np.abs(out.amplitude) + 0.01 * rng.standard_normal(4096)
                      for _ in range(4)]
            avg = odprobe.ProbePulse(np.abs(np.mean(traces, axis=0)),
                                     out.sample_period)
            estimates.append(odprobe.od_pulse_shape(pulse, avg, ATOM).od.value)
        x = np.arange(len(estimates), dtype=float)
        slope = np.polyfit(x, estimates, 1)[0]
        scatter = np.std(estimates, ddof=1)
        slope_err = scatter / np.sqrt(np.sum((x - x.mean()) ** 2))
        assert abs(slope) < 3 * slope_err

    def test_grid_mismatch_rejected(self):
        a = odprobe.flat_top_pulse(500e-9, 1e-9, 30e-9, 4096)
        b = odprobe.flat_top_pulse(500e-9, 2e-9, 30e-9, 4096)
        with pytest.raises(ValueError, match="grid"):
            odprobe.od_pulse_shape(a, b, ATOM)


class TestMethodAgreement:
    def test_pairwise_within_two_sigma(self):
        rng = np.random.default_rng(21)
        pulse = odprobe.flat_top_pulse(500e-9, 1e-9, 30e-9, 4096)
        cw = long_flat_pulse()
        c = center_index(cw)
        for od in rng.uniform(0.5, 6.0, 6):
            out_cw = odprobe.propagate(cw, od, ATOM)
            est_ratio = odprobe.od_log_ratio(float(cw.intensity[c]),
                                             float(out_cw.intensity[c]))
            deltas = np.linspace(-3 * HWHM, 3 * HWHM, 13)
            trans = np.clip(odprobe.transmission_spectrum(deltas, od, ATOM)
                            * (1 + 0.01 * rng.standard_normal(13)), 1e-9, 1.0)
            est_scan = odprobe.od_lorentzian_scan(list(zip(deltas, trans)), ATOM)
            out_p = odprobe.propagate(pulse, od, ATOM)
            noisy = np.abs(out_p.amplitude) + 0.005 * rng.standard_normal(4096)
            est_pulse = odprobe.od_pulse_shape(
                pulse, odprobe.ProbePulse(np.abs(noisy), 1e-9), ATOM)
            estimates = [est_ratio, est_scan, est_pulse]
            for i in range(3):
                for j in range(i + 1, 3):
                    joint = np.hypot(estimates[i].od.error, estimates[j].od.error)
                    gap = abs(estimates[i].od.value - estimates[j].od.value)
                    assert gap < 2 * joint + 0.02


class TestFiles:
    def test_trace_round_trip(self, tmp_path):
        pulse = odprobe.flat_top_pulse(200e-9, 1e-9, 20e-9, 2048)
        path = tmp_path / "trace.csv"
        odprobe.write_pulse_trace(pulse, path)
        back = odprobe.read_pulse_trace(path)
        assert np.allclose(back.amplitude, pulse.amplitude, atol=1e-12)
        assert back.sample_period == pytest.approx(1e-9, rel=1e-9)

    def test_scan_round_trip(self, tmp_path):
        deltas = np.linspace(-3 * HWHM, 3 * HWHM, 7)
        points = list(zip(deltas, odprobe.transmission_spectrum(deltas, 2.0, ATOM)))
        path = tmp_path / "scan.csv"
        odprobe.write_scan(points, path)
        back = odprobe.read_scan(path)
        assert len(back) == 7
        for (d0, t0), (d1, t1) in zip(points, back):
            assert d1 == pytest.approx(d0, rel=1e-8, abs=1e-3)
            assert t1 == pytest.approx(t0, rel=1e-12)
