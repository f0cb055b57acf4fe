"""Optical-depth measurement on the probe transition.

Three extraction routes are implemented against the same linear
two-level response: the CW log-ratio of transmitted intensities, a fit
of the transmission across a detuning scan, and a transient fit of the
distorted pulse shape after the cloud.  Pulse propagation itself is
spectral: the envelope spectrum is multiplied by the complex Lorentzian
transfer function exp[-(OD/2) * (G/2) / ((G/2) + i(delta + w))].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.fft import fft, ifft, next_fast_len
from scipy.optimize import least_squares
from scipy.special import erf

from .physics import AtomSpec
from .stats import Estimate, float_repr

MIN_SAMPLES = 1 << 10
ZERO_PAD_FACTOR = 4


@dataclass
class ProbePulse:
    """Sampled probe-field envelope on a uniform time grid.

    ``detuning`` is the carrier offset from resonance in rad/s; the
    envelope may be real or complex in arbitrary amplitude units.
    """

    amplitude: np.ndarray
    sample_period: float
    detuning: float = 0.0

    def __post_init__(self):
        self.amplitude = np.asarray(self.amplitude)
        if self.amplitude.ndim != 1 or len(self.amplitude) < MIN_SAMPLES:
            raise ValueError(f"probe pulse needs >= {MIN_SAMPLES} samples "
                             "on a one-dimensional grid")
        if not np.all(np.isfinite(self.amplitude)):
            raise ValueError("probe envelope must be finite")
        if not self.sample_period > 0:
            raise ValueError("sample period must be positive")

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.amplitude)) * self.sample_period

    @property
    def intensity(self) -> np.ndarray:
        return np.abs(self.amplitude) ** 2

    @property
    def energy(self) -> float:
        return float(self.intensity.sum() * self.sample_period)


@dataclass(frozen=True)
class ODEstimate:
    """Extracted optical depth with its standard error and the method tag."""

    od: Estimate
    method: str

    def __post_init__(self):
        if self.od.value < 0:
            raise ValueError("optical depth estimate must be >= 0")


def _transfer(omega: np.ndarray, od: float, detuning: float, atom: AtomSpec):
    hwhm = 0.5 * atom.gamma
    return np.exp(-(0.5 * od) * hwhm / (hwhm + 1j * (detuning + omega)))


def propagate(pulse: ProbePulse, od: float, atom: AtomSpec) -> ProbePulse:
    """Send the pulse through a cloud of the given resonant optical depth.

    Exact for a linear medium: the spectrum (zero-padded fourfold to
    keep the causal tail from wrapping) is multiplied by the Lorentzian
    transfer function and transformed back.  On-resonance CW intensity
    transmission is exactly exp(-od).
    """
    if od < 0:
        raise ValueError("optical depth must be >= 0")
    if od == 0.0:
        return ProbePulse(pulse.amplitude.copy(), pulse.sample_period,
                          pulse.detuning)
    n = len(pulse.amplitude)
    n_fft = next_fast_len(ZERO_PAD_FACTOR * n)
    spectrum = fft(pulse.amplitude, n_fft)
    omega = 2.0 * np.pi * np.fft.fftfreq(n_fft, d=pulse.sample_period)
    out = ifft(spectrum * _transfer(omega, od, pulse.detuning, atom))[:n]
    return ProbePulse(out, pulse.sample_period, pulse.detuning)


def resonant_transmission(od: float) -> float:
    """CW intensity transmission on resonance, exp(-od)."""
    return math.exp(-od)


def transmission_spectrum(detuning, od: float, atom: AtomSpec):
    """CW intensity transmission versus detuning (rad/s)."""
    g = 0.5 * atom.gamma
    lorentz = g * g / (np.asarray(detuning, dtype=float) ** 2 + g * g)
    return np.exp(-od * lorentz)


def od_log_ratio(v_i: float, v_f: float) -> ODEstimate:
    """Optical depth from transmitted versus incident intensity,
    -ln(v_f/v_i).  Point values carry no stated noise, so the estimate
    is quoted without an error bar."""
    if v_i <= 0 or v_f <= 0:
        raise ValueError("intensities must be positive")
    if v_f > v_i:
        raise ValueError("transmitted intensity exceeds the incident one")
    return ODEstimate(Estimate(-math.log(v_f / v_i), 0.0), "log_ratio")


def od_lorentzian_scan(points, atom: AtomSpec, on: str = "transmission") -> ODEstimate:
    """Optical depth from a transmission-versus-detuning scan.

    ``points`` is a sequence of (detuning rad/s, transmission).  At
    least five detunings spanning a full linewidth are required.
    ``on`` selects what is fit: the exponential-of-Lorentzian
    transmission itself (default) or the extracted per-point optical
    depth -ln(T), which is linear in the Lorentzian profile.
    """
    pts = [(float(d), float(tr)) for d, tr in points]
    if len(pts) < 5:
        raise ValueError("need at least five scan points")
    delta = np.array([p[0] for p in pts])
    trans = np.array([p[1] for p in pts])
    if delta.max() - delta.min() < atom.gamma:
        raise ValueError("scan must span at least one linewidth")
    if np.any(trans <= 0) or np.any(trans > 1.0 + 1e-9):
        raise ValueError("transmissions must lie in (0, 1]")

    g = 0.5 * atom.gamma
    lorentz = g * g / (delta ** 2 + g * g)
    dof = len(pts) - 1
    if on == "od":
        y = -np.log(trans)
        od = float((lorentz * y).sum() / (lorentz * lorentz).sum())
        resid = y - od * lorentz
        scatter = float(resid @ resid) / dof
        err = math.sqrt(scatter / float((lorentz * lorentz).sum()))
        return ODEstimate(Estimate(max(od, 0.0), err), "lorentzian_scan")
    if on != "transmission":
        raise ValueError(f"unknown scan fit target {on!r}")

    od0 = max(-math.log(trans.min()), 1e-3)
    res = least_squares(
        lambda p: np.exp(-p[0] * lorentz) - trans,
        x0=[od0], bounds=([0.0], [np.inf]), method="trf",
        ftol=1e-12, xtol=1e-12, max_nfev=200,
    )
    if res.status <= 0:
        raise FitError("Lorentzian scan fit did not converge", res)
    scatter = 2.0 * res.cost / dof
    jtj = float((res.jac.T @ res.jac)[0, 0])
    err = math.sqrt(scatter / jtj) if jtj > 0 else float("inf")
    return ODEstimate(Estimate(float(res.x[0]), err), "lorentzian_scan")


class FitError(RuntimeError):
    """Probe fit failed to converge; carries the optimizer result."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


def od_pulse_shape(pulse_in: ProbePulse, pulse_out: ProbePulse,
                   atom: AtomSpec) -> ODEstimate:
    """One-parameter fit of the optical depth from pulse distortion.

    Propagates the input trace at trial depths and matches the envelope
    magnitude of the measured output in least squares.
    """
    if len(pulse_in.amplitude) != len(pulse_out.amplitude) or \
            not math.isclose(pulse_in.sample_period, pulse_out.sample_period,
                             rel_tol=1e-12):
        raise ValueError("input and output traces must share one grid")
    target = np.abs(pulse_out.amplitude)
    scale = target.max()
    if scale == 0:
        raise ValueError("output trace is identically zero")

    def residual(p):
        model = np.abs(propagate(pulse_in, p[0], atom).amplitude)
        return (model - target) / scale

    energy_ratio = pulse_out.energy / pulse_in.energy
    od0 = min(max(-math.log(max(energy_ratio, 1e-12)), 1e-3), 30.0)
    res = least_squares(residual, x0=[od0], bounds=([0.0], [np.inf]),
                        method="trf", ftol=1e-12, xtol=1e-12, max_nfev=200)
    if res.status <= 0:
        raise FitError("pulse-shape fit did not converge", res)
    dof = max(len(target) - 1, 1)
    scatter = 2.0 * res.cost / dof
    jtj = float((res.jac.T @ res.jac)[0, 0])
    err = math.sqrt(scatter / jtj) if jtj > 0 else float("inf")
    return ODEstimate(Estimate(float(res.x[0]), err), "pulse_shape")


def flat_top_pulse(duration: float, sample_period: float, rise_time: float,
                   n_samples: int, delay: float | None = None) -> ProbePulse:
    """Flat-top probe pulse with smooth edges on an ``n_samples`` grid."""
    t = np.arange(n_samples) * sample_period
    t0 = 2.0 * rise_time if delay is None else delay
    ramp_up = 0.5 * (1.0 + erf((t - t0) / rise_time))
    ramp_down = 0.5 * (1.0 + erf((t - t0 - duration) / rise_time))
    return ProbePulse(ramp_up - ramp_down, sample_period)


# ---------------------------------------------------------------------------
# trace and scan files

def write_pulse_trace(pulse: ProbePulse, path) -> None:
    """Detector-facing trace: complex envelopes are written as their
    magnitude, which is what the pulse-shape fit consumes."""
    amp = pulse.amplitude
    if np.iscomplexobj(amp):
        amp = np.abs(amp)
    with open(path, "w") as fh:
        fh.write("time_ns,amplitude\n")
        for t, a in zip(pulse.times, amp):
            fh.write(f"{t * 1e9:.6f},{float_repr(a)}\n")


def read_pulse_trace(path, detuning: float = 0.0) -> ProbePulse:
    times, amps = [], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line == "time_ns,amplitude":
                continue
            try:
                t_ns, amp = line.split(",", 1)
                times.append(float(t_ns))
                amps.append(float(amp))
            except ValueError:
                raise ValueError(f"line {lineno}: cannot parse trace row {line!r}")
    times = np.asarray(times)
    steps = np.diff(times)
    if len(times) < 2 or not np.allclose(steps, steps[0], rtol=1e-6):
        raise ValueError("trace grid must be uniform")
    return ProbePulse(np.asarray(amps), steps[0] * 1e-9, detuning)


def write_scan(points, path) -> None:
    """Scan file rows are (detuning_MHz, transmission)."""
    with open(path, "w") as fh:
        fh.write("detuning_MHz,transmission\n")
        for delta, trans in points:
            fh.write(f"{delta / (2e6 * np.pi):.9g},{float_repr(trans)}\n")


def read_scan(path):
    points = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#") or line == "detuning_MHz,transmission":
                continue
            try:
                mhz, trans = line.split(",", 1)
                points.append((2.0 * np.pi * 1e6 * float(mhz), float(trans)))
            except ValueError:
                raise ValueError(f"line {lineno}: cannot parse scan row {line!r}")
    return points
