"""Closed-form theory of the collective readout.

The retrieved photon leaves the ensemble with a wavepacket shaped by a
damped, driven oscillation between the storage and excited states.  The
emission density, its cumulative distribution and its parameter gradient
are evaluated here in all three damping regimes, together with the
relations tying the cooperativity to atom number, optical depth and the
superradiant decay time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.constants import c as C_LIGHT, hbar as HBAR

# Relative half-width |Omega^2 - (chi*Gamma/2)^2| / (chi*Gamma/2)^2 below
# which the series branch replaces the trig/hyperbolic forms.  Avoids
# catastrophic cancellation at critical damping.
CRITICAL_WINDOW = 1e-6

ALPHA_POWER_UNITS = {"mW": 1e-3, "W": 1.0}


@dataclass(frozen=True)
class AtomSpec:
    """Physical constants of the emitting transition.

    Parameters
    ----------
    gamma : float
        Angular decay rate of the excited state (rad/s).  A quoted
        linewidth of 5.2 MHz corresponds to ``2*pi*5.2e6``.
    wavelength : float
        Wavelength of the retrieved photon (m).
    i_sat : float
        Saturation intensity of the transition (W/m^2).
    """

    gamma: float
    wavelength: float
    i_sat: float

    def __post_init__(self):
        if not (self.gamma > 0 and self.wavelength > 0 and self.i_sat > 0):
            raise ValueError("gamma, wavelength and i_sat must be positive")

    @property
    def k(self) -> float:
        """Wavevector modulus of the retrieved photon (rad/m)."""
        return 2.0 * np.pi / self.wavelength

    @property
    def omega(self) -> float:
        """Optical angular frequency of the transition (rad/s)."""
        return 2.0 * np.pi * C_LIGHT / self.wavelength

    @property
    def sigma0(self) -> float:
        """On-resonance scattering cross section (m^2)."""
        return HBAR * self.omega * self.gamma / (2.0 * self.i_sat)

    @classmethod
    def cesium_d2(cls) -> "AtomSpec":
        """Cesium D2 parameters used throughout: 5.2 MHz linewidth,
        852.3 nm, 3.5 mW/cm^2 saturation intensity."""
        return cls(gamma=2.0 * np.pi * 5.2e6, wavelength=852.3e-9, i_sat=35.0)


@dataclass(frozen=True)
class EnsembleSpec:
    """Cold-atom ensemble seen by the photonic mode.

    ``od`` is the resonant optical depth of the ground-excited
    transition; ``waist`` the photonic mode waist (m).  ``n_atoms`` may
    be given redundantly, in which case it must reproduce ``od`` through
    the single-atom cross section (checked by :func:`ensemble_is_consistent`).
    """

    od: float
    waist: float
    n_atoms: float | None = None

    def __post_init__(self):
        if self.od < 0:
            raise ValueError("optical depth must be >= 0")
        if not self.waist > 0:
            raise ValueError("waist must be positive")
        if self.n_atoms is not None and self.n_atoms < 0:
            raise ValueError("n_atoms must be >= 0")


@dataclass(frozen=True)
class ReadoutSpec:
    """Read-beam and histogram settings.

    ``alpha`` calibrates the effective Rabi frequency through
    ``Omega = alpha * sqrt(P) * gamma`` with the power expressed in
    ``alpha_power_unit`` (the fits quote alpha against power in mW, so
    that is the default; the convention is stored explicitly because the
    number 9.0 is meaningless without it).
    """

    power: float
    alpha: float
    chi: float
    dt: float
    read_duration: float
    alpha_power_unit: str = "mW"

    def __post_init__(self):
        if self.power < 0:
            raise ValueError("read power must be >= 0")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.chi < 1.0:
            raise ValueError("cooperativity chi must be >= 1 (independent-atom limit)")
        if not self.dt > 0:
            raise ValueError("bin width dt must be positive")
        if not self.read_duration > 0:
            raise ValueError("read_duration must be positive")
        if self.alpha_power_unit not in ALPHA_POWER_UNITS:
            raise ValueError(f"unknown alpha power unit {self.alpha_power_unit!r}")


def rabi_frequency(readout: ReadoutSpec, atom: AtomSpec) -> float:
    """Effective Rabi frequency of the read transition (rad/s)."""
    scaled = readout.power / ALPHA_POWER_UNITS[readout.alpha_power_unit]
    return readout.alpha * np.sqrt(scaled) * atom.gamma


def damping_discriminant(readout: ReadoutSpec, atom: AtomSpec) -> float:
    """Omega^2 - (chi*Gamma/2)^2; positive means oscillatory readout."""
    omega = rabi_frequency(readout, atom)
    a = 0.5 * readout.chi * atom.gamma
    return omega * omega - a * a


def _lobe_terms(disc, a, t):
    """exp(-a*t) * sin^2(sqrt(disc)*t/2)/disc and its discriminant
    derivative, evaluated stably in all three damping regimes.

    ``disc`` and ``a`` are scalars, ``t`` an array.  The hyperbolic
    branch is written with non-positive exponents only, so arbitrarily
    overdamped specs cannot overflow.
    """
    at = a * t
    if abs(disc) < CRITICAL_WINDOW * a * a:
        # series in disc around critical damping: sin^2(x)/disc with
        # x^2 = disc*t^2/4 is entire in disc
        t2 = t * t
        s = t2 / 4.0 - disc * t2 * t2 / 48.0 + disc * disc * t2 * t2 * t2 / 1440.0
        sd = -t2 * t2 / 48.0 + disc * t2 * t2 * t2 / 720.0
        decay = np.exp(-at)
        return decay * s, decay * sd
    if disc > 0:
        root = np.sqrt(disc)
        x = 0.5 * root * t
        decay = np.exp(-at)
        s = decay * np.sin(x) ** 2 / disc
        sd = decay * (np.sin(2.0 * x) * t / (4.0 * disc * root) - np.sin(x) ** 2 / (disc * disc))
        return s, sd
    kappa = np.sqrt(-disc)
    # exp(-a t) sinh^2(kappa t/2) = (exp((kappa-a)t/2) - exp(-(kappa+a)t/2))^2 / 4
    ep = np.exp(0.5 * (kappa - a) * t)
    em = np.exp(-0.5 * (kappa + a) * t)
    sinh_sq = 0.25 * (ep - em) ** 2
    # exp(-a t) sinh(kappa t) = (exp((kappa-a)t) - exp(-(kappa+a)t)) / 2
    sinh_1 = 0.5 * (ep * ep - em * em)
    s = -sinh_sq / disc
    sd = -sinh_1 * t / (4.0 * kappa ** 3) + sinh_sq / (disc * disc)
    return s, sd


def _density_setup(readout: ReadoutSpec, atom: AtomSpec):
    omega = rabi_frequency(readout, atom)
    a = 0.5 * readout.chi * atom.gamma
    disc = omega * omega - a * a
    prefactor = readout.chi * atom.gamma * omega * omega * readout.dt
    return omega, a, disc, prefactor


def wavepacket_density(t, readout: ReadoutSpec, atom: AtomSpec):
    """Emission probability per histogram bin at time ``t`` after the
    read pulse turns on.

    Evaluates the normalized readout wavepacket (a probability density
    multiplied by the bin width ``readout.dt``).  In the oscillatory
    regime (Omega above chi*Gamma/2) the shape is a damped Rabi
    oscillation with zeros; below it the sine continues analytically to
    a node-free hyperbolic lobe, and exactly at critical damping to the
    (t/2)^2 limit.

    Parameters
    ----------
    t : float or ndarray
        Time since read turn-on (s), >= 0.
    readout, atom
        Drive and transition parameters.

    Returns
    -------
    float or ndarray matching ``t``.
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("emission time must be >= 0")
    _, a, disc, prefactor = _density_setup(readout, atom)
    s, _ = _lobe_terms(disc, a, t_arr)
    out = prefactor * s
    return out if np.ndim(t) else float(out)


def wavepacket_gradient(t, readout: ReadoutSpec, atom: AtomSpec):
    """Partial derivatives of :func:`wavepacket_density` with respect to
    (chi, alpha) at fixed power.  Returns a pair shaped like ``t``."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("emission time must be >= 0")
    omega, a, disc, prefactor = _density_setup(readout, atom)
    gamma = atom.gamma
    s, sd = _lobe_terms(disc, a, t_arr)
    # disc depends on chi through -(chi*gamma/2)^2 and on alpha through Omega^2
    d_chi = prefactor * (s * (1.0 / readout.chi - 0.5 * gamma * t_arr)
                         - sd * 0.5 * readout.chi * gamma * gamma)
    d_alpha = (2.0 / readout.alpha) * prefactor * (s + sd * omega * omega)
    if np.ndim(t):
        return d_chi, d_alpha
    return float(d_chi), float(d_alpha)


def wavepacket_cumulative(t, readout: ReadoutSpec, atom: AtomSpec):
    """Closed-form cumulative emission probability on [0, t].

    The full integral over [0, inf) is exactly 1 for any valid spec;
    this is what makes the density directly usable as a sampling law.
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("emission time must be >= 0")
    omega, a, disc, prefactor = _density_setup(readout, atom)
    if omega == 0.0:
        raise ValueError("cumulative distribution undefined at zero read power")
    om2 = omega * omega
    at = a * t_arr
    if abs(disc) < CRITICAL_WINDOW * a * a:
        decay = np.exp(-at)
        i2 = 2.0 / a ** 3 - decay * (t_arr ** 2 / a + 2.0 * t_arr / a ** 2 + 2.0 / a ** 3)
        i4 = 24.0 / a ** 5 - decay * (t_arr ** 4 / a + 4.0 * t_arr ** 3 / a ** 2
                                      + 12.0 * t_arr ** 2 / a ** 3 + 24.0 * t_arr / a ** 4
                                      + 24.0 / a ** 5)
        cdf = prefactor / readout.dt * (i2 / 4.0 - disc * i4 / 48.0)
    elif disc > 0:
        root = np.sqrt(disc)
        decay = np.exp(-at)
        inner = a - decay * (a * np.cos(root * t_arr) - root * np.sin(root * t_arr))
        cdf = (prefactor / readout.dt / disc) * 0.5 * ((1.0 - decay) / a - inner / om2)
    else:
        kappa = np.sqrt(-disc)
        ep = np.exp((kappa - a) * t_arr)
        em = np.exp(-(kappa + a) * t_arr)
        cosh_term = 0.5 * (ep + em)
        sinh_term = 0.5 * (ep - em)
        inner = a - (a * cosh_term + kappa * sinh_term)
        decay = np.exp(-at)
        cdf = (prefactor / readout.dt / disc) * 0.5 * ((1.0 - decay) / a - inner / om2)
    out = np.clip(cdf, 0.0, 1.0)
    return out if np.ndim(t) else float(out)


def wavepacket_nodes(readout: ReadoutSpec, atom: AtomSpec) -> np.ndarray:
    """Zeros of the emission density inside the read window.

    Only the oscillatory regime has nodes; the list is empty at or
    below critical damping.
    """
    disc = damping_discriminant(readout, atom)
    if disc <= 0:
        return np.array([])
    spacing = 2.0 * np.pi / np.sqrt(disc)
    n_max = int(np.floor(readout.read_duration / spacing))
    return spacing * np.arange(1, n_max + 1)


def chi_from_n(n_atoms: float, waist: float, atom: AtomSpec) -> float:
    """Cooperativity of ``n_atoms`` atoms coupled to a mode of the given
    waist: 1 + N / (w0^2 k^2)."""
    if n_atoms < 0:
        raise ValueError("n_atoms must be >= 0")
    if not waist > 0:
        raise ValueError("waist must be positive")
    k = atom.k
    return 1.0 + n_atoms / (waist * waist * k * k)


def beta_theory(atom: AtomSpec) -> float:
    """Slope of cooperativity versus optical depth, pi/(sigma0 k^2)."""
    return np.pi / (atom.sigma0 * atom.k ** 2)


def chi_from_od(od: float, atom: AtomSpec) -> float:
    """Cooperativity at a given optical depth, 1 + beta * OD."""
    if od < 0:
        raise ValueError("optical depth must be >= 0")
    return 1.0 + beta_theory(atom) * od


def superradiant_decay_time(chi: float, atom: AtomSpec) -> float:
    """Collectively shortened 1/e decay time (chi*Gamma/2)^-1 in seconds."""
    if chi < 1.0:
        raise ValueError("chi must be >= 1")
    return 2.0 / (chi * atom.gamma)


def od_from_n(n_atoms: float, waist: float, atom: AtomSpec) -> float:
    """Optical depth of ``n_atoms`` atoms in a beam of the given waist."""
    return n_atoms * atom.sigma0 / (np.pi * waist * waist)


def n_atoms_for_od(od: float, waist: float, atom: AtomSpec) -> float:
    """Atom number producing the requested optical depth."""
    return od * np.pi * waist * waist / atom.sigma0


def ensemble_is_consistent(ensemble: EnsembleSpec, atom: AtomSpec,
                           rtol: float = 1e-12) -> bool:
    """Whether a redundant ``n_atoms`` reproduces the stated OD."""
    if ensemble.n_atoms is None:
        return True
    implied = od_from_n(ensemble.n_atoms, ensemble.waist, atom)
    return bool(np.isclose(implied, ensemble.od, rtol=rtol, atol=0.0))
