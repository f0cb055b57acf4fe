"""Parameter recovery from binned wavepackets and sweep summaries.

The wavepacket fit minimizes error-weighted residuals of normalized
bins against the collective-readout shape, sharing (chi, alpha) across
read powers in global mode.  Sweep-level fits extract the cooperativity
slope beta from chi versus OD and the onset exponent s from the log-log
growth of the conditional signal above its background.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .physics import AtomSpec, ReadoutSpec, wavepacket_density, wavepacket_gradient
from .stats import Estimate, Wavepacket

CHI_STARTS = (1.5, 3.0, 6.0)
ALPHA_STARTS = (3.0, 9.0, 27.0)
MAX_EVALUATIONS = 200
OBJECTIVE_FTOL = 1e-10
FIT_MASS_FRACTION = 0.999


class FitConvergenceError(RuntimeError):
    """No start converged; ``best`` holds the least-bad fit for diagnosis."""

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best


@dataclass
class WavepacketFit:
    """Result of a wavepacket shape fit."""

    chi: Estimate
    alpha: Estimate
    covariance: np.ndarray
    chi_squared_reduced: float
    residuals: np.ndarray
    dof: int
    n_evaluations: int
    converged: bool
    objective: float

    def report_rows(self) -> list[tuple[str, float]]:
        rows = [
            ("chi", self.chi.value), ("chi_err", self.chi.error),
            ("alpha", self.alpha.value), ("alpha_err", self.alpha.error),
            ("cov_chi_chi", float(self.covariance[0, 0])),
            ("cov_chi_alpha", float(self.covariance[0, 1])),
            ("cov_alpha_alpha", float(self.covariance[1, 1])),
            ("chi_squared_reduced", self.chi_squared_reduced),
            ("dof", float(self.dof)),
            ("iterations", float(self.n_evaluations)),
            ("converged", float(self.converged)),
        ]
        return rows


@dataclass
class ScalingFit:
    """Linear-fit summaries over an optical-depth sweep."""

    beta: Estimate | None = None
    s: Estimate | None = None
    od_threshold: float | None = None
    dof: int = 0
    chi_squared_reduced: float = float("nan")

    def __post_init__(self):
        if self.dof <= 0:
            raise ValueError("fit must retain at least one degree of freedom")


class _Curve:
    """Normalized bins, errors and the model time base for one curve.

    The fit window runs from read turn-on to the empirical 99.9%-mass
    time, which tracks the model's own mass cutoff without making the
    objective depend on the parameters being fit.  Empty bins get a
    one-count error floor.
    """

    def __init__(self, wavepacket: Wavepacket, power: float, weight: float):
        counts = wavepacket.counts_heralded
        self.total = int(counts.sum())
        if self.total == 0:
            raise ValueError("cannot fit an all-zero wavepacket")
        cum = np.cumsum(counts)
        last = int(np.searchsorted(cum, FIT_MASS_FRACTION * self.total))
        last = min(last, len(counts) - 1)
        sel = slice(0, last + 1)
        self.y = counts[sel] / self.total
        self.sigma = np.maximum(np.sqrt(counts[sel]), 1.0) / self.total / weight
        self.t = wavepacket.t_centers[sel]
        self.weight = weight
        self.power = power
        self.dt = wavepacket.bin_width
        self.window = wavepacket.n_bins * wavepacket.bin_width

    def readout_at(self, chi, alpha):
        return ReadoutSpec(power=self.power, alpha=alpha, chi=chi,
                           dt=self.dt, read_duration=self.window)

    def reweight_from_model(self, chi, alpha, atom) -> None:
        """Expected-count errors at the current optimum.  Weighting by
        observed counts correlates the weight with the fluctuation and
        biases the shape parameters at low counts; reweighting from the
        model removes that at first order."""
        expected = wavepacket_density(self.t, self.readout_at(chi, alpha),
                                      atom) * self.total
        self.sigma = (np.sqrt(np.maximum(expected, 1.0)) / self.total
                      / self.weight)


def _stacked_problem(curves, atom, weights):
    prepared = [_Curve(wp, power, w)
                for (wp, power), w in zip(curves, weights)]

    def residual(params):
        chi, alpha = params
        parts = [(c.y - wavepacket_density(c.t, c.readout_at(chi, alpha), atom))
                 / c.sigma for c in prepared]
        return np.concatenate(parts)

    def jacobian(params):
        chi, alpha = params
        rows = []
        for c in prepared:
            d_chi, d_alpha = wavepacket_gradient(c.t, c.readout_at(chi, alpha),
                                                 atom)
            rows.append(np.column_stack([-d_chi / c.sigma, -d_alpha / c.sigma]))
        return np.vstack(rows)

    n_points = sum(len(c.t) for c in prepared)
    return residual, jacobian, n_points, prepared


def _run_multistart(residual, jacobian, n_points):
    best = None
    best_start = -1
    for i, (chi0, alpha0) in enumerate(itertools.product(CHI_STARTS, ALPHA_STARTS)):
        res = least_squares(
            residual, x0=np.array([chi0, alpha0]), jac=jacobian,
            bounds=(np.array([1.0, 1e-8]), np.array([np.inf, np.inf])),
            method="trf", ftol=OBJECTIVE_FTOL, xtol=1e-13, gtol=1e-12,
            max_nfev=MAX_EVALUATIONS,
        )
        if best is None or res.cost < best.cost:
            best, best_start = res, i
    return best, best_start


def _package_fit(res, n_points) -> WavepacketFit:
    jtj = res.jac.T @ res.jac
    try:
        cov = np.linalg.inv(jtj)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(jtj)
    cov = 0.5 * (cov + cov.T)
    dof = max(n_points - 2, 1)
    return WavepacketFit(
        chi=Estimate(float(res.x[0]), float(np.sqrt(max(cov[0, 0], 0.0)))),
        alpha=Estimate(float(res.x[1]), float(np.sqrt(max(cov[1, 1], 0.0)))),
        covariance=cov,
        chi_squared_reduced=float(2.0 * res.cost / dof),
        residuals=res.fun,
        dof=dof,
        n_evaluations=int(res.nfev),
        converged=bool(res.status > 0),
        objective=float(res.cost),
    )


def fit_wavepacket(curves, atom: AtomSpec, mode: str = "global",
                   weights=None):
    """Fit (chi, alpha) to one or more normalized wavepackets.

    Parameters
    ----------
    curves : sequence of (Wavepacket, power)
        Binned conditional wavepackets with their read powers in watts
        (converted internally per the alpha convention, as in
        ReadoutSpec).
    atom : AtomSpec
    mode : "global" or "per-curve"
        Global mode shares both parameters across all curves (at least
        two required); per-curve mode fits every curve independently and
        returns a list.
    weights : sequence of float, optional
        Per-curve multipliers on the statistical weight, e.g. to
        down-weight low-power curves where reabsorption distorts the
        shape.  Default is equal weighting.

    Returns
    -------
    WavepacketFit or list of WavepacketFit

    Raises
    ------
    FitConvergenceError
        If no multistart branch converged; the error carries the best
        attempt for diagnosis.
    """
    curves = list(curves)
    if not curves:
        raise ValueError("need at least one wavepacket")
    if weights is None:
        weights = [1.0] * len(curves)
    if len(weights) != len(curves):
        raise ValueError("one weight per curve required")
    if any(w <= 0 for w in weights):
        raise ValueError("weights must be positive")
    if mode not in ("global", "per-curve"):
        raise ValueError(f"unknown fit mode {mode!r}")

    if mode == "per-curve":
        return [_fit_stacked([curve], atom, [w])
                for curve, w in zip(curves, weights)]
    if len(curves) < 2:
        raise ValueError("global mode shares parameters across powers; "
                         "give at least two curves or use per-curve mode")
    return _fit_stacked(curves, atom, weights)


def _fit_stacked(curves, atom, weights) -> WavepacketFit:
    residual, jacobian, n_points, prepared = _stacked_problem(
        curves, atom, weights)
    best, _ = _run_multistart(residual, jacobian, n_points)
    # reweighting passes: refine the errors from the fitted model and
    # refit from the current optimum until the parameters settle
    evaluations = int(best.nfev)
    for _ in range(4):
        previous = best.x.copy()
        for curve in prepared:
            curve.reweight_from_model(best.x[0], best.x[1], atom)
        best = least_squares(
            residual, x0=best.x, jac=jacobian,
            bounds=(np.array([1.0, 1e-8]), np.array([np.inf, np.inf])),
            method="trf", ftol=OBJECTIVE_FTOL, xtol=1e-13, gtol=1e-12,
            max_nfev=MAX_EVALUATIONS,
        )
        evaluations += int(best.nfev)
        if np.all(np.abs(best.x - previous) <= 1e-8 * np.abs(previous)):
            break
    fit = _package_fit(best, n_points)
    fit.n_evaluations = evaluations
    if not fit.converged:
        raise FitConvergenceError(
            f"wavepacket fit did not converge within {MAX_EVALUATIONS} evaluations",
            best=fit)
    return fit


def _weighted_line_through(x, y, sigma):
    """Weighted least squares for y = m*x + c; returns (m, c, sm, sc, chi2)."""
    w = 1.0 / sigma ** 2
    sw = w.sum()
    sx = (w * x).sum()
    sy = (w * y).sum()
    sxx = (w * x * x).sum()
    sxy = (w * x * y).sum()
    delta = sw * sxx - sx * sx
    m = (sw * sxy - sx * sy) / delta
    c = (sxx * sy - sx * sxy) / delta
    sm = np.sqrt(sw / delta)
    sc = np.sqrt(sxx / delta)
    chi2 = float((w * (y - m * x - c) ** 2).sum())
    return float(m), float(c), float(sm), float(sc), chi2


def fit_cooperativity(points) -> ScalingFit:
    """Weighted fit of chi = 1 + beta*OD with the intercept pinned at 1.

    ``points`` is a sequence of (od, chi, chi_err).  Points with zero
    quoted error switch the whole fit to equal weights, with the beta
    uncertainty then taken from the residual scatter.
    """
    pts = [(float(od), float(chi), float(err)) for od, chi, err in points]
    if len(pts) < 2:
        raise ValueError("need at least two points")
    od = np.array([p[0] for p in pts])
    chi = np.array([p[1] for p in pts])
    err = np.array([p[2] for p in pts])
    if np.unique(od).size < 2:
        raise ValueError("need at least two distinct optical depths")

    y = chi - 1.0
    dof = len(pts) - 1
    if np.any(err == 0.0):
        beta = float((od * y).sum() / (od * od).sum())
        resid = y - beta * od
        scatter = float(resid @ resid) / dof
        beta_err = float(np.sqrt(scatter / (od * od).sum()))
        chi2_red = float("nan")
    else:
        w = 1.0 / err ** 2
        beta = float((w * od * y).sum() / (w * od * od).sum())
        beta_err = float(1.0 / np.sqrt((w * od * od).sum()))
        chi2_red = float((w * (y - beta * od) ** 2).sum()) / dof
    return ScalingFit(beta=Estimate(beta, beta_err), dof=dof,
                      chi_squared_reduced=chi2_red)


def threshold_crossing(points) -> float | None:
    """OD where the pair correlation P_c/P_2 first exceeds 2.

    ``points`` is a sequence of (od, pc, p2) sorted or not; linear
    interpolation between the bracketing sweep points.  Returns the
    smallest OD if the correlation already starts above 2, None if it
    never crosses.
    """
    pts = sorted((float(od), float(pc) / float(p2)) for od, pc, p2 in points
                 if p2 > 0)
    if not pts:
        return None
    if pts[0][1] >= 2.0:
        return pts[0][0]
    for (od_lo, g_lo), (od_hi, g_hi) in zip(pts[:-1], pts[1:]):
        if g_lo < 2.0 <= g_hi:
            return od_lo + (2.0 - g_lo) * (od_hi - od_lo) / (g_hi - g_lo)
    return None


def fit_threshold_slope(points) -> ScalingFit:
    """Power-law exponent of the signal onset above threshold.

    ``points`` is a sequence of (od, pc, pc_err, p2, p2_err).  The
    log-log fit of (pc - p2) versus OD is restricted to the onset
    window: points with a >3-sigma excess that sit below half the
    plateau (taken as the largest pc in the sweep).  Also reports the
    OD where pc/p2 first exceeds 2.
    """
    pts = [tuple(float(v) for v in p) for p in points]
    if len(pts) < 3:
        raise ValueError("need at least three points")
    od = np.array([p[0] for p in pts])
    pc = np.array([p[1] for p in pts])
    pc_err = np.array([p[2] for p in pts])
    p2 = np.array([p[3] for p in pts])
    p2_err = np.array([p[4] for p in pts])

    excess = pc - p2
    excess_err = np.hypot(pc_err, p2_err)
    plateau = pc.max()
    usable = (excess > 3.0 * excess_err) & (pc < 0.5 * plateau) & (excess > 0)
    if usable.sum() < 3:
        raise ValueError("fewer than three points in the onset window")

    x = np.log(od[usable])
    y = np.log(excess[usable])
    sigma = excess_err[usable] / excess[usable]
    slope, _, slope_err, _, chi2 = _weighted_line_through(x, y, sigma)
    dof = int(usable.sum()) - 2
    return ScalingFit(
        s=Estimate(slope, slope_err),
        od_threshold=threshold_crossing(zip(od, pc, p2)),
        dof=dof,
        chi_squared_reduced=chi2 / dof,
    )
