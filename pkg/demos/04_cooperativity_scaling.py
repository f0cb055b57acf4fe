"""Decay time versus atom number: the cooperativity fit.

Each optical depth is simulated at fixed read power, the binned
wavepacket is fit for (chi, alpha), and the fitted cooperativities are
regressed against optical depth with a unit intercept.  The slope agrees
with the cross-section argument, and the implied decay times shorten as
atoms are added.
"""

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from dlczsim import (beta_theory, fit_cooperativity, fit_wavepacket,
                     histogram_wavepacket, simulate, superradiant_decay_time,
                     wavepacket_density)
from dlczsim.config import load_config
from dlczsim.physics import ReadoutSpec
from dlczsim.source import child_seed

os.makedirs("demos/output", exist_ok=True)

cfg = load_config("presets/od_sweep.cfg")
atom = cfg.atom

points, taus, panels = [], [], []
for i, od in enumerate(cfg.sweep.values):
    pcfg = cfg.at_sweep_point(od)
    events = simulate(pcfg.atom, pcfg.readout, pcfg.model, pcfg.timing,
                      child_seed(cfg.seed, i))
    wp = histogram_wavepacket(events, pcfg.timing, pcfg.readout.dt)
    fit = fit_wavepacket([(wp, pcfg.readout.power)], atom, mode="per-curve")[0]
    tau = superradiant_decay_time(fit.chi.value, atom)
    points.append((od, fit.chi.value, fit.chi.error))
    taus.append(tau)
    panels.append((od, wp, fit))
    print(f"od={od}: chi = {fit.chi.value:.3f} +- {fit.chi.error:.3f}  "
          f"alpha = {fit.alpha.value:.2f}  tau = {tau * 1e9:.1f} ns")

coop = fit_cooperativity(points)
print(f"\ncooperativity slope beta = {coop.beta.value:.3f} +- "
      f"{coop.beta.error:.3f}  (theory {beta_theory(atom):.3f})")

fig, axes = plt.subplots(3, 2, figsize=(8, 7), sharex=True)
for ax, (od, wp, fit) in zip(axes.ravel(), panels):
    t_ns = wp.t_centers * 1e9
    norm = wp.pc_total
    ax.plot(t_ns, wp.pc / norm, "o", ms=2, mfc="none", color="k")
    spec = ReadoutSpec(power=0.3e-3, alpha=fit.alpha.value, chi=fit.chi.value,
                       dt=wp.bin_width, read_duration=840e-9)
    ax.plot(t_ns, wavepacket_density(wp.t_centers, spec, atom), "-",
            color="tab:red", lw=1.0)
    ax.plot(t_ns, wp.p2 / norm, "--", color="tab:blue", lw=0.8)
    ax.set_xlim(0, 250)
    ax.set_title(f"OD = {od}", fontsize=9)
fig.supxlabel("time since read turn-on (ns)")
fig.supylabel("normalized conditional probability")
fig.tight_layout()
fig.savefig("demos/output/od_wavepackets.png", dpi=150)

ods = np.array([p[0] for p in points])
chis = np.array([p[1] for p in points])
errs = np.array([p[2] for p in points])
fig, ax = plt.subplots(figsize=(4.8, 3.6))
ax.errorbar(ods, chis, yerr=errs, fmt="o", color="k")
grid = np.linspace(0, 5.2, 50)
ax.plot(grid, 1 + coop.beta.value * grid, "-", color="tab:red")
ax.set_xlabel("optical depth")
ax.set_ylabel("cooperativity")
inset = fig.add_axes([0.6, 0.22, 0.28, 0.3])
inset.plot(ods, np.array(taus) * 1e9, "s", ms=3, color="tab:purple")
inset.set_ylabel("tau (ns)", fontsize=7)
inset.tick_params(labelsize=6)
fig.tight_layout()
fig.savefig("demos/output/cooperativity_fit.png", dpi=150)
print("wrote demos/output/od_wavepackets.png and cooperativity_fit.png")
