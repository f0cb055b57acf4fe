"""Three routes to the same optical depth.

A weak resonant pulse is propagated through the cloud.  The center of a
long pulse gives the CW log ratio; a detuning scan of the transmission
is fit to an exponential-of-Lorentzian; and the distorted shape of a
shorter pulse is fit directly with the linear dispersion theory.
"""

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from dlczsim import AtomSpec, ProbePulse, od_log_ratio, od_lorentzian_scan, \
    od_pulse_shape, propagate
from dlczsim.odprobe import flat_top_pulse, transmission_spectrum

os.makedirs("demos/output", exist_ok=True)

atom = AtomSpec.cesium_d2()
od_true = 4.29
rng = np.random.default_rng(12)

# method 1: CW log ratio at the center of a long pulse
cw = flat_top_pulse(8e-6, 2e-9, 50e-9, 8192)
center = int(round((2 * 50e-9 + 4e-6) / 2e-9))
out_cw = propagate(cw, od_true, atom)
est1 = od_log_ratio(float(cw.intensity[center]), float(out_cw.intensity[center]))

# method 2: transmission versus detuning
hwhm = 0.5 * atom.gamma
deltas = np.linspace(-3 * hwhm, 3 * hwhm, 13)
trans = np.clip(transmission_spectrum(deltas, od_true, atom)
                * (1 + 0.01 * rng.standard_normal(13)), 1e-9, 1.0)
est2 = od_lorentzian_scan(list(zip(deltas, trans)), atom)

# method 3: transient pulse-shape fit at 1% amplitude noise
pulse = flat_top_pulse(500e-9, 1e-9, 30e-9, 4096)
out = propagate(pulse, od_true, atom)
noisy = np.abs(out.amplitude) + 0.01 * rng.standard_normal(4096)
est3 = od_pulse_shape(pulse, ProbePulse(np.abs(noisy), 1e-9), atom)

print(f"true optical depth       : {od_true}")
print(f"log ratio                : {est1.od.value:.4f}")
print(f"Lorentzian detuning scan : {est2.od.value:.4f} +- {est2.od.error:.4f}")
print(f"pulse-shape fit          : {est3.od.value:.4f} +- {est3.od.error:.4f}")

fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
t_ns = pulse.times * 1e9
ax1.plot(t_ns, pulse.intensity, "-", color="0.6", label="input")
ax1.plot(t_ns, np.abs(noisy) ** 2, "-", color="tab:red", lw=0.8,
         label="after cloud")
ax1.set_xlim(0, 800)
ax1.set_xlabel("time (ns)")
ax1.set_ylabel("intensity (arb.)")
ax1.legend(frameon=False, fontsize=8)
ax2.plot(deltas / (2e6 * np.pi), trans, "o", color="k", ms=4)
grid = np.linspace(deltas.min(), deltas.max(), 200)
ax2.plot(grid / (2e6 * np.pi),
         transmission_spectrum(grid, est2.od.value, atom), "-",
         color="tab:red")
ax2.set_xlabel("detuning (MHz)")
ax2.set_ylabel("transmission")
fig.tight_layout()
fig.savefig("demos/output/optical_depth_probes.png", dpi=150)
print("wrote demos/output/optical_depth_probes.png")
