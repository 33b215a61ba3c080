"""
Pneumatic fusion
================

Pad pressures give the force, the EIT image gives its distribution. Compare
force uniformity across a grid of presses with and without fusion.
"""

# %%
import numpy as np

from hybridskin.config import ExperimentConfig
from hybridskin.fusion import PadCalibration, fuse, pad_force
from hybridskin.phantom import ContactSpec, pneumatic_response
from hybridskin.pipeline import build_bundle, run_grid

bundle = build_bundle(ExperimentConfig())
pads = bundle.model.pads
gains = bundle.config.pad_gains_pa_per_n

# %%
# two presses on one pad; the pressure is the sum of the single-press pressures
a = ContactSpec((35, 40), 12.0, release=1.0)
b = ContactSpec((65, 60), 8.0, onset=0.5)
for t in (0.25, 0.75, 1.5):
    frame = pneumatic_response(pads, bundle.mesh, [a, b], gains, t)
    print(f"t={t}s pad pressures {np.round(frame.pressures, 2)} Pa -> "
          f"{pad_force(frame, PadCalibration.exact(gains)).round(3)} N")

# %%
# fusion keeps the pad force whatever the image scale
img = np.random.default_rng(0).uniform(0, 1, bundle.mesh.n_elements)
frame = pneumatic_response(pads, bundle.mesh, [ContactSpec((150, 50), 10.0)], gains, 0.0)
for c in (0.1, 1.0, 100.0):
    fm = fuse(c * img, frame, pads, PadCalibration.exact(gains))
    print(f"image x{c}: map total {fm.total:.6f} N, per pad {fm.total_per_pad.round(4)}")

# %%
# a 5x5 indentation grid on a rough coating
res = run_grid(bundle, 5, 5, 20.0)
print(f"EIT-only cv {res.eit_report.cv:.3f}, hybrid cv {res.hybrid_report.cv:.2e}")
print(f"interior localization error: EIT {res.mean_error('eit'):.2f} mm, hybrid {res.mean_error('hybrid'):.2f} mm")
