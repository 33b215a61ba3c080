"""
Contact reconstruction
======================

Press a Gaussian contact into the sheet, reconstruct it with the precomputed
Tikhonov matrix and read back its position and force.
"""

# %%
from pathlib import Path

import numpy as np

from hybridskin import io as fio
from hybridskin.config import ExperimentConfig
from hybridskin.forward import ForwardSolver
from hybridskin.inverse import eit_force_estimate, reconstruct
from hybridskin.metrics import localize
from hybridskin.phantom import ContactSpec, contact_to_perturbation, make_gain_field
from hybridskin.pipeline import build_bundle

cfg = ExperimentConfig()
bundle = build_bundle(cfg)
rec = bundle.reconstructor
print(f"Q {rec.Q.shape}, lambda_rel {rec.lambda_rel}, prior {rec.prior} (exponent {rec.noser_exponent})")
print(f"EIT force scale {bundle.eit_scale:.4g} N per unit image sum")

# %%
def press(center, force, gain=None):
    ds = contact_to_perturbation(bundle.mesh, ContactSpec(center, force, cfg.profile_sigma_mm), gain,
                                 cfg.sigma0, cfg.force_to_sigma)
    dv = ForwardSolver(bundle.model, cfg.sigma0 + ds).measure(bundle.protocol) - bundle.baseline.measure(bundle.protocol)
    return reconstruct(rec, dv)

for center in [(100, 100), (60, 140), (160, 40)]:
    img = press(center, 20.0)
    est = localize(img, bundle.mesh)
    f = eit_force_estimate(img, bundle.mesh, bundle.eit_scale)
    print(f"contact at {center}: located at ({est[0]:.1f}, {est[1]:.1f}), EIT force {f:.2f} N")

# %%
# a rough coating changes the local sensitivity, so the EIT force drifts with position
gain = make_gain_field(bundle.mesh, 0.3, seed=0)
forces = [eit_force_estimate(press(c, 20.0, gain), bundle.mesh, bundle.eit_scale)
          for c in [(40, 40), (100, 40), (160, 100), (100, 160)]]
print("EIT-only estimates of a 20 N press:", np.round(forces, 2))

# %%
out = Path("notebook_outputs")
out.mkdir(exist_ok=True)
fio.write_pgm(out / "contact_60_140.pgm", press((60, 140), 20.0), bundle.mesh, vmin=0.0)
print("wrote", out / "contact_60_140.pgm")
