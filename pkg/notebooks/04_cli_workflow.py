"""
Command line workflow
=====================

Build a bundle, run an indentation grid, replay one recorded site and print
the report, all through the ``hybridskin`` entry point.
"""

# %%
import tempfile
from pathlib import Path

from hybridskin.cli import main

work = Path(tempfile.mkdtemp(prefix="hybridskin_"))
cfg = work / "desk.txt"
cfg.write_text("""\
width_mm = 100
height_mm = 100
electrode_rows = 3
electrode_cols = 3
electrode_margin_mm = 10
profile_sigma_mm = 8
seed = 1
""")
bundle = work / "bundle"

# %%
main(["build", "--config", str(cfg), "--out", str(bundle)])

# %%
main(["indent-grid", "--bundle", str(bundle), "--rows", "3", "--cols", "3", "--peak", "20",
      "--out", str(bundle / "grid"), "--save-records"])

# %%
records = bundle / "grid" / "records"
main(["replay", "--bundle", str(bundle), "--record", str(records / "site_004"),
      "--blank", str(records / "blank"), "--out", str(bundle / "replay_site_004")])

# %%
main(["report", "--bundle", str(bundle)])
print("outputs under", work)
