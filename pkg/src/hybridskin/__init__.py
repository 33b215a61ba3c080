"""Simulation-backed EIT and pneumatic hybrid tactile sensing."""

__version__ = "0.1.0"

from .forward import (ForwardSolver, MeasurementProtocol, SensorModel, assemble_stiffness,
                      compute_jacobian, default_protocol, simulate_measurements, solve_potentials)
from .fusion import ForceMap, PadCalibration, fit_pad_calibration, fuse, mask_image, pad_force, redistribute
from .inverse import (Reconstructor, build_reconstructor, calibrate_eit_scale, eit_force_estimate,
                      reconstruct)
from .mesh import ElectrodeSet, Mesh, PadLayout, build_pad_layout, build_rect_mesh, place_grid_electrodes
from .metrics import force_rmse, localize, sensitivity_cv
from .phantom import (ContactSpec, GainField, IndentationRecord, PneumaticFrame, SimConfig,
                      contact_to_perturbation, make_gain_field, pneumatic_response, preprocess,
                      run_indentation, sample_training_grid)
