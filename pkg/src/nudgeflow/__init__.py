"""Pseudo-spectral 2D Navier-Stokes with continuous data assimilation by nudging."""
from .fields import GridSpec, VectorField, VelocityField, ScalarField
from .interpolants import InterpolantSpec, Kind, Order, certify_c0
from .solver import Forcing, Nudge, Stepper, StepperConfig, integrate, step
from .assimilation import AssimilationConfig, ErrorSeries, run_pair, thresholds

__version__ = "0.1.0"
