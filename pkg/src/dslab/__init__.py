"""Numerical laboratory for a damped Schrodinger operator on a periodic box."""

__version__ = "0.1.0"

from .spectral_core import (
    ComplexField,
    DilationParams,
    FourierSymbol,
    Grid,
    apply_multiplier,
    dilate,
    dilation_lp_factor,
    gaussian_packet,
    make_grid,
    plane_wave,
    random_field,
    weight_apply,
)

__all__ = [
    "ComplexField",
    "DilationParams",
    "FourierSymbol",
    "Grid",
    "apply_multiplier",
    "dilate",
    "dilation_lp_factor",
    "gaussian_packet",
    "make_grid",
    "plane_wave",
    "random_field",
    "weight_apply",
    "__version__",
]
