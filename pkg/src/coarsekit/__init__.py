"""coarsekit: a numerical laboratory for mean-field coarsening dynamics."""

from .coefficients import (
    CoefficientSet,
    DriftFunction,
    SyntheticDrift,
    build_geometry,
    check_stability_conditions,
    make_lsw_coefficients,
    unit_drift,
    validate_structure,
)

__version__ = "0.1.0"
