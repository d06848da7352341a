"""Numerical calculus for the planar d-bar operator on desk-scale grids."""

from .grid import (
    ComplexGrid,
    Field,
    MollifierSpec,
    OneForm,
    build_grid,
    disc_grid,
    extend_constant,
    holder_norm,
    lp_norm,
    mollify,
    polydisc_grid,
    rect_grid,
    slice_field,
)

__version__ = "0.1.0"
