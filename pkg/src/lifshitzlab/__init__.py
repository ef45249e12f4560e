"""Desk-scale numerical laboratory for band-edge localization in the 3D Anderson model.

Modules:

* `selfenergy`: dispersion e(p), torus integrals, the self-energy fixed point
* `green`: free lattice Green function (Bessel-integral and FFT routes)
* `diagrams`: even-block partitions, Feynman graphs, power counting
* `graphvalues`: Monte Carlo graph values, scaling checks, moment bounds
* `expansion`: renormalized resolvent expansion with the stopping rule
* `anderson`: finite boxes, sparse resolvents, fractional-moment diagnostics
* `cli`: reproducible experiment runner
"""

__version__ = "0.1.0"

from .selfenergy import (EnergyContext, QuadratureSpec, TorusPoint, dispersion,
                         energy_of_estar, solve_self_energy, threshold_E_eps,
                         torus_integral_I1, torus_integral_I2)

__all__ = [
    "__version__",
    "EnergyContext",
    "QuadratureSpec",
    "TorusPoint",
    "dispersion",
    "energy_of_estar",
    "solve_self_energy",
    "threshold_E_eps",
    "torus_integral_I1",
    "torus_integral_I2",
]
