import math

import pytest

from lifshitzlab import selfenergy as se


@pytest.fixture(scope="session")
def context_factory():
    """Build a consistent EnergyContext directly from (lam, estar)."""

    def make(lam: float, estar: float) -> se.EnergyContext:
        sigma = lam**2 * se.torus_integral_I1(estar) if lam else 0.0
        return se.EnergyContext(lam=lam, energy=estar + sigma, estar=estar,
                                sigma=sigma)

    return make


def combined_stderr(*errs):
    return math.sqrt(sum(e * e for e in errs))
