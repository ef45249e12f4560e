"""Single-site disorder densities.

The default (and currently only) family is the uniform density on
[-sqrt(3), sqrt(3)]: even, bounded, compactly supported, unit variance.
Its even moments are available in closed form, which the cumulant tests rely
on (m_4 = 9/5).
"""

import math
from dataclasses import dataclass

import numpy as np

SQRT3 = math.sqrt(3.0)


@dataclass(frozen=True)
class DensitySpec:
    """Even, bounded, compactly supported single-site density with variance 1."""

    family: str = "uniform"

    def __post_init__(self):
        if self.family != "uniform":
            raise ValueError(f"unsupported density family: {self.family!r}")

    @property
    def support_min(self) -> float:
        """Lower edge of the support; lam * support_min is the a.s. spectral bottom."""
        return -SQRT3

    @property
    def support_max(self) -> float:
        return SQRT3

    def moment(self, order: int) -> float:
        """Raw moment E[V^order]; odd moments vanish by evenness."""
        if order < 0:
            raise ValueError("moment order must be nonnegative")
        if order % 2 == 1:
            return 0.0
        # uniform on [-a, a]: E V^{2l} = a^{2l} / (2l + 1), with a^2 = 3
        return 3.0 ** (order // 2) / (order + 1)

    def pdf(self, v):
        v = np.asarray(v, dtype=float)
        return np.where(np.abs(v) <= SQRT3, 1.0 / (2.0 * SQRT3), 0.0)

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return rng.uniform(-SQRT3, SQRT3, size=size)
