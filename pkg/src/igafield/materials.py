"""Material models: reluctivity laws, magnet and coil sources."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MU0 = 4e-7 * np.pi
NU0 = 1.0 / MU0


@dataclass(frozen=True)
class Reluctivity:
    """Reluctivity law nu(B^2), either constant or the analytic exponential
    model nu = k1*exp(k2*B^2) + k3 (a Brauer-type curve)."""

    kind: str  # "constant" | "analytic_nonlinear"
    nu: float = NU0
    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0

    def __post_init__(self):
        if self.kind == "constant":
            if self.nu <= 0:
                raise ValueError("constant reluctivity must be positive")
        elif self.kind == "analytic_nonlinear":
            if self.k1 < 0 or self.k2 < 0 or self.k3 < 0:
                raise ValueError("analytic reluctivity needs k1, k2, k3 >= 0")
            if self.k1 + self.k3 <= 0:
                raise ValueError("analytic reluctivity must be positive at B=0")
        else:
            raise ValueError(f"unknown reluctivity kind {self.kind!r}")

    @property
    def is_nonlinear(self) -> bool:
        return self.kind == "analytic_nonlinear" and self.k2 > 0

    def __call__(self, b_squared):
        """Evaluate nu at |B|^2 (scalar or array).

        The exponential law is clamped at the vacuum reluctivity: material
        cannot be less permeable than free space, and the unclamped curve
        crosses nu_0 around |B| ~ 3 T, which would otherwise destabilize
        the fixed-point iteration at field-concentration corners.
        """
        if self.kind == "constant":
            return self.nu * np.ones_like(np.asarray(b_squared, dtype=float))
        raw = self.k1 * np.exp(self.k2 * np.asarray(b_squared, dtype=float)) + self.k3
        return np.minimum(raw, NU0)


def constant_reluctivity(nu: float = NU0) -> Reluctivity:
    return Reluctivity(kind="constant", nu=nu)


def analytic_reluctivity(k1: float, k2: float, k3: float) -> Reluctivity:
    return Reluctivity(kind="analytic_nonlinear", nu=0.0, k1=k1, k2=k2, k3=k3)


@dataclass(frozen=True)
class Material:
    """Per-patch material data for the magnetostatic problem."""

    reluctivity: Reluctivity
    b_rem: float = 0.0       # remanence magnitude [T], 0 for non-magnets
    beta: float = 0.0        # remanence direction angle [rad]
    j_src: float = 0.0       # source current density [A/m^2], 0 for non-coils


AIR = Material(reluctivity=constant_reluctivity())
