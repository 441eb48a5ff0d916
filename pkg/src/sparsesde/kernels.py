"""Smoothing kernels on [-1, 1]."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

# Phi(1) - Phi(-1), mass of the standard normal on [-1, 1]
_NORMAL_MASS = math.erf(1.0 / math.sqrt(2.0))


@dataclass(frozen=True)
class KernelSpec:
    """Named kernel with compact support [-1, 1] integrating to one."""

    family: str

    def values(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        inside = np.abs(u) <= 1.0
        if self.family == "epanechnikov":
            out = 0.75 * (1.0 - u * u)
        elif self.family == "gaussian-truncated":
            out = np.exp(-0.5 * u * u) / (math.sqrt(2.0 * math.pi) * _NORMAL_MASS)
        else:
            raise ValidationError(f"unknown kernel family {self.family!r}")
        return np.where(inside, out, 0.0)

    def check_mass(self, tol: float = 1e-6) -> float:
        """Quadrature check that the kernel integrates to 1; returns the mass."""
        u = np.linspace(-1.0, 1.0, 20001)
        mass = float(np.trapezoid(self.values(u), u))
        if abs(mass - 1.0) > tol:
            raise ValidationError(f"kernel {self.family} has mass {mass}")
        return mass


EPANECHNIKOV = KernelSpec("epanechnikov")
GAUSSIAN_TRUNCATED = KernelSpec("gaussian-truncated")


def kernel_by_name(name: str) -> KernelSpec:
    spec = KernelSpec(name)
    spec.check_mass()
    return spec
