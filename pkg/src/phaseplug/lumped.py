"""Lumped-parameter compression driver and the ideal outlet response.

A chamber of depth ``d`` behind a diaphragm vibrating with acceleration
amplitude ``a_d`` feeds an outlet ``kappa`` times smaller than the diaphragm.
Treating the chamber air as a lumped compliance and the outlet as a plane-wave
load gives a closed-form pressure; the ideal response at the end of a
waveguide adds a plane-wave delay over the distance ``L``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LumpedParams:
    d: float
    kappa: float
    rho0: float = 1.2044
    c0: float = 343.20
    a_d: float = 1.0
    L: float = 0.0

    def __post_init__(self):
        if not (self.d >= 0 and self.kappa > 0 and self.L >= 0):
            raise ValueError("lumped parameters need d >= 0, kappa > 0, L >= 0")
        if not (self.rho0 > 0 and self.c0 > 0):
            raise ValueError("rho0 and c0 must be positive")


def _check_k(k):
    k = np.asarray(k, dtype=float)
    if np.any(~(k > 0)):
        raise ValueError("wavenumber must be positive")
    return k


def lumped_pressure(params: LumpedParams, k):
    """Outlet pressure amplitude ``rho0 a_d / (k (-d k + i / kappa))``."""
    k = _check_k(k)
    p = params.rho0 * params.a_d / (k * (-params.d * k + 1j / params.kappa))
    return p if p.ndim else complex(p)


def lumped_magnitude(params: LumpedParams, k):
    """``|p|`` written directly as a modulus (no complex arithmetic)."""
    k = _check_k(k)
    return params.rho0 * abs(params.a_d) / (k * np.sqrt((params.d * k) ** 2 + params.kappa ** -2))


def ideal_outlet_target(params: LumpedParams, k):
    """Lumped pressure delayed by a plane wave travelling ``L``."""
    k = _check_k(k)
    out = lumped_pressure(params, k) * np.exp(-1j * k * params.L)
    return out if np.ndim(out) else complex(out)


def response_table(params: LumpedParams, frequencies) -> np.ndarray:
    """Rows ``(f, |p|)`` for the given frequencies in Hz."""
    f = np.asarray(frequencies, dtype=float)
    if np.any(~(f > 0)):
        raise ValueError("frequencies must be positive")
    k = 2 * np.pi * f / params.c0
    return np.column_stack([f, lumped_magnitude(params, k)])
