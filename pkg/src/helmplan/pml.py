"""Radial perfectly-matched-layer coefficients (d = 2).

The complex radial scaling r -> r + i f(r) with the cubic ramp

    f(r) = amplitude * (r - R_pml_minus)^3 / (3 (R_tr - R_pml_minus)^2)

turns on with two vanishing derivatives at the PML onset, so the transformed
coefficients are continuous there.  Two equivalent weak formulations are
provided:

* DivergenceForm -- the form multiplied by alpha*beta, with
  A = H diag(beta/alpha, alpha/beta) H^T, b = 0, n = alpha*beta; the matrix
  is complex-symmetric and satisfies a Garding inequality with omega = 0 in
  two dimensions.
* Unmultiplied -- A = H diag(alpha^-2, beta^-2) H^T, n = 1, and a first-order
  drift b = H (alpha^-2 (log(alpha*beta))', 0)^T; positivity requires a
  rotation e^{i omega} found by scanning.

Here alpha = 1 + i f'(r), beta = 1 + i f(r)/r and H is the rotation taking
the x-axis to the radial direction.  (The d = 3 variant replaces beta by a
double angular factor and is intentionally not implemented.)
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


class Formulation(enum.Enum):
    DivergenceForm = "divergence"
    Unmultiplied = "unmultiplied"


@dataclass(frozen=True)
class PMLProfile:
    R_pml_minus: float
    R_tr: float
    formulation: Formulation = Formulation.DivergenceForm
    amplitude: float = 1.0

    def __post_init__(self):
        if not (0 < self.R_pml_minus < self.R_tr):
            raise ValueError("require 0 < R_pml_minus < R_tr")
        if self.amplitude <= 0:
            raise ValueError("amplitude must be positive")


@dataclass(frozen=True)
class PMLCoefficients:
    A: np.ndarray   # (..., 2, 2) complex
    b: np.ndarray   # (..., 2) complex
    n: np.ndarray   # (...,) complex


def scaling(profile: PMLProfile, r) -> dict[str, np.ndarray]:
    """Cubic ramp values {f, fp, alpha, beta} at radii r (vectorized).

    Radii at or beyond R_tr are outside the computational domain.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0) or np.any(r >= profile.R_tr * (1 + 1e-14)):
        raise ValueError("radius outside (0, R_tr)")
    w = profile.R_tr - profile.R_pml_minus
    s = np.maximum(r - profile.R_pml_minus, 0.0)
    f = profile.amplitude * s**3 / (3.0 * w * w)
    fp = profile.amplitude * s**2 / (w * w)
    alpha = 1.0 + 1j * fp
    beta = 1.0 + 1j * f / r
    return {"f": f, "fp": fp, "alpha": alpha, "beta": beta}


def _second_derivative(profile: PMLProfile, r: np.ndarray) -> np.ndarray:
    w = profile.R_tr - profile.R_pml_minus
    s = np.maximum(r - profile.R_pml_minus, 0.0)
    return profile.amplitude * 2.0 * s / (w * w)


def coefficients(profile: PMLProfile, points) -> PMLCoefficients:
    """Coefficient triple (A, b, n) at each point (vectorized).

    Inside the physical region (r <= R_pml_minus) this is exactly (I, 0, 1)
    for either formulation; the polar frame is then never needed, so the
    origin is fine.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    npts = len(pts)
    r = np.hypot(pts[:, 0], pts[:, 1])

    A = np.zeros((npts, 2, 2), dtype=complex)
    A[:, 0, 0] = 1.0
    A[:, 1, 1] = 1.0
    b = np.zeros((npts, 2), dtype=complex)
    n = np.ones(npts, dtype=complex)

    inside = r <= profile.R_pml_minus
    if np.all(inside):
        return PMLCoefficients(A, b, n)

    out = ~inside
    ro = r[out]
    sc = scaling(profile, ro)
    alpha, beta = sc["alpha"], sc["beta"]
    cosphi = pts[out, 0] / ro
    sinphi = pts[out, 1] / ro

    if profile.formulation is Formulation.DivergenceForm:
        d1 = beta / alpha
        d2 = alpha / beta
        n[out] = alpha * beta
    else:
        d1 = alpha ** (-2)
        d2 = beta ** (-2)
        # b = H (alpha^-2 (log(alpha beta))', 0)^T
        fpp = _second_derivative(profile, ro)
        alpha_p = 1j * fpp
        beta_p = 1j * (sc["fp"] * ro - sc["f"]) / ro**2
        log_d = alpha_p / alpha + beta_p / beta
        radial = alpha ** (-2) * log_d
        b[out, 0] = radial * cosphi
        b[out, 1] = radial * sinphi

    # A = H diag(d1, d2) H^T with H = [[c, -s], [s, c]]
    A[out, 0, 0] = d1 * cosphi**2 + d2 * sinphi**2
    A[out, 1, 1] = d1 * sinphi**2 + d2 * cosphi**2
    off = (d1 - d2) * cosphi * sinphi
    A[out, 0, 1] = off
    A[out, 1, 0] = off
    return PMLCoefficients(A, b, n)


def garding_check(
    profile: PMLProfile,
    n_samples: int = 10_000,
    seed: int = 0,
    omega_grid: int = 64,
) -> dict:
    """Minimum over random (x, xi) of Re(e^{i omega} A xi . conj(xi)) / |xi|^2.

    DivergenceForm uses omega = 0; Unmultiplied scans omega over a grid in
    (-pi/2, pi/2) and reports the best rotation.
    """
    rng = np.random.default_rng(seed)
    radii = rng.uniform(1e-3, profile.R_tr * (1 - 1e-9), n_samples)
    angles = rng.uniform(0.0, 2.0 * np.pi, n_samples)
    pts = np.column_stack([radii * np.cos(angles), radii * np.sin(angles)])
    xi = rng.standard_normal((n_samples, 2)) + 1j * rng.standard_normal((n_samples, 2))

    coeff = coefficients(profile, pts)
    quad = np.einsum("nij,nj,ni->n", coeff.A, xi, np.conj(xi))
    norm2 = np.einsum("ni,ni->n", xi, np.conj(xi)).real
    ratios = quad / norm2

    if profile.formulation is Formulation.DivergenceForm:
        omega = 0.0
        minimum = float(np.min(np.real(ratios)))
    else:
        omegas = np.linspace(-np.pi / 2, np.pi / 2, omega_grid + 2)[1:-1]
        mins = np.array(
            [np.min(np.real(np.exp(1j * w) * ratios)) for w in omegas]
        )
        best = int(np.argmax(mins))
        omega = float(omegas[best])
        minimum = float(mins[best])
    return {"min": minimum, "omega": omega, "n_samples": n_samples}
