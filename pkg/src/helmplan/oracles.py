"""Closed-form reference solutions used to validate the discretizations.

* Plane waves: exact homogeneous Helmholtz solutions for manufactured
  convergence studies.
* Sound-soft circular scattering: the classical cylindrical-harmonics series
  for a plane wave hitting a Dirichlet disk, truncated well past ka where the
  coefficients decay super-exponentially.
"""

from __future__ import annotations

import numpy as np
from scipy.special import hankel1, jv


def plane_wave(k: float, direction=(1.0, 0.0)):
    """u(x) = exp(i k d . x) with |d| = 1; returns (u, grad_u) callables."""
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)

    def u(pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return np.exp(1j * k * (pts @ d))

    def grad_u(pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        phase = np.exp(1j * k * (pts @ d))
        return 1j * k * phase[:, None] * d[None, :]

    return u, grad_u


def _series_orders(k: float, a: float) -> int:
    """Truncation order: coefficients J_n(ka)/H_n(ka) decay like
    (e ka / 2n)^{2n} past n ~ ka, so 4*ka (with a small floor) is far into
    the super-exponential regime."""
    return max(int(np.ceil(4.0 * k * a)), 20)


def disk_scattering_coefficients(k: float, a: float = 1.0) -> np.ndarray:
    """c_n = -i^n J_n(ka) / H^(1)_n(ka) for n = 0..N."""
    N = _series_orders(k, a)
    n = np.arange(N + 1)
    return -(1j**n) * jv(n, k * a) / hankel1(n, k * a)


def disk_scattered_field(pts, k: float, a: float = 1.0) -> np.ndarray:
    """Scattered field of the unit-amplitude plane wave exp(ikx) hitting a
    sound-soft disk of radius a centered at the origin.

        u_s(r, theta) = sum_n c_n eps_n H^(1)_n(kr) cos(n theta)

    with eps_0 = 1, eps_n = 2 (the +-n terms pair up for incidence along x).
    Valid for r >= a.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    r = np.hypot(pts[:, 0], pts[:, 1])
    if np.any(r < a * (1 - 1e-12)):
        raise ValueError("scattered-field series is only valid outside the disk")
    theta = np.arctan2(pts[:, 1], pts[:, 0])
    c = disk_scattering_coefficients(k, a)
    n = np.arange(len(c))
    H = hankel1(n[None, :], k * r[:, None])        # (npts, N+1)
    eps = np.where(n == 0, 1.0, 2.0)
    ang = np.cos(n[None, :] * theta[:, None])
    return (H * (c * eps)[None, :] * ang).sum(axis=1)


def disk_total_field(pts, k: float, a: float = 1.0) -> np.ndarray:
    """Total field u = u_inc + u_s; vanishes on r = a (sound-soft)."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    u_inc = np.exp(1j * k * pts[:, 0])
    return u_inc + disk_scattered_field(pts, k, a)
