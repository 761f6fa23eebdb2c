import numpy as np
import pytest

from helmplan.oracles import (
    disk_scattered_field,
    disk_scattering_coefficients,
    disk_total_field,
    plane_wave,
)


def test_plane_wave_unit_direction_normalized():
    u, gu = plane_wave(5.0, (3.0, 4.0))
    pts = np.array([[0.2, -0.1]])
    # gradient has magnitude k
    assert np.abs(gu(pts)).max() <= 5.0
    assert np.linalg.norm(gu(pts)[0]) == pytest.approx(5.0)


def test_plane_wave_solves_helmholtz():
    k = 7.0
    u, gu = plane_wave(k, (1.0, 2.0))
    x = np.array([0.3, 0.4])
    h = 1e-5
    stencil = np.array([x, x + [h, 0], x - [h, 0], x + [0, h], x - [0, h]])
    v = u(stencil)
    lap = (v[1] + v[2] + v[3] + v[4] - 4 * v[0]) / h**2
    assert abs(lap + k * k * v[0]) < 1e-4
    # gradient consistency
    fd = (u(np.array([x + [h, 0]]))[0] - u(np.array([x - [h, 0]]))[0]) / (2 * h)
    assert gu(np.array([x]))[0, 0] == pytest.approx(fd, rel=1e-6)


def test_total_field_vanishes_on_disk():
    k = 10.0
    th = np.linspace(0, 2 * np.pi, 361)
    pts = np.column_stack([np.cos(th), np.sin(th)])
    assert np.abs(disk_total_field(pts, k)).max() < 1e-10


def test_scattered_field_solves_helmholtz():
    k = 10.0
    rng = np.random.default_rng(0)
    for _ in range(3):
        x = rng.uniform(1.3, 2.0, 2)
        h = 1e-4
        stencil = np.array([x, x + [h, 0], x - [h, 0], x + [0, h], x - [0, h]])
        u = disk_scattered_field(stencil, k)
        lap = (u[1] + u[2] + u[3] + u[4] - 4 * u[0]) / h**2
        assert abs(lap + k * k * u[0]) / abs(u[0]) < 1e-4


def test_scattered_field_radiates():
    """|u_s| decays like r^{-1/2}."""
    k = 10.0
    u1 = disk_scattered_field(np.array([[50.0, 1.0]]), k)[0]
    u2 = disk_scattered_field(np.array([[200.0, 4.0]]), k)[0]
    assert abs(u1) / abs(u2) == pytest.approx(2.0, rel=0.05)


def test_series_truncation_is_converged():
    """Doubling the truncation order changes nothing at double precision."""
    from helmplan import oracles

    k = 10.0
    pts = np.array([[1.5, 0.2], [-1.1, 0.9]])
    base = disk_scattered_field(pts, k)
    orig = oracles._series_orders
    try:
        oracles._series_orders = lambda kk, aa: 2 * orig(kk, aa)
        refined = disk_scattered_field(pts, k)
    finally:
        oracles._series_orders = orig
    assert np.abs(base - refined).max() < 1e-13


def test_coefficients_decay():
    c = disk_scattering_coefficients(10.0)
    assert np.abs(c[-1]) < 1e-20
    assert np.abs(c[:5]).max() > 0.1


def test_inside_disk_rejected():
    with pytest.raises(ValueError):
        disk_scattered_field(np.array([[0.2, 0.2]]), 5.0)
