"""Spatial correlation models for the surface and the AP arrays."""

import math
from dataclasses import dataclass

import numpy as np

from ._linalg import hermitize


class NonSquareN(Exception):
    """Raised when the element count cannot form a square planar array."""


def element_positions(N, d_H, d_V):
    """Positions of the square-array elements, row-major on the y-z plane.

    Element l sits at (0, mod(l, N_H)*d_H, floor(l / N_H)*d_V).
    """
    root = math.isqrt(N)
    if root * root != N:
        raise NonSquareN(f"{N} elements do not form a square grid")
    idx = np.arange(N)
    pos = np.zeros((N, 3))
    pos[:, 1] = (idx % root) * d_H
    pos[:, 2] = (idx // root) * d_V
    return pos


def _sinc_correlation(positions, d_H, d_V, wavelength):
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.linalg.norm(diff, axis=2)
    # np.sinc is the normalized sinc sin(pi x)/(pi x)
    return d_H * d_V * np.sinc(2.0 * dist / wavelength)


def ris_correlation(N, d_H, d_V, wavelength):
    """Isotropic-scattering correlation of the square surface array."""
    pos = element_positions(N, d_H, d_V)
    return _sinc_correlation(pos, d_H, d_V, wavelength)


def ris_correlation_pair(N, d_H, d_V, wavelength):
    """Correlation for two adjacent half-width reflect-only surfaces.

    The element grid is the same square lattice split into left and right
    halves; the two physical surfaces scatter independently, so the cross
    blocks are zero.
    """
    pos = element_positions(N, d_H, d_V)
    root = math.isqrt(N)
    if root % 2 != 0:
        raise NonSquareN(f"grid side {root} cannot be split into two surfaces")
    col = np.arange(N) % root
    left = col < root // 2
    full = _sinc_correlation(pos, d_H, d_V, wavelength)
    mask = left[:, None] == left[None, :]
    return full * mask


def steering_vector(positions, direction, wavelength):
    """Array response of elements at ``positions`` toward a unit direction."""
    r = np.asarray(direction, dtype=float)
    r = r / np.linalg.norm(r)
    return np.exp(1j * (2.0 * np.pi / wavelength) * (positions @ r))


def ap_correlation(L, nominal_angle, angular_std):
    """Gaussian local-scattering correlation of a half-wavelength ULA.

    ``nominal_angle`` and ``angular_std`` are in radians.
    """
    delta = np.arange(L)[:, None] - np.arange(L)[None, :]
    phase = np.exp(1j * 2.0 * np.pi * 0.5 * delta * np.sin(nominal_angle))
    spread = np.exp(
        -0.5 * (2.0 * np.pi * 0.5 * delta * np.cos(nominal_angle) * angular_std) ** 2
    )
    return hermitize(phase * spread)


@dataclass
class CorrelationSet:
    R_d: np.ndarray     # (M, K, L, L) direct-link correlations
    R_A: np.ndarray     # (M, L, L) AP array correlations toward the surface
    R_S: np.ndarray     # (N, N) surface correlation
    g_bar: np.ndarray   # (K, N) LoS surface responses toward each user
    ue_sides: tuple     # per-user side tag, "R" or "T"


def _bearing(src, dst):
    """Azimuth of dst seen from src, radians in the ground plane."""
    d = dst[:2] - src[:2]
    return math.atan2(d[1], d[0])


def build_correlation_set(config, geometry, ls):
    """All deterministic second-order statistics of the scene.

    Direct-link matrices are scaled to trace L*beta_d; the AP-side cascade
    correlation is unit-trace-per-antenna (the large-scale factor enters the
    cascaded covariance separately).
    """
    std = math.radians(config.angular_std_deg)
    M, K, L = config.M, config.K, config.L
    R_d = np.zeros((M, K, L, L), dtype=complex)
    R_A = np.zeros((M, L, L), dtype=complex)
    for m in range(M):
        ang_ris = _bearing(geometry.ap_positions[m], geometry.ris_position)
        R_A[m] = ap_correlation(L, ang_ris, std)
        for k in range(K):
            ang = _bearing(geometry.ap_positions[m], geometry.ue_positions[k])
            R_d[m, k] = ls.beta_d[m, k] * ap_correlation(L, ang, std)
    if config.mode == "reflect-only-pair":
        R_S = ris_correlation_pair(config.N, config.d_H, config.d_V,
                                   config.wavelength)
    else:
        R_S = ris_correlation(config.N, config.d_H, config.d_V,
                              config.wavelength)
    pos = element_positions(config.N, config.d_H, config.d_V)
    g_bar = np.zeros((K, config.N), dtype=complex)
    for k in range(K):
        direction = geometry.ue_positions[k] - geometry.ris_position
        g_bar[k] = steering_vector(pos, direction, config.wavelength)
    return CorrelationSet(R_d=R_d, R_A=R_A, R_S=R_S, g_bar=g_bar,
                          ue_sides=tuple(geometry.ue_sides))
