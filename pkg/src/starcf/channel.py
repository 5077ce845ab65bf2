"""Passive beamforming, phase-error statistics, and channel sampling.

The cascaded link from AP m to user k is

    f_mk = d_mk + Q_m Phi_k PhiErr_k g_k

with Q_m the AP-surface channel, Phi_k the side-selected surface
configuration, PhiErr_k the per-element phase-error rotation, and g_k the
Rician surface-user channel. All functions here are pure; samplers take an
explicit RNG.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from ._linalg import chol_sqrt, crandn, hermitize
from .correlation import element_positions, steering_vector

# concentrations past this behave as error-free within float precision
_VONMISES_CLAMP = 1e8


class SideMismatch(Exception):
    """Raised when a user's surface side tag is missing or invalid."""


@dataclass
class PassiveBeamforming:
    beta_T: np.ndarray   # (N,) transmission amplitude split
    beta_R: np.ndarray   # (N,) reflection amplitude split
    theta_T: np.ndarray  # (N,) transmission phases (rad)
    theta_R: np.ndarray  # (N,) reflection phases (rad)

    def validate(self):
        if not np.allclose(self.beta_T + self.beta_R, 1.0, atol=1e-9):
            raise ValueError("amplitude splits must sum to one per element")
        if np.any(self.beta_T < -1e-12) or np.any(self.beta_T > 1.0 + 1e-12):
            raise ValueError("amplitude splits must lie in [0,1]")
        for theta in (self.theta_T, self.theta_R):
            if np.any(theta < 0.0) or np.any(theta >= 2.0 * np.pi):
                raise ValueError("phases must lie in [0, 2*pi)")
        return self

    def phase_vector(self, side):
        """Per-element coefficient sqrt(beta) * exp(j*theta) for one side."""
        if side == "T":
            return np.sqrt(np.clip(self.beta_T, 0.0, 1.0)) * np.exp(1j * self.theta_T)
        if side == "R":
            return np.sqrt(np.clip(self.beta_R, 0.0, 1.0)) * np.exp(1j * self.theta_R)
        raise SideMismatch(f"unknown surface side {side!r}")


def equal_split_pbf(N, mode="star"):
    """Deterministic baseline: zero phases, amplitudes split per mode."""
    if mode == "reflect-only-pair":
        beta_T = np.zeros(N)
    else:
        beta_T = np.full(N, 0.5)
    return PassiveBeamforming(
        beta_T=beta_T,
        beta_R=1.0 - beta_T,
        theta_T=np.zeros(N),
        theta_R=np.zeros(N),
    ).validate()


def random_pbf(N, rng, mode="star"):
    """Random baseline: uniform phases and uniform amplitude splits."""
    pbf = equal_split_pbf(N, mode)
    if mode != "reflect-only-pair":
        pbf.beta_T = rng.uniform(0.0, 1.0, size=N)
        pbf.beta_R = 1.0 - pbf.beta_T
        pbf.theta_T = rng.uniform(0.0, 2.0 * np.pi, size=N)
    pbf.theta_R = rng.uniform(0.0, 2.0 * np.pi, size=N)
    return pbf.validate()


def phase_error_cf(vartheta):
    """Characteristic function of a Von Mises phase error at first harmonic.

    Equals I_1(vartheta)/I_0(vartheta); the exponentially scaled Bessel
    ratio avoids overflow at large concentration.
    """
    if vartheta < 0.0:
        raise ValueError("vartheta must be nonnegative")
    if vartheta == 0.0:
        return 0.0
    return float(special.i1e(vartheta) / special.i0e(vartheta))


def sample_phase_errors(vartheta, size, rng):
    """I.i.d. Von Mises(0, vartheta) angles, clamped to zero at huge kappa."""
    if vartheta >= _VONMISES_CLAMP or math.isinf(vartheta):
        return np.zeros(size)
    return rng.vonmises(0.0, vartheta, size=size)


def effective_ris_matrices(R_S, G_k, varsigma):
    """Phase-error-averaged surface matrices.

    Off-diagonal entries shrink by the squared characteristic function while
    diagonals are untouched; applies to both the LoS outer product and the
    surface correlation.
    """
    s2 = varsigma**2
    G_eff = s2 * G_k + (1.0 - s2) * np.diag(np.diag(G_k))
    R_eff = s2 * R_S + (1.0 - s2) * np.diag(np.diag(R_S))
    return G_eff, R_eff


def los_steering(ue_direction, N, d_H, d_V, wavelength):
    """Unit-modulus array response of the square surface toward a direction."""
    pos = element_positions(N, d_H, d_V)
    return steering_vector(pos, ue_direction, wavelength)


def los_outer(corr, k):
    """Rank-one LoS matrix g_bar g_bar^H for user k."""
    g = corr.g_bar[k]
    return np.outer(g, g.conj())


def _surface_trace(R_S, v, inner):
    """tr(R_S diag(v) inner diag(v)^H) computed without forming diagonals."""
    sandwiched = inner * np.outer(v, v.conj())
    return np.trace(R_S @ sandwiched)


def cascaded_trace(corr, pbf, ls, varsigma, k):
    """Scalar surface contribution tr(R_bar + R_tilde) for user k, without
    the AP-side gain xi_m (shared across APs)."""
    side = corr.ue_sides[k] if k < len(corr.ue_sides) else None
    if side not in ("T", "R"):
        raise SideMismatch(f"user {k} has unresolved side {side!r}")
    v = pbf.phase_vector(side)
    G_eff, R_eff = effective_ris_matrices(corr.R_S, los_outer(corr, k), varsigma)
    iota = ls.iota[k]
    scale = ls.alpha[k] / (iota + 1.0)
    total = scale * (
        iota * _surface_trace(corr.R_S, v, G_eff)
        + _surface_trace(corr.R_S, v, R_eff)
    )
    return float(total.real)


def cascaded_covariance(corr, pbf, ls, varsigma, k, m):
    """Covariance of the cascaded channel f_mk (direct plus surface path)."""
    tr_term = ls.xi[m] * cascaded_trace(corr, pbf, ls, varsigma, k)
    return hermitize(corr.R_d[m, k] + tr_term * corr.R_A[m])


def covariance_tensor(corr, pbf, ls, varsigma):
    """All M*K cascaded covariances as an (M, K, L, L) array."""
    M, K = corr.R_d.shape[:2]
    traces = np.array([cascaded_trace(corr, pbf, ls, varsigma, k)
                       for k in range(K)])
    return hermitize(
        corr.R_d + ls.xi[:, None, None, None]
        * traces[None, :, None, None] * corr.R_A[:, None, :, :]
    )


@dataclass
class ChannelRealization:
    f: np.ndarray          # (M, K, L) cascaded channels
    d: np.ndarray          # (M, K, L) direct parts
    Q: np.ndarray          # (M, L, N) AP-surface channels
    g: np.ndarray          # (K, N) surface-user channels
    phase_err: np.ndarray  # (K, N) phase-error draws (rad)


def sample_channel(corr, pbf, ls, vartheta, rng):
    """One i.i.d. realization of every channel in the scene."""
    M, K, L = corr.R_d.shape[:3]
    N = corr.R_S.shape[0]
    R_S_half = chol_sqrt(corr.R_S)
    d = np.zeros((M, K, L), dtype=complex)
    for m in range(M):
        for k in range(K):
            d[m, k] = chol_sqrt(corr.R_d[m, k]) @ crandn(rng, L)
    Q = np.zeros((M, L, N), dtype=complex)
    for m in range(M):
        V = crandn(rng, L, N)
        Q[m] = np.sqrt(ls.xi[m]) * chol_sqrt(corr.R_A[m]) @ V @ R_S_half.conj().T
    g = np.zeros((K, N), dtype=complex)
    for k in range(K):
        varpi = ls.iota[k] + 1.0
        nlos = R_S_half @ crandn(rng, N)
        g[k] = np.sqrt(ls.alpha[k] / varpi) * (
            np.sqrt(ls.iota[k]) * corr.g_bar[k] + nlos
        )
    phase_err = sample_phase_errors(vartheta, (K, N), rng)
    f = np.zeros((M, K, L), dtype=complex)
    for k in range(K):
        side = corr.ue_sides[k] if k < len(corr.ue_sides) else None
        if side not in ("T", "R"):
            raise SideMismatch(f"user {k} has unresolved side {side!r}")
        v = pbf.phase_vector(side) * np.exp(1j * phase_err[k])
        ray = v * g[k]
        for m in range(M):
            f[m, k] = d[m, k] + Q[m] @ ray
    return ChannelRealization(f=f, d=d, Q=Q, g=g, phase_err=phase_err)
