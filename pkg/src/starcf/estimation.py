"""Pilot assignment, pilot reception, and LMMSE channel statistics.

After correlating the received pilot block with user k's pilot, each AP
holds

    y_mk = sqrt(gamma_T gamma_R p tau_p) sum_{i in P_k} h_mi
           + UE transmit distortion + AP receive distortion + noise

with h_mi the effective (oscillator-rotated) cascaded channel at the pilot
slot; the LMMSE estimate is sqrt(gamma_T gamma_R p tau_p) R Psi^{-1} y_mk.
"""

from dataclasses import dataclass

import numpy as np

from ._linalg import chol_sqrt, crandn, hermitize


class SingularPsi(Exception):
    """Raised when a pilot-observation covariance cannot be inverted."""


class SingularR(Exception):
    """Raised when a channel covariance needed in inverse form is singular."""


@dataclass
class PilotAssignment:
    pilot_of: np.ndarray  # (K,) pilot index per user
    cosets: tuple         # per user, tuple of users sharing its pilot

    @property
    def groups(self):
        """Users per pilot index."""
        tau_p = int(self.pilot_of.max()) + 1
        return tuple(
            tuple(np.flatnonzero(self.pilot_of == u)) for u in range(tau_p)
        )


def assign_pilots(K, tau_p):
    """Round-robin pilot reuse: user k sends pilot k mod tau_p."""
    if tau_p < 1:
        raise ValueError("tau_p must be at least 1")
    pilot_of = np.arange(K) % tau_p
    cosets = tuple(
        tuple(np.flatnonzero(pilot_of == pilot_of[k])) for k in range(K)
    )
    return PilotAssignment(pilot_of=pilot_of, cosets=cosets)


def pilot_matrix(tau_p):
    """Unit-modulus orthogonal pilot book (DFT columns), inner product tau_p."""
    n = np.arange(tau_p)
    return np.exp(-2j * np.pi * np.outer(n, n) / tau_p)


@dataclass
class ChannelStatistics:
    R: np.ndarray      # (M, K, L, L) cascaded covariances
    Psi: np.ndarray    # (M, K, L, L) pilot-observation covariances
    Omega: np.ndarray  # (M, K, L, L) estimate covariances
    C: np.ndarray      # (M, K, L, L) estimation-error covariances


def psi_matrix(R, assignment, m, k, config):
    """Covariance of the pilot observation y_mk."""
    L = R.shape[-1]
    gamma2 = config.gamma_T * config.gamma_R
    coherent = np.zeros((L, L), dtype=complex)
    for i in assignment.cosets[k]:
        coherent = coherent + R[m, i]
    all_sum = R[m].sum(axis=0)
    psi = (
        gamma2 * config.p * config.tau_p * coherent
        + (1.0 - config.gamma_R) * config.gamma_T * config.p * all_sum
        + (1.0 - config.gamma_T) * config.p
        * np.diag(np.einsum("kll->l", R[m]).real)
        + config.sigma2 * np.eye(L)
    )
    return hermitize(psi)


def lmmse_statistics(R, assignment, config):
    """Estimate and error covariances for every AP-user pair."""
    M, K, L = R.shape[:3]
    gamma2 = config.gamma_T * config.gamma_R
    scale = gamma2 * config.p * config.tau_p
    Psi = np.zeros_like(R)
    Omega = np.zeros_like(R)
    for m in range(M):
        for k in range(K):
            Psi[m, k] = psi_matrix(R, assignment, m, k, config)
            try:
                solved = np.linalg.solve(Psi[m, k], R[m, k])
            except np.linalg.LinAlgError as exc:
                raise SingularPsi(f"pilot covariance singular at ({m},{k})") from exc
            Omega[m, k] = hermitize(scale * R[m, k] @ solved)
    C = hermitize(R - Omega)
    return ChannelStatistics(R=R.copy(), Psi=Psi, Omega=Omega, C=C)


def pilot_residual_covariance(R, config):
    """Despread distortion-plus-noise covariance per AP, (M, L, L).

    Everything in y_mk beyond the coherent pilot term: UE transmit
    distortion leaked from every user, AP receive distortion, and thermal
    noise. Each enters at its ensemble level, which is the statistical
    model the estimator's second moments and the downlink power groups are
    derived under; the observation covariance then equals Psi exactly.
    """
    M, K, L = R.shape[:3]
    theta = np.zeros((M, L, L), dtype=complex)
    for m in range(M):
        total = R[m].sum(axis=0)
        theta[m] = (1.0 - config.gamma_R) * config.gamma_T * config.p * total
        theta[m] += (1.0 - config.gamma_T) * config.p * np.diag(
            np.diag(total).real
        )
        theta[m] += config.sigma2 * np.eye(L)
    return theta


def receive_pilots(realization, assignment, config, rng, *, stats):
    """Despread pilot observations y_mk for one channel realization.

    Phase noise is frozen over the short pilot phase, so the effective
    channels carry the slot-0 oscillator phases supplied by the caller via
    ``realization.f`` (the engine rotates them in before calling). Users
    sharing a pilot see the same observation. Returns an (M, K, L) array.
    """
    f = realization.f
    M, K, L = f.shape
    theta = pilot_residual_covariance(stats.R, config)
    coherent = np.sqrt(
        config.gamma_T * config.gamma_R * config.p * config.tau_p
    )
    y = np.zeros((M, K, L), dtype=complex)
    for m in range(M):
        half = chol_sqrt(theta[m])
        for u in range(config.tau_p):
            members = np.flatnonzero(assignment.pilot_of == u)
            if members.size == 0:
                continue
            obs = (
                coherent * f[m, members].sum(axis=0) + half @ crandn(rng, L)
            )
            y[m, members] = obs
    return y


def estimate_channel(observation, stats, config, m, k):
    """LMMSE estimate of the slot-0 effective channel from y_mk."""
    scale = np.sqrt(config.gamma_T * config.gamma_R * config.p * config.tau_p)
    try:
        solved = np.linalg.solve(stats.Psi[m, k], observation)
    except np.linalg.LinAlgError as exc:
        raise SingularPsi(f"pilot covariance singular at ({m},{k})") from exc
    return scale * stats.R[m, k] @ solved
