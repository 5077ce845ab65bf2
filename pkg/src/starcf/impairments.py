"""Oscillator phase-noise trajectories and hardware-distortion draws."""

from dataclasses import dataclass

import numpy as np

from ._linalg import crandn


def phase_noise_variance(f_c, c_i, T_s):
    """Per-symbol Wiener increment variance of a free-running oscillator."""
    return 4.0 * np.pi**2 * f_c**2 * c_i * T_s


@dataclass
class PhaseNoisePath:
    phi: np.ndarray   # (M, tau_c) AP oscillator phases (rad)
    psi: np.ndarray   # (K, tau_c) UE oscillator phases (rad)
    var_phi: float    # AP increment variance (rad^2)
    var_psi: float    # UE increment variance (rad^2)

    def combined(self, m, k):
        """phi_m(t) + psi_k(t) over the whole block."""
        return self.phi[m] + self.psi[k]


def _wiener_paths(n_paths, n_steps, var, rng):
    paths = np.zeros((n_paths, n_steps))
    if n_steps > 1 and var > 0.0:
        inc = rng.normal(0.0, np.sqrt(var), size=(n_paths, n_steps - 1))
        paths[:, 1:] = np.cumsum(inc, axis=1)
    return paths


def sample_phase_noise(config, rng):
    """Independent Wiener phase trajectories for every AP and user."""
    var_phi = phase_noise_variance(config.f_c, config.c_phi, config.T_s)
    var_psi = phase_noise_variance(config.f_c, config.c_psi, config.T_s)
    phi = _wiener_paths(config.M, config.tau_c, var_phi, rng)
    psi = _wiener_paths(config.K, config.tau_c, var_psi, rng)
    return PhaseNoisePath(phi=phi, psi=psi, var_phi=var_phi, var_psi=var_psi)


def phase_exp_moment(delta2, t):
    """E{exp(j[phase(t1) - phase(t2)])} for a Wiener phase with combined
    increment variance delta2 and lag t = |t1 - t2|."""
    return np.exp(-0.5 * delta2 * np.asarray(t, dtype=float))


def sample_ue_tx_distortion(p, gamma_R, tau_p, rng):
    """Pilot-slot transmit distortion of one user: i.i.d. CN(0,(1-gamma_R)p)."""
    return np.sqrt((1.0 - gamma_R) * p) * crandn(rng, tau_p)


def sample_ap_rx_distortion(f_m, p, gamma_T, rng):
    """Receive distortion at one AP conditioned on the channels.

    ``f_m`` stacks the AP's channels to every user as rows (K, L); the draw
    is CN(0, (1-gamma_T) p sum_i diag(|f_mi|^2)).
    """
    f_m = np.atleast_2d(f_m)
    var = (1.0 - gamma_T) * p * np.sum(np.abs(f_m) ** 2, axis=0)
    return np.sqrt(var) * crandn(rng, f_m.shape[1])


def sample_ap_tx_distortion(power_alloc, Omega_m, gamma_T, rho, rng):
    """Downlink transmit distortion at one AP given estimate covariances.

    ``power_alloc`` holds the AP's per-user coefficients eta_mk and
    ``Omega_m`` the matching (K, L, L) estimate covariances.
    """
    diag = np.einsum("k,kll->l", np.asarray(power_alloc, dtype=float),
                     np.asarray(Omega_m)).real
    var = (1.0 - gamma_T) * rho * diag
    return np.sqrt(np.clip(var, 0.0, None)) * crandn(rng, diag.shape[0])


def sample_ue_rx_distortion(received_power_conditional, gamma_R, rng):
    """Receiver distortion scalar with conditional variance (1-gamma_R)*nu."""
    nu = float(received_power_conditional)
    if nu < 0.0:
        raise ValueError("conditional received power must be nonnegative")
    return np.sqrt((1.0 - gamma_R) * nu) * crandn(rng)
