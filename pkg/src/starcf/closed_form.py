"""Closed-form downlink SINR and ergodic SE under hardware impairments.

Evaluates the deterministic-equivalent SINR of maximum-ratio precoding from
channel statistics alone, split into the named power groups (desired signal,
beamforming uncertainty, coherent and non-coherent interference, AP and UE
distortion) so simulation cross-checks can compare term by term.
"""

from dataclasses import dataclass, field

import numpy as np

from .impairments import phase_noise_variance


class SingularR(Exception):
    """Raised when a covariance stays singular even after regularization."""


@dataclass
class PowerControl:
    eta: np.ndarray  # (M, K) nonnegative power-control coefficients

    def validate(self, tr_Omega, tol=1e-9):
        """Check nonnegativity and the per-AP power budget
        sum_k eta_mk tr(Omega_mk) <= 1."""
        if np.any(self.eta < -tol):
            raise ValueError("power coefficients must be nonnegative")
        budget = np.sum(self.eta * tr_Omega, axis=1)
        if np.any(budget > 1.0 + tol):
            raise ValueError(
                f"per-AP power budget exceeded: max {budget.max():.6g}"
            )
        return self


def epc_power(tr_Omega):
    """Equal power control: each AP splits its budget uniformly."""
    totals = tr_Omega.sum(axis=1)
    eta = np.ones_like(tr_Omega) / totals[:, None]
    return PowerControl(eta=eta)


def downlink_power(config):
    """Downlink power normalized to the unit-variance receiver noise."""
    return config.rho / config.sigma2


def phase_noise_rates(config):
    """(AP increment variance, UE increment variance, their sum)."""
    var_phi = phase_noise_variance(config.f_c, config.c_phi, config.T_s)
    var_psi = phase_noise_variance(config.f_c, config.c_psi, config.T_s)
    return var_phi, var_psi, var_phi + var_psi


@dataclass
class TermMatrices:
    """Statistic aggregates entering the SINR denominator.

    Arrays indexed [m, i, k] pair the estimate of user i with the channel
    of user k at AP m; entries outside user k's pilot coset are zero where
    the quantity only exists under pilot sharing.
    """

    tr_Omega: np.ndarray      # (M, K) real traces of estimate covariances
    a: np.ndarray             # (M, K) squared traces |tr(Omega_mk)|^2
    c: np.ndarray             # (M, K, K) coherent cross-gains, complex
    b: np.ndarray             # (M, K, K) squared moduli of c
    tr_R_Omega: np.ndarray    # (M, K, K) tr(R_mk Omega_mi)
    tr_diag: np.ndarray       # (M, K, K) tr(diag Omega_mi diag R_mk)
    tr_diag_sq: np.ndarray    # (M, K) tr(diag(Omega_mk)^2)
    xi: np.ndarray            # (M, K, K, L, L) ratio matrices R_mi R_mk^-1
    xi_regularized: bool = field(default=False)


def coset_mask(assignment, K):
    """Boolean (K, K) mask with [i, k] set when users i and k share a pilot."""
    mask = np.zeros((K, K), dtype=bool)
    for k in range(K):
        mask[list(assignment.cosets[k]), k] = True
    return mask


def term_matrices(stats, assignment, config, with_xi=True):
    """Precompute every statistic aggregate used by the closed form.

    ``with_xi=False`` skips the covariance-ratio matrices, which need one
    matrix inverse per AP-user pair and are only consumed by the grouped
    denominator path; the optimizer evaluates thousands of candidate
    configurations and takes the cheaper branch.
    """
    M, K, L = stats.R.shape[:3]
    scale = config.gamma_T * config.gamma_R * config.p * config.tau_p
    tr_Omega = np.einsum("mkll->mk", stats.Omega).real
    a = tr_Omega**2
    diag_Omega = np.einsum("mkll->mkl", stats.Omega).real
    diag_R = np.einsum("mkll->mkl", stats.R).real
    tr_R_Omega = np.einsum("mkab,miba->mik", stats.R, stats.Omega).real
    tr_diag = np.einsum("mil,mkl->mik", diag_Omega, diag_R)
    tr_diag_sq = np.einsum("mkl,mkl->mk", diag_Omega, diag_Omega)
    mask = coset_mask(assignment, K)
    solved = np.linalg.solve(stats.Psi, stats.R)
    c = scale * np.einsum("miab,mkba->mik", stats.R, solved)
    c = np.where(mask[None, :, :], c, 0.0)
    b = np.abs(c) ** 2
    xi = np.zeros((M, K, K, L, L), dtype=complex)
    regularized = False
    if with_xi:
        for m in range(M):
            for k in range(K):
                r_inv, flagged = _robust_inverse(stats.R[m, k])
                regularized = regularized or flagged
                xi[m, :, k] = np.where(
                    mask[:, k, None, None], stats.R[m] @ r_inv, 0.0
                )
    return TermMatrices(
        tr_Omega=tr_Omega, a=a, c=c, b=b, tr_R_Omega=tr_R_Omega,
        tr_diag=tr_diag, tr_diag_sq=tr_diag_sq, xi=xi,
        xi_regularized=regularized,
    )


def _robust_inverse(r):
    try:
        return np.linalg.inv(r), False
    except np.linalg.LinAlgError:
        pass
    bump = 1e-12 * np.trace(r).real
    if bump <= 0.0:
        bump = 1e-12
    try:
        return np.linalg.inv(r + bump * np.eye(r.shape[0])), True
    except np.linalg.LinAlgError as exc:
        raise SingularR("covariance singular beyond regularization") from exc


@dataclass
class SinrBreakdown:
    ds: float              # desired signal power
    bu: float              # beamforming-uncertainty power
    ui_coherent: float     # pilot-sharing interference power
    ui_noncoherent: float  # other-user interference power
    hwi_ap: float          # AP distortion power
    hwi_ue: float          # UE distortion power
    noise: float = 1.0

    @property
    def denominator(self):
        return (self.bu + self.ui_coherent + self.ui_noncoherent
                + self.hwi_ap + self.hwi_ue + self.noise)

    @property
    def sinr(self):
        return self.ds / self.denominator


def sinr_closed_form(t, power, stats, assignment, config, tm=None):
    """Per-user SINR breakdown at channel use ``t``."""
    if tm is None:
        tm = term_matrices(stats, assignment, config)
    var_phi, var_psi, delta2 = phase_noise_rates(config)
    rho = downlink_power(config)
    g2 = config.gamma_T * config.gamma_R
    g_bar = (1.0 - config.gamma_R) * config.gamma_T
    g_tilde = (1.0 - config.gamma_R) * (1.0 - config.gamma_T)
    e_phi = float(np.exp(-var_phi * t))
    e_psi = float(np.exp(-var_psi * t))
    eta = power.eta
    root_eta = np.sqrt(eta)
    K = eta.shape[1]
    out = []
    for k in range(K):
        coset = set(assignment.cosets[k])
        sharers = sorted(coset - {k})
        s1 = abs(np.sum(root_eta[:, k] * tm.tr_Omega[:, k])) ** 2
        pa = float(np.sum(eta[:, k] * tm.a[:, k]))
        ro_self = float(np.sum(eta[:, k] * tm.tr_R_Omega[:, k, k]))
        ds = g2 * rho * np.exp(-delta2 * t) * s1
        bu = g2 * rho * (
            e_phi * (1.0 - e_psi) * s1 + (1.0 - e_phi) * pa + ro_self
        )
        ui_coh = 0.0
        b_share = 0.0
        for i in sharers:
            ro = float(np.sum(eta[:, i] * tm.tr_R_Omega[:, i, k]))
            cc = abs(np.sum(root_eta[:, i] * tm.c[:, i, k])) ** 2
            bb = float(np.sum(eta[:, i] * tm.b[:, i, k]))
            ui_coh += g2 * rho * (
                ro + e_phi * cc + (1.0 - e_phi) * bb
            )
            b_share += bb
        ui_non = g2 * rho * float(
            sum(
                np.sum(eta[:, i] * tm.tr_R_Omega[:, i, k])
                for i in range(K) if i not in coset
            )
        )
        dd_all = float(np.sum(eta * tm.tr_diag[:, :, k]))
        hwi_ap = config.gamma_R * (1.0 - config.gamma_T) * rho * dd_all
        ro_all = float(np.sum(eta * tm.tr_R_Omega[:, :, k]))
        dsq = float(np.sum(eta[:, k] * tm.tr_diag_sq[:, k]))
        hwi_ue = (
            g_bar * rho * (ro_all + pa + b_share)
            + g_tilde * rho * (dd_all + dsq)
        )
        out.append(SinrBreakdown(
            ds=float(ds), bu=float(bu), ui_coherent=float(ui_coh),
            ui_noncoherent=float(ui_non), hwi_ap=float(hwi_ap),
            hwi_ue=float(hwi_ue),
        ))
    return out


def dk_grouped(t, power, stats, assignment, config, tm=None):
    """Denominator evaluated in its final grouped arrangement.

    Algebraically identical to summing the breakdown fields plus noise;
    kept as an independent evaluation path for consistency testing. The
    coherent interference gain is computed through the covariance-ratio
    matrices rather than the pilot-solve shortcut.
    """
    if tm is None:
        tm = term_matrices(stats, assignment, config)
    var_phi, var_psi, _ = phase_noise_rates(config)
    rho = downlink_power(config)
    g2 = config.gamma_T * config.gamma_R
    g_tilde = (1.0 - config.gamma_R) * (1.0 - config.gamma_T)
    e_phi = float(np.exp(-var_phi * t))
    e_psi = float(np.exp(-var_psi * t))
    eta = power.eta
    root_eta = np.sqrt(eta)
    K = eta.shape[1]
    dk = np.zeros(K)
    for k in range(K):
        coset = set(assignment.cosets[k])
        sharers = sorted(coset - {k})
        s1 = abs(np.sum(root_eta[:, k] * tm.tr_Omega[:, k])) ** 2
        pa = float(np.sum(eta[:, k] * tm.a[:, k]))
        total = g2 * rho * e_phi * (1.0 - e_psi) * s1
        total += config.gamma_T * rho * (1.0 - config.gamma_R * e_phi) * pa
        total += g_tilde * rho * float(
            np.sum(eta[:, k] * tm.tr_diag_sq[:, k])
        )
        for i in sharers:
            bb = float(np.sum(eta[:, i] * tm.b[:, i, k]))
            xi_tr = np.sum(
                root_eta[:, i]
                * np.einsum("mab,mba->m", tm.xi[:, i, k], stats.Omega[:, k])
            )
            total += config.gamma_T * rho * (1.0 - config.gamma_R * e_phi) * bb
            total += g2 * rho * e_phi * abs(xi_tr) ** 2
        for i in range(K):
            total += rho * config.gamma_T * float(
                np.sum(eta[:, i] * tm.tr_R_Omega[:, i, k])
            )
            total += rho * (1.0 - config.gamma_T) * float(
                np.sum(eta[:, i] * tm.tr_diag[:, i, k])
            )
        dk[k] = total + 1.0
    return dk


def ergodic_se(power, stats, assignment, config, tm=None):
    """Per-user ergodic downlink SE in bit/s/Hz."""
    if tm is None:
        tm = term_matrices(stats, assignment, config)
    ts = np.arange(config.tau_p, config.tau_c)
    se = np.zeros(stats.R.shape[1])
    for t in ts:
        for k, br in enumerate(
            sinr_closed_form(t, power, stats, assignment, config, tm=tm)
        ):
            se[k] += np.log2(1.0 + br.sinr)
    return se / config.tau_c


def remark_deltas(t, power, stats, assignment, config, tm=None):
    """Named phase-noise penalty terms at channel use t."""
    if tm is None:
        tm = term_matrices(stats, assignment, config)
    var_phi, var_psi, delta2 = phase_noise_rates(config)
    rho = downlink_power(config)
    g2 = config.gamma_T * config.gamma_R
    e_phi = float(np.exp(-var_phi * t))
    eta = power.eta
    root_eta = np.sqrt(eta)
    K = eta.shape[1]
    out = []
    for k in range(K):
        coset = set(assignment.cosets[k])
        sharers = sorted(coset - {k})
        s1 = abs(np.sum(root_eta[:, k] * tm.tr_Omega[:, k])) ** 2
        pa = float(np.sum(eta[:, k] * tm.a[:, k]))
        ds_loss = g2 * rho * (1.0 - np.exp(-delta2 * t)) * s1
        bu_increase = g2 * rho * (1.0 - e_phi) * (e_phi * s1 + pa)
        pc_interference = 0.0
        pc_mitigation = 0.0
        for i in sharers:
            bb = float(np.sum(eta[:, i] * tm.b[:, i, k]))
            cc = abs(np.sum(root_eta[:, i] * tm.c[:, i, k])) ** 2
            pc_interference += (
                config.gamma_T * rho * (1.0 - config.gamma_R * e_phi) * bb
                + g2 * rho * e_phi * cc
            )
            pc_mitigation += g2 * rho * (1.0 - e_phi) * (cc - bb)
        out.append({
            "ds_loss": float(ds_loss),
            "bu_increase": float(bu_increase),
            "pc_interference": float(pc_interference),
            "pc_mitigation": float(pc_mitigation),
        })
    return out
