"""Trial-level simulation of the pilot and downlink chain.

Ground-truth engine: samples channels, phase errors, oscillator phases,
pilot reception, estimation, precoding, and downlink reception, then
estimates every SINR power group empirically so the statistics-only
evaluation can be cross-checked term by term. Also hosts sampling oracles
for the two matrix moment identities the analysis relies on.

Trials run in fixed-size blocks; block b draws from an independent
substream keyed by (seed, b), so results are bit-identical for any thread
count and re-run.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._linalg import chol_sqrt, crandn, hermitize
from .channel import SideMismatch, sample_phase_errors
from .closed_form import SinrBreakdown, downlink_power, phase_noise_rates
from .estimation import (
    estimate_channel, pilot_residual_covariance, receive_pilots,
)
from .channel import sample_channel

BLOCK_SIZE = 2048


@dataclass
class TrialComponents:
    """Received-signal decomposition of one realization at the slots ts.

    signal[k, i, t] multiplies user i's symbol in user k's receive chain;
    its k == i entry splits into the estimate-aligned part and the
    estimation-error part. The parts, distortions, and noise sum exactly
    to y.
    """

    ts: tuple
    signal: np.ndarray    # (K, K, T) complex symbol coefficients
    ds_part: np.ndarray   # (K, T) estimate-aligned share of signal[k, k]
    bu_part: np.ndarray   # (K, T) estimation-error share of signal[k, k]
    hwi: np.ndarray       # (K, T) received AP-distortion samples
    mu: np.ndarray        # (K, T) UE-distortion samples
    noise: np.ndarray     # (K, T) receiver noise samples
    symbols: np.ndarray   # (K, T) transmitted data symbols
    y: np.ndarray         # (K, T) total received samples


@dataclass
class TrialResult:
    """Empirical SINR group estimates with per-group standard errors."""

    ts: tuple
    trials: int
    cosets: tuple             # per-user pilot-sharing groups
    ds: np.ndarray            # (K, T) squared magnitude of the mean gain
    bu: np.ndarray            # (K, T) variance of the gain about its mean
    ui: np.ndarray            # (K, K, T) mean squared cross gains, 0 on k==i
    hwi_ap: np.ndarray        # (K,) AP-distortion power
    hwi_ue: np.ndarray        # (K,) UE-distortion power
    se_ds: np.ndarray         # (K, T)
    se_bu: np.ndarray         # (K, T)
    se_ui: np.ndarray         # (K, K, T)
    se_hwi_ap: np.ndarray     # (K,)
    se_hwi_ue: np.ndarray     # (K,)

    def _t_index(self, t):
        try:
            return self.ts.index(t)
        except ValueError:
            raise ValueError(f"slot {t} not among simulated slots {self.ts}")

    def to_dict(self):
        """JSON-ready dictionary of every estimate and standard error."""
        return {
            "ts": list(self.ts),
            "trials": self.trials,
            "cosets": [list(int(i) for i in c) for c in self.cosets],
            "ds": self.ds.tolist(),
            "bu": self.bu.tolist(),
            "ui": self.ui.tolist(),
            "hwi_ap": self.hwi_ap.tolist(),
            "hwi_ue": self.hwi_ue.tolist(),
            "se_ds": self.se_ds.tolist(),
            "se_bu": self.se_bu.tolist(),
            "se_ui": self.se_ui.tolist(),
            "se_hwi_ap": self.se_hwi_ap.tolist(),
            "se_hwi_ue": self.se_hwi_ue.tolist(),
        }

    def breakdown(self, t):
        """Per-user SinrBreakdown at simulated slot t."""
        j = self._t_index(t)
        K = self.ds.shape[0]
        out = []
        for k in range(K):
            coset = set(self.cosets[k])
            coh = sum(self.ui[k, i, j] for i in coset - {k})
            non = sum(self.ui[k, i, j] for i in range(K) if i not in coset)
            out.append(SinrBreakdown(
                ds=float(self.ds[k, j]), bu=float(self.bu[k, j]),
                ui_coherent=float(coh), ui_noncoherent=float(non),
                hwi_ap=float(self.hwi_ap[k]), hwi_ue=float(self.hwi_ue[k]),
            ))
        return out


class _Engine:
    """Precomputed constants shared by all simulation blocks."""

    def __init__(self, config, corr, ls, stats, assignment, pbf, power, ts):
        M, K, L = stats.R.shape[:3]
        N = corr.R_S.shape[0]
        self.config = config
        self.M, self.K, self.L, self.N = M, K, L, N
        self.ts = tuple(ts)
        self.pilot_of = np.asarray(assignment.pilot_of)
        self.cosets = tuple(tuple(c) for c in assignment.cosets)
        self.eta = power.eta
        self.root_eta = np.sqrt(power.eta)
        self.rho_eff = downlink_power(config)
        self.var_phi, self.var_psi, _ = phase_noise_rates(config)
        self.chol_Rd = np.zeros((M, K, L, L), dtype=complex)
        for m in range(M):
            for k in range(K):
                self.chol_Rd[m, k] = chol_sqrt(corr.R_d[m, k])
        self.S_half = chol_sqrt(corr.R_S)
        self.A_half = np.zeros((M, L, L), dtype=complex)
        for m in range(M):
            self.A_half[m] = np.sqrt(ls.xi[m]) * chol_sqrt(corr.R_A[m])
        self.g_bar = corr.g_bar
        self.g_scale = np.sqrt(ls.alpha / (ls.iota + 1.0))
        self.g_los = np.sqrt(ls.iota)
        sides = corr.ue_sides
        for k in range(K):
            if k >= len(sides) or sides[k] not in ("T", "R"):
                raise SideMismatch(f"user {k} has unresolved side")
        self.v = np.stack([pbf.phase_vector(sides[k]) for k in range(K)])
        self.vartheta = config.vartheta
        theta = pilot_residual_covariance(stats.R, config)
        self.chol_theta = np.stack([chol_sqrt(theta[m]) for m in range(M)])
        # estimator matrices sqrt(gT gR p tau_p) R Psi^-1
        amp = math.sqrt(
            config.gamma_T * config.gamma_R * config.p * config.tau_p
        )
        self.B_est = np.zeros((M, K, L, L), dtype=complex)
        for m in range(M):
            for k in range(K):
                self.B_est[m, k] = amp * np.linalg.solve(
                    stats.Psi[m, k].conj().T, stats.R[m, k].conj().T
                ).conj().T
        # per-AP transmit-distortion diagonal (already power-scaled)
        diag_Omega = np.einsum("mkll->mkl", stats.Omega).real
        self.D_diag = (
            (1.0 - config.gamma_T) * self.rho_eff
            * np.einsum("mk,mkl->ml", power.eta, np.maximum(diag_Omega, 0.0))
        )

    def _wiener(self, rng, count, var):
        """Cumulative phase drift at each requested slot, (count, T)."""
        T = len(self.ts)
        out = np.zeros((count, T))
        if var <= 0.0:
            return out
        prev = 0
        drift = np.zeros(count)
        for j, t in enumerate(self.ts):
            step = t - prev
            if step > 0:
                drift = drift + math.sqrt(var * step) * rng.standard_normal(
                    count
                )
            out[:, j] = drift
            prev = t
        return out

    def sample_block(self, b, rng):
        """Channels, pilots, and estimates for a block of b trials."""
        M, K, L, N = self.M, self.K, self.L, self.N
        d = np.einsum("mkij,bmkj->bmki", self.chol_Rd, crandn(rng, b, M, K, L))
        V = crandn(rng, b, M, L, N)
        Q = np.einsum("mij,bmjn->bmin", self.A_half, V) @ self.S_half.conj().T
        g = self.g_scale[:, None] * (
            self.g_los[:, None] * self.g_bar
            + crandn(rng, b, K, N) @ self.S_half.T
        )
        errs = sample_phase_errors(self.vartheta, (b, K, N), rng)
        if np.any(errs):
            ray = self.v[None, :, :] * np.exp(1j * errs) * g
        else:
            ray = self.v[None, :, :] * g
        f = d + np.einsum("bmln,bkn->bmkl", Q, ray)
        # free-running oscillator states at the pilot slot
        ap0 = rng.uniform(0.0, 2.0 * np.pi, size=(b, M))
        ue0 = rng.uniform(0.0, 2.0 * np.pi, size=(b, K))
        h0 = f * np.exp(1j * (ap0[:, :, None, None] + ue0[:, None, :, None]))
        y = self._pilot_observations(rng, h0)
        y_sel = y[:, :, self.pilot_of, :]
        hhat = np.einsum("mkij,bmkj->bmki", self.B_est, y_sel)
        return f, h0, hhat

    def _pilot_observations(self, rng, h0):
        """Per-pilot despread observations, (trials, M, tau_p, L)."""
        cfg = self.config
        b, M, K, L = h0.shape
        tau_p = cfg.tau_p
        coherent = math.sqrt(cfg.gamma_T * cfg.gamma_R * cfg.p * tau_p)
        y = np.zeros((b, M, tau_p, L), dtype=complex)
        for u in range(tau_p):
            members = np.flatnonzero(self.pilot_of == u)
            if members.size:
                y[:, :, u, :] = coherent * h0[:, :, members, :].sum(axis=2)
        y += np.einsum(
            "mij,bmuj->bmui", self.chol_theta, crandn(rng, b, M, tau_p, L)
        )
        return y

    def run_block(self, block_index, block_trials, seed):
        """Partial moment sums over one block of trials."""
        rng = np.random.Generator(np.random.Philox(
            np.random.SeedSequence(entropy=seed, spawn_key=(block_index,))
        ))
        cfg = self.config
        b = block_trials
        M, K = self.M, self.K
        T = len(self.ts)
        f, h0, hhat = self.sample_block(b, rng)
        prod = np.einsum("bmkl,bmil->bmki", h0.conj(), hhat)
        af2 = np.abs(f) ** 2
        ah2 = np.abs(hhat) ** 2
        # conditional distortion powers, identical at every slot
        ap = cfg.gamma_R * np.einsum("ml,bmkl->bk", self.D_diag, af2)
        cross = np.einsum("bmkl,bmil->bmki", af2, ah2)
        nu = self.rho_eff * (
            cfg.gamma_T * np.einsum("mi,bmki->bk", self.eta,
                                    np.abs(prod) ** 2)
            + (1.0 - cfg.gamma_T) * np.einsum("mi,bmki->bk", self.eta, cross)
        )
        mu2 = (1.0 - cfg.gamma_R) * nu
        dphi = self._wiener(rng, b * M, self.var_phi).reshape(b, M, T)
        dpsi = self._wiener(rng, b * K, self.var_psi).reshape(b, K, T)
        wprod = prod * self.root_eta[None, :, None, :]
        sC = np.zeros((K, T), dtype=complex)
        sC2 = np.zeros((K, T))
        sC4 = np.zeros((K, T))
        sUI = np.zeros((K, K, T))
        sUI2 = np.zeros((K, K, T))
        off_diag = ~np.eye(K, dtype=bool)
        for j in range(T):
            chi = np.exp(-1j * dphi[:, :, j])
            coeff = np.einsum("bm,bmki->bki", chi, wprod)
            gain = np.exp(-1j * dpsi[:, :, j]) * coeff[
                :, np.arange(K), np.arange(K)
            ]
            sC[:, j] = gain.sum(axis=0)
            mag2 = np.abs(gain) ** 2
            sC2[:, j] = mag2.sum(axis=0)
            sC4[:, j] = (mag2 ** 2).sum(axis=0)
            u2 = np.abs(coeff) ** 2 * off_diag[None, :, :]
            sUI[:, :, j] = u2.sum(axis=0)
            sUI2[:, :, j] = (u2 ** 2).sum(axis=0)
        return (
            sC, sC2, sC4, sUI, sUI2,
            ap.sum(axis=0), (ap ** 2).sum(axis=0),
            mu2.sum(axis=0), (mu2 ** 2).sum(axis=0),
        )


def empirical_sinr(config, corr, ls, stats, assignment, pbf, power, trials,
                   ts=None, seed=None, threads=1):
    """Estimate every SINR power group over many independent trials.

    The coherent gain's squared mean and variance give the desired-signal
    and uncertainty groups; cross gains and the conditional distortion
    powers are averaged directly. Standard errors use first-order
    propagation of the accumulated moments.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    if ts is None:
        ts = (config.tau_p,)
    ts = tuple(int(t) for t in ts)
    if any(t < 0 for t in ts) or list(ts) != sorted(set(ts)):
        raise ValueError("ts must be strictly increasing nonnegative slots")
    if seed is None:
        seed = config.seed
    engine = _Engine(config, corr, ls, stats, assignment, pbf, power, ts)
    blocks = []
    remaining = trials
    index = 0
    while remaining > 0:
        count = min(BLOCK_SIZE, remaining)
        blocks.append((index, count))
        remaining -= count
        index += 1
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            partials = list(pool.map(
                lambda ib: engine.run_block(ib[0], ib[1], seed), blocks
            ))
    else:
        partials = [engine.run_block(i, c, seed) for i, c in blocks]
    sums = [np.zeros_like(p) for p in partials[0]]
    for part in partials:
        for acc, term in zip(sums, part):
            acc += term
    sC, sC2, sC4, sUI, sUI2, sAP, sAP2, sMU, sMU2 = sums
    n = float(trials)
    scale = config.gamma_T * config.gamma_R * downlink_power(config)
    mean_c = sC / n
    abs_mean2 = np.abs(mean_c) ** 2
    var_c = np.maximum(sC2 / n - abs_mean2, 0.0)
    ds = scale * abs_mean2
    bu = scale * var_c
    ui = scale * sUI / n
    se_mean = np.sqrt(var_c / n)
    se_ds = scale * 2.0 * np.sqrt(abs_mean2) * se_mean
    var_mag2 = np.maximum(sC4 / n - (sC2 / n) ** 2, 0.0)
    se_bu = scale * np.sqrt(var_mag2 / n + (2.0 * np.sqrt(abs_mean2) * se_mean) ** 2)
    se_ui = scale * np.sqrt(np.maximum(sUI2 / n - (sUI / n) ** 2, 0.0) / n)
    hwi_ap = sAP / n
    hwi_ue = sMU / n
    se_ap = np.sqrt(np.maximum(sAP2 / n - hwi_ap ** 2, 0.0) / n)
    se_mu = np.sqrt(np.maximum(sMU2 / n - hwi_ue ** 2, 0.0) / n)
    return TrialResult(
        ts=ts, trials=trials, cosets=engine.cosets,
        ds=ds, bu=bu, ui=ui, hwi_ap=hwi_ap, hwi_ue=hwi_ue,
        se_ds=se_ds, se_bu=se_bu, se_ui=se_ui,
        se_hwi_ap=se_ap, se_hwi_ue=se_mu,
    )


def simulate_trial(config, stats, assignment, pbf, power, rng, *,
                   corr, ls, ts=None):
    """One full physical realization, decomposed per user and slot.

    Samples everything the downlink chain contains (channels, oscillator
    phases, pilots, estimates, data symbols, both distortions, noise) and
    returns the received-signal components, which sum exactly to y.
    """
    if ts is None:
        ts = (config.tau_p,)
    ts = tuple(int(t) for t in ts)
    M, K, L = config.M, config.K, config.L
    T = len(ts)
    rho_eff = downlink_power(config)
    var_phi, var_psi, _ = phase_noise_rates(config)
    root_eta = np.sqrt(power.eta)
    real = sample_channel(corr, pbf, ls, config.vartheta, rng)
    # free-running oscillator states at the pilot slot
    ap0 = rng.uniform(0.0, 2.0 * np.pi, size=M)
    ue0 = rng.uniform(0.0, 2.0 * np.pi, size=K)
    real.f = real.f * np.exp(1j * (ap0[:, None, None] + ue0[None, :, None]))
    y_pilot = receive_pilots(real, assignment, config, rng, stats=stats)
    hhat = np.zeros((M, K, L), dtype=complex)
    for m in range(M):
        for k in range(K):
            hhat[m, k] = estimate_channel(y_pilot[m, k], stats, config, m, k)
    herr = real.f - hhat
    drift_phi = _cumulative_drift(rng, M, ts, var_phi)
    drift_psi = _cumulative_drift(rng, K, ts, var_psi)
    symbols = crandn(rng, K, T)
    diag_Omega = np.einsum("mkll->mkl", stats.Omega).real
    D_diag = (
        (1.0 - config.gamma_T) * rho_eff
        * np.einsum("mk,mkl->ml", power.eta, np.maximum(diag_Omega, 0.0))
    )
    mu_ap = np.sqrt(D_diag)[:, None, :] * crandn(rng, M, T, L)
    # per-user conditional distortion power at the UE
    prod_all = np.einsum("mkl,mil->mki", real.f.conj(), hhat)
    cross_all = np.einsum("mkl,mil->mki", np.abs(real.f) ** 2,
                          np.abs(hhat) ** 2)
    nu_k = rho_eff * (
        config.gamma_T * np.einsum("mi,mki->k", power.eta,
                                   np.abs(prod_all) ** 2)
        + (1.0 - config.gamma_T) * np.einsum("mi,mki->k", power.eta,
                                             cross_all)
    )
    mu_ue = (
        np.sqrt((1.0 - config.gamma_R) * nu_k)[:, None] * crandn(rng, K, T)
    )
    noise = crandn(rng, K, T)
    amp = math.sqrt(config.gamma_T * config.gamma_R * rho_eff)
    base_hat = np.einsum("mkl,mkl->mk", hhat.conj(), hhat)
    base_err = np.einsum("mkl,mkl->mk", herr.conj(), hhat)
    signal = np.zeros((K, K, T), dtype=complex)
    ds_part = np.zeros((K, T), dtype=complex)
    bu_part = np.zeros((K, T), dtype=complex)
    hwi = np.zeros((K, T), dtype=complex)
    y = np.zeros((K, T), dtype=complex)
    for j in range(T):
        h_t = real.f * np.exp(
            1j * (drift_phi[:, j][:, None, None]
                  + drift_psi[:, j][None, :, None])
        )
        x_m = math.sqrt(config.gamma_T * rho_eff) * np.einsum(
            "mi,mil,i->ml", root_eta, hhat, symbols[:, j]
        ) + mu_ap[:, j, :]
        rec = math.sqrt(config.gamma_R) * np.einsum(
            "mkl,ml->k", h_t.conj(), x_m
        )
        y[:, j] = rec + mu_ue[:, j] + noise[:, j]
        chi = np.exp(-1j * (drift_phi[:, j][:, None]
                            + drift_psi[:, j][None, :]))
        signal[:, :, j] = amp * np.einsum(
            "mki,mk,mi->ki", prod_all, chi, root_eta
        )
        ds_part[:, j] = amp * np.einsum(
            "mk,mk,mk->k", base_hat, chi, root_eta
        )
        bu_part[:, j] = amp * np.einsum(
            "mk,mk,mk->k", base_err, chi, root_eta
        )
        hwi[:, j] = math.sqrt(config.gamma_R) * np.einsum(
            "mkl,ml->k", h_t.conj(), mu_ap[:, j, :]
        )
    return TrialComponents(
        ts=ts, signal=signal, ds_part=ds_part, bu_part=bu_part,
        hwi=hwi, mu=mu_ue, noise=noise, symbols=symbols, y=y,
    )


def _cumulative_drift(rng, count, ts, var):
    out = np.zeros((count, len(ts)))
    if var <= 0.0:
        return out
    prev = 0
    drift = np.zeros(count)
    for j, t in enumerate(ts):
        step = t - prev
        if step > 0:
            drift = drift + math.sqrt(var * step) * rng.standard_normal(count)
        out[:, j] = drift
        prev = t
    return out


def lemma1_oracle(L, N, xi_a, trials, rng, z=None):
    """Max entrywise deviation of mean(A Z A^H) from xi_a tr(Z) I."""
    if trials < 1:
        raise ValueError("trials must be positive")
    if z is None:
        w = crandn(rng, N, N)
        z = hermitize(w)
    acc = np.zeros((L, L), dtype=complex)
    done = 0
    while done < trials:
        b = min(BLOCK_SIZE * 8, trials - done)
        a = math.sqrt(xi_a) * crandn(rng, b, L, N)
        az = a @ z
        acc += np.einsum("bln,bpn->lp", az, a.conj())
        done += b
    exact = xi_a * np.trace(z) * np.eye(L)
    return float(np.max(np.abs(acc / trials - exact)))


def lemma2_exact(a, c):
    """Closed-form fourth moment |tr(AC)|^2 + tr(A C A^H C)."""
    ac = a @ c
    return float(
        np.abs(np.trace(ac)) ** 2
        + np.trace(ac @ a.conj().T @ c).real
    )


def lemma2_oracle(K, trials, rng, a=None, c=None):
    """Relative error of the sampled quartic form against its closed form."""
    if trials < 1:
        raise ValueError("trials must be positive")
    if a is None:
        a = crandn(rng, K, K)
    if c is None:
        w = crandn(rng, K, K)
        c = w @ w.conj().T / K
    half = chol_sqrt(c)
    total = 0.0
    done = 0
    while done < trials:
        b = min(BLOCK_SIZE * 8, trials - done)
        vec = crandn(rng, b, K) @ half.T
        quad = np.einsum("bk,kj,bj->b", vec.conj(), a, vec)
        total += float(np.sum(np.abs(quad) ** 2))
        done += b
    exact = lemma2_exact(a, c)
    if exact == 0.0:
        return abs(total / trials)
    return abs(total / trials - exact) / abs(exact)
