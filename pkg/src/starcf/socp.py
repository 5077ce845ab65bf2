"""Second-order-cone feasibility test for max-min power control.

For a fixed surface configuration and SINR target u, decides whether
square-root power coefficients z (with eta = z^2) exist that satisfy the
per-AP power budgets together with one second-order cone per user that
encodes a deterministic lower bound on that user's SINR. The slack
variables of the cone system appear only inside a monotone norm, so they
are eliminated at their minimal values and the problem is solved in z
alone by an operator-splitting method with exact projections.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .closed_form import downlink_power, phase_noise_rates, term_matrices


class UOutOfRange(Exception):
    """Raised when the SINR target lies outside the representable range."""


@dataclass
class SlackValues:
    """Minimal slack values recovered from a power witness.

    eps bounds the pilot-sharing estimate power per AP, kappa the
    coherent cross gain per sharing pair, q the diagonal distortion
    power and r the estimate-channel cross power.
    """

    eps: np.ndarray    # (M, K)
    kappa: np.ndarray  # (K, K), entry [i, k] used only for pilot sharers
    q: np.ndarray      # (M, K)
    r: np.ndarray      # (M, K)


@dataclass
class Feasible:
    z: np.ndarray        # (M, K) square-root power coefficients
    slacks: SlackValues
    residual: float      # largest normalized constraint violation
    iterations: int


@dataclass
class Infeasible:
    residual: float      # best witness violation seen before giving up
    iterations: int


@dataclass
class SocProblem:
    """Constraint data of the power-control feasibility system.

    The cone for user k reads ||[A_k z; 1]|| <= c(u) * sig_k^T z where
    z is the flattened (M*K,) coefficient vector, A_k stacks every
    denominator contribution as rows that are linear in z, and sig_k
    carries the estimate traces of user k. c(u) scales the signal side
    and is the only place the target u enters.
    """

    M: int
    K: int
    A: np.ndarray              # (rows, M*K) stacked cone rows, all users
    cone_slices: tuple         # per user, slice into the rows of A
    sig: np.ndarray            # (K, M*K) signal coefficient per user
    budget_w: np.ndarray       # (M, K) per-AP quadratic budget weights
    gain: float                # gamma_T * gamma_R * rho * exp(-var_phi t)
    e_psi: float               # exp(-var_psi t)
    sharers: tuple             # per user, tuple of pilot-sharing users
    b: np.ndarray              # (M, K, K) squared coherent cross gains
    tr_R_Omega: np.ndarray     # (M, K, K) estimate-channel cross powers
    tr_diag: np.ndarray        # (M, K, K) diagonal distortion couplings

    @property
    def u_bound(self):
        """Supremum of representable SINR targets."""
        if self.e_psi >= 1.0:
            return np.inf
        return self.e_psi / (1.0 - self.e_psi)

    def cone_scale(self, u):
        """Signal-side cone coefficient c(u); raises UOutOfRange."""
        if not np.isfinite(u) or u <= 0.0 or u >= self.u_bound:
            raise UOutOfRange(
                f"target {u!r} outside (0, {self.u_bound:.6g})"
            )
        u_tilde = (1.0 / u + 1.0) * self.e_psi - 1.0
        return float(np.sqrt(u_tilde * self.gain))


def build_soc_problem(stats, assignment, config, t):
    """Assemble the feasibility system at channel use ``t``."""
    tm = term_matrices(stats, assignment, config, with_xi=False)
    M, K = tm.tr_Omega.shape
    n = M * K
    var_phi, var_psi, _ = phase_noise_rates(config)
    rho = downlink_power(config)
    e_phi = float(np.exp(-var_phi * t))
    e_psi = float(np.exp(-var_psi * t))
    g2 = config.gamma_T * config.gamma_R
    g_tilde = (1.0 - config.gamma_R) * (1.0 - config.gamma_T)
    coef_est = config.gamma_T * rho * (1.0 - config.gamma_R * e_phi)
    root_b = np.sqrt(tm.b)

    def flat(m, i):
        return m * K + i

    rows = []
    cone_slices = []
    for k in range(K):
        start = len(rows)
        sharers = tuple(i for i in assignment.cosets[k] if i != k)
        # squared-trace and diagonal-square terms of user k's own estimate
        for m in range(M):
            row = np.zeros(n)
            row[flat(m, k)] = np.sqrt(coef_est) * tm.tr_Omega[m, k]
            rows.append(row)
            row = np.zeros(n)
            row[flat(m, k)] = np.sqrt(g_tilde * rho * tm.tr_diag_sq[m, k])
            rows.append(row)
        # estimate-channel cross powers, all interferers
        for m in range(M):
            for i in range(K):
                row = np.zeros(n)
                row[flat(m, i)] = np.sqrt(
                    config.gamma_T * rho * tm.tr_R_Omega[m, i, k]
                )
                rows.append(row)
        # pilot-sharing estimate powers and coherent cross gains
        for m in range(M):
            for i in sharers:
                row = np.zeros(n)
                row[flat(m, i)] = np.sqrt(coef_est * tm.b[m, i, k])
                rows.append(row)
        for i in sharers:
            row = np.zeros(n)
            for m in range(M):
                row[flat(m, i)] = np.sqrt(g2 * rho * e_phi) * root_b[m, i, k]
            rows.append(row)
        # diagonal distortion couplings, all interferers
        for m in range(M):
            for i in range(K):
                row = np.zeros(n)
                row[flat(m, i)] = np.sqrt(
                    (1.0 - config.gamma_T) * rho * tm.tr_diag[m, i, k]
                )
                rows.append(row)
        cone_slices.append(slice(start, len(rows)))

    sig = np.zeros((K, n))
    for k in range(K):
        for m in range(M):
            sig[k, flat(m, k)] = tm.tr_Omega[m, k]

    return SocProblem(
        M=M, K=K, A=np.asarray(rows), cone_slices=tuple(cone_slices),
        sig=sig, budget_w=tm.tr_Omega.copy(), gain=g2 * rho * e_phi,
        e_psi=e_psi,
        sharers=tuple(
            tuple(i for i in assignment.cosets[k] if i != k)
            for k in range(K)
        ),
        b=tm.b, tr_R_Omega=tm.tr_R_Omega, tr_diag=tm.tr_diag,
    )


def minimal_slacks(problem, z):
    """Slack values at their defining norms for coefficients ``z``."""
    M, K = problem.M, problem.K
    z = np.asarray(z).reshape(M, K)
    z2 = z**2
    eps = np.zeros((M, K))
    kappa = np.zeros((K, K))
    for k in range(K):
        sharers = problem.sharers[k]
        if sharers:
            idx = list(sharers)
            eps[:, k] = np.sqrt(
                np.sum(z2[:, idx] * problem.b[:, idx, k], axis=1)
            )
            for i in sharers:
                kappa[i, k] = float(
                    np.sum(z[:, i] * np.sqrt(problem.b[:, i, k]))
                )
    q = np.sqrt(np.einsum("mi,mik->mk", z2, problem.tr_diag))
    r = np.sqrt(np.einsum("mi,mik->mk", z2, problem.tr_R_Omega))
    return SlackValues(eps=eps, kappa=kappa, q=q, r=r)


def sinr_floor(problem, z):
    """Deterministic SINR lower bound per user at coefficients ``z``.

    This is the largest target u for which z satisfies user k's cone,
    conservative against the closed-form SINR because coherent cross
    gains enter through their moduli.
    """
    zf = np.asarray(z).reshape(-1)
    out = np.zeros(problem.K)
    for k in range(problem.K):
        s = float(problem.sig[k] @ zf)
        if s <= 0.0:
            out[k] = 0.0
            continue
        v2 = float(np.sum((problem.A[problem.cone_slices[k]] @ zf) ** 2)) + 1.0
        denom = v2 + (1.0 - problem.e_psi) * problem.gain * s**2
        out[k] = problem.e_psi * problem.gain * s**2 / denom
    return out


def constraint_residual(problem, z, u):
    """Largest normalized violation of the feasibility system at ``z``."""
    c_u = problem.cone_scale(u)
    zf = np.asarray(z).reshape(-1)
    worst = float(np.max(-zf.reshape(problem.M, problem.K), initial=0.0))
    budget = np.sum(
        problem.budget_w * zf.reshape(problem.M, problem.K) ** 2, axis=1
    )
    worst = max(worst, float(np.max(budget - 1.0, initial=0.0)))
    for k in range(problem.K):
        lhs = np.sqrt(
            float(np.sum((problem.A[problem.cone_slices[k]] @ zf) ** 2)) + 1.0
        )
        rhs = c_u * float(problem.sig[k] @ zf)
        worst = max(worst, (lhs - rhs) / max(1.0, abs(rhs)))
    return worst


def _project_power_set(z, w):
    """Project onto the nonnegative per-AP power ellipsoids, in place.

    z and w are (M, K); each AP row m must satisfy z >= 0 and
    sum_k w[m, k] * z[m, k]^2 <= 1.
    """
    np.maximum(z, 0.0, out=z)
    load = np.sum(w * z**2, axis=1)
    for m in np.flatnonzero(load > 1.0):
        wm = w[m]
        zm = z[m]
        # the load is convex and decreasing in mu, so Newton from zero
        # increases monotonically toward the root without overshooting
        mu = 0.0
        for _ in range(100):
            denom = 1.0 + mu * wm
            val = float(np.sum(wm * (zm / denom) ** 2)) - 1.0
            if val < 1e-14:
                break
            grad = -2.0 * float(np.sum(wm**2 * zm**2 / denom**3))
            mu -= val / grad
        z[m] = zm / (1.0 + mu * wm)
    return z


def _project_cone(y, s):
    """Project (y, s) onto the second-order cone ||y|| <= s."""
    ny = float(np.linalg.norm(y))
    if ny <= s:
        return y, s
    if ny <= -s:
        return np.zeros_like(y), 0.0
    t = 0.5 * (ny + s)
    return y * (t / ny), t


def soc_feasible(problem, u, stats=None, assignment=None, config=None,
                 z0=None, tol=1e-8, budget=50_000, relax=1.8,
                 check_every=25):
    """Decide feasibility of the power-control system at target ``u``.

    Runs Douglas-Rachford splitting between the product of simple sets
    (power ellipsoids with nonnegativity, one second-order cone per
    user) and the affine subspace tying the cone coordinates to z. The
    stats, assignment and config arguments are accepted for signature
    parity with the builders but the problem object already carries all
    constraint data.

    The iterate is preconditioned by a diagonal change of variables
    that lifts the coefficients to unit scale and by one uniform scale
    per cone; both are exact reformulations, so the accepted witness is
    checked against the original constraints.
    """
    c_u = problem.cone_scale(u)
    M, K = problem.M, problem.K
    w = problem.budget_w

    def witness(z):
        return constraint_residual(problem, z, u)

    if z0 is not None:
        z0 = np.asarray(z0, dtype=float).reshape(M, K).copy()
        _project_power_set(z0, w)
        res = witness(z0)
        if res <= tol:
            return Feasible(
                z=z0, slacks=minimal_slacks(problem, z0),
                residual=res, iterations=0,
            )

    # diagonal preconditioner: unit coordinates fill the power budget
    with np.errstate(divide="ignore"):
        d = 1.0 / np.sqrt(w * K)
    finite = np.isfinite(d)
    if not finite.any():
        d = np.ones_like(d)
    else:
        d[~finite] = np.median(d[finite])
    d_flat = d.reshape(-1)
    w_bar = w * d**2

    A = problem.A * d_flat[None, :]
    G = (c_u * problem.sig) * d_flat[None, :]
    y0_ref = np.ones(K)
    for k in range(K):
        sl = problem.cone_slices[k]
        block = A[sl]
        rms = float(np.sqrt(np.mean(block**2) * block.shape[1])) or 1.0
        A[sl] = block / rms
        G[k] /= rms
        y0_ref[k] = 1.0 / rms

    n = M * K
    normal = np.eye(n) + A.T @ A + G.T @ G
    try:
        factor = cho_factor(normal)
    except np.linalg.LinAlgError:
        return Infeasible(residual=np.inf, iterations=0)

    def project_affine(z_t, y_t, s_t):
        rhs = z_t + A.T @ y_t + G.T @ s_t
        z_p = cho_solve(factor, rhs)
        return z_p, A @ z_p, G @ z_p

    def project_simple(z_t, y_t, y0_t, s_t):
        z_p = _project_power_set(z_t.reshape(M, K).copy(), w_bar).reshape(-1)
        y_p = np.empty_like(y_t)
        y0_p = np.empty(K)
        s_p = np.empty(K)
        for k in range(K):
            sl = problem.cone_slices[k]
            vec = np.concatenate([y_t[sl], [y0_t[k]]])
            proj, s_k = _project_cone(vec, s_t[k])
            y_p[sl] = proj[:-1]
            y0_p[k] = proj[-1]
            s_p[k] = s_k
        return z_p, y_p, y0_p, s_p

    if z0 is not None:
        z_x = (z0 / d).reshape(-1)
    else:
        z_x = np.ones(n)
    y_x = A @ z_x
    y0_x = y0_ref.copy()
    s_x = G @ z_x
    best_res = np.inf
    last_improvement = 0
    iteration = 0
    while iteration < budget:
        iteration += 1
        z_a, y_a, y0_a, s_a = project_simple(z_x, y_x, y0_x, s_x)
        z_b, y_b, s_b = project_affine(
            2.0 * z_a - z_x, 2.0 * y_a - y_x, 2.0 * s_a - s_x,
        )
        z_x += relax * (z_b - z_a)
        y_x += relax * (y_b - y_a)
        y0_x += relax * (y0_ref - y0_a)
        s_x += relax * (s_b - s_a)
        if iteration % check_every == 0 or iteration == budget:
            z_cand = (z_a.reshape(M, K)) * d
            res = witness(z_cand)
            if res <= tol:
                return Feasible(
                    z=z_cand,
                    slacks=minimal_slacks(problem, z_cand),
                    residual=res, iterations=iteration,
                )
            if res < best_res * (1.0 - 1e-6):
                last_improvement = iteration
            best_res = min(best_res, res)
            # a clearly positive stalled gap certifies infeasibility; near
            # the boundary allow a longer window before giving up
            stall_window = 4000 if best_res <= 1e-3 else 1200
            if iteration - last_improvement >= stall_window:
                break
    return Infeasible(residual=best_res, iterations=iteration)
