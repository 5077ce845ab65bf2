"""Joint max-min optimization of surface configuration and power control.

A particle swarm searches the 3N-dimensional surface parameter space
(transmission amplitude splits and both phase profiles) against the
closed-form minimum SINR, bisection drives the power-control feasibility
test to the largest supportable SINR target, and an alternating outer
loop couples the two until the objective settles.
"""

import json
import math
import time
from dataclasses import dataclass

import numpy as np

from .channel import (
    PassiveBeamforming, covariance_tensor, phase_error_cf, random_pbf,
)
from .closed_form import (
    PowerControl, epc_power, sinr_closed_form, term_matrices,
)
from .estimation import assign_pilots, lmmse_statistics
from .socp import Feasible, Infeasible, build_soc_problem, sinr_floor, soc_feasible

ACCELERATION = 1.496   # both cognitive and social coefficients
INERTIA_MIN = 0.4
INERTIA_MAX = 0.9


class NoFeasiblePoint(Exception):
    """Raised when bisection finds no supportable SINR target."""


def make_stats_builder(corr, ls, config):
    """Closure mapping a surface configuration to channel statistics.

    The correlation set and large-scale terms are fixed captures, so a
    fitness evaluation only recomputes the surface-dependent products.
    """
    assignment = assign_pilots(config.K, config.tau_p)
    varsigma = phase_error_cf(config.vartheta)

    def build(pbf):
        R = covariance_tensor(corr, pbf, ls, varsigma)
        return lmmse_statistics(R, assignment, config), assignment

    return build


def min_sinr(t, power, stats, assignment, config):
    """Worst-user closed-form SINR at channel use ``t``."""
    tm = term_matrices(stats, assignment, config, with_xi=False)
    return min(
        b.sinr for b in
        sinr_closed_form(t, power, stats, assignment, config, tm=tm)
    )


def _emit(progress, iteration, best_fitness, u_interval):
    if progress is None:
        return
    progress.write(json.dumps({
        "iteration": iteration,
        "best_fitness": best_fitness,
        "u_interval": u_interval,
    }) + "\n")


# ---------------------------------------------------------------------------
# particle swarm over the surface configuration


@dataclass
class Particle:
    position: np.ndarray       # (3N,) amplitude splits and phase profiles
    velocity: np.ndarray       # (3N,)
    best_position: np.ndarray  # (3N,)
    best_fitness: float


@dataclass
class SwarmState:
    particles: list
    global_best_position: np.ndarray
    global_best_fitness: float
    iteration: int


def encode_pbf(pbf):
    """Pack a surface configuration into a swarm position vector."""
    return np.concatenate([pbf.beta_T, pbf.theta_T, pbf.theta_R])


def decode_pbf(position, mode="star"):
    """Unpack a position vector into a valid surface configuration."""
    N = position.size // 3
    beta_T = np.clip(position[:N], 0.0, 1.0)
    theta_T = np.mod(position[N:2 * N], 2.0 * np.pi)
    theta_R = np.mod(position[2 * N:], 2.0 * np.pi)
    if mode == "reflect-only-pair":
        beta_T = np.zeros(N)
        theta_T = np.zeros(N)
    return PassiveBeamforming(
        beta_T=beta_T, beta_R=1.0 - beta_T,
        theta_T=theta_T, theta_R=theta_R,
    ).validate()


def repair_position(position):
    """Clamp amplitude splits and wrap phases, in place."""
    N = position.size // 3
    np.clip(position[:N], 0.0, 1.0, out=position[:N])
    position[N:] = np.mod(position[N:], 2.0 * np.pi)
    return position


def velocity_limits(N):
    """Per-dimension speed caps at twenty percent of each range."""
    caps = np.empty(3 * N)
    caps[:N] = 0.2
    caps[N:] = 0.2 * 2.0 * np.pi
    return caps


def inertia_weight(t_P, T_P, w_min=INERTIA_MIN, w_max=INERTIA_MAX):
    """Adaptive inertia, decaying from w_max toward w_min."""
    kappa = (T_P - t_P) / T_P
    return math.tanh(3.0 * kappa) * (w_max - w_min) + w_min


def apso_optimize(stats_builder, power, config, rng, swarm_size=10,
                  iterations=100, t=None, incumbent=None, progress=None):
    """Best surface configuration found by the adaptive swarm.

    Power control stays fixed; fitness is the worst-user closed-form
    SINR at channel use ``t`` (pilot length by default), recomputing the
    channel statistics for every candidate configuration. When an
    incumbent configuration is supplied it seeds one particle so the
    search never returns anything worse.
    """
    t_fit = config.tau_p if t is None else t
    N = config.N

    def fitness(position):
        pbf = decode_pbf(position, config.mode)
        stats, assignment = stats_builder(pbf)
        return min_sinr(t_fit, power, stats, assignment, config)

    positions = np.empty((swarm_size, 3 * N))
    positions[:, :N] = rng.uniform(0.0, 1.0, size=(swarm_size, N))
    positions[:, N:] = rng.uniform(0.0, 2.0 * np.pi, size=(swarm_size, 2 * N))
    if incumbent is not None:
        positions[0] = encode_pbf(incumbent)
    particles = [
        Particle(
            position=positions[i].copy(),
            velocity=np.zeros(3 * N),
            best_position=positions[i].copy(),
            best_fitness=-np.inf,
        )
        for i in range(swarm_size)
    ]
    swarm = SwarmState(
        particles=particles,
        global_best_position=positions[0].copy(),
        global_best_fitness=-np.inf,
        iteration=0,
    )
    caps = velocity_limits(N)

    def evaluate_all():
        for particle in swarm.particles:
            value = fitness(particle.position)
            if value > particle.best_fitness:
                particle.best_fitness = value
                particle.best_position = particle.position.copy()
            if value > swarm.global_best_fitness:
                swarm.global_best_fitness = value
                swarm.global_best_position = particle.position.copy()

    for t_P in range(1, iterations + 1):
        evaluate_all()
        _emit(progress, t_P - 1, swarm.global_best_fitness, None)
        omega = inertia_weight(t_P, iterations)
        for particle in swarm.particles:
            r1 = rng.uniform(size=3 * N)
            r2 = rng.uniform(size=3 * N)
            particle.velocity = (
                omega * particle.velocity
                + ACCELERATION * r1
                * (particle.best_position - particle.position)
                + ACCELERATION * r2
                * (swarm.global_best_position - particle.position)
            )
            np.clip(particle.velocity, -caps, caps, out=particle.velocity)
            particle.position = repair_position(
                particle.position + particle.velocity
            )
        swarm.iteration = t_P
    evaluate_all()
    _emit(progress, iterations, swarm.global_best_fitness, None)
    return decode_pbf(swarm.global_best_position, config.mode)


# ---------------------------------------------------------------------------
# bisection over the SINR target


def bisect_power(stats, assignment, pbf, config, u_min, u_max, eps_bi=0.01,
                 t=None, oracle=None, progress=None, z0=None):
    """Largest supportable SINR target located by interval halving.

    Returns the power control from the last feasible probe. A custom
    ``oracle(u)`` returning Feasible or Infeasible replaces the cone
    feasibility test when supplied. Raises NoFeasiblePoint when no
    probe and not even ``u_min`` itself admits a solution.
    """
    if eps_bi <= 0.0:
        raise ValueError("eps_bi must be positive")
    if u_max < u_min:
        raise ValueError("u_max must not be below u_min")
    t_fit = config.tau_p if t is None else t
    if oracle is None:
        problem = build_soc_problem(stats, assignment, config, t_fit)
        cap = problem.u_bound * (1.0 - 1e-12)
        warm = {"z": z0}

        def oracle(u):
            if u >= cap:
                return Infeasible(residual=np.inf, iterations=0)
            result = soc_feasible(
                problem, u, stats, assignment, config, z0=warm["z"]
            )
            if isinstance(result, Feasible):
                warm["z"] = result.z
            return result

    lo, hi = float(u_min), float(u_max)
    best = None
    probes = 0
    while hi - lo >= eps_bi:
        mid = 0.5 * (lo + hi)
        result = oracle(mid)
        probes += 1
        if isinstance(result, Feasible):
            lo, best = mid, result
        else:
            hi = mid
        _emit(progress, probes, None, [lo, hi])
    if best is None:
        if u_min > 0.0:
            result = oracle(float(u_min))
            if isinstance(result, Feasible):
                best = result
        if best is None:
            raise NoFeasiblePoint(
                f"no supportable target in [{u_min:.6g}, {u_max:.6g}]"
            )
    return PowerControl(eta=np.asarray(best.z, dtype=float) ** 2)


# ---------------------------------------------------------------------------
# alternating outer loop


def _solo_targets(problem):
    """Per-user SINR floor when that user receives every AP's budget."""
    M, K = problem.M, problem.K
    out = np.empty(K)
    for k in range(K):
        z = np.zeros((M, K))
        w = problem.budget_w[:, k]
        positive = w > 0.0
        z[positive, k] = 1.0 / np.sqrt(w[positive])
        out[k] = sinr_floor(problem, z)[k]
    return out


def ao_maxmin(stats_builder, config, init=None, eps_ao=0.01, eps_bi=0.01,
              max_outer=12, rng=None, swarm_size=10, swarm_iterations=100,
              t=None, progress=None, timings=None):
    """Alternate swarm and bisection steps until the objective settles.

    Returns the final power control, surface configuration, and the
    objective trace (worst-user closed-form SINR after each outer
    iteration, the initializer first). The power step keeps the previous
    coefficients whenever the conservative feasibility bound would
    lower the re-evaluated objective, so the trace never falls by more
    than numerical slack. When ``timings`` is a list, one record of
    per-stage wall-clock seconds is appended per outer iteration.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    t_fit = config.tau_p if t is None else t
    if init is None:
        pbf = random_pbf(config.N, rng, config.mode)
        stats, assignment = stats_builder(pbf)
        tm = term_matrices(stats, assignment, config, with_xi=False)
        power = epc_power(tm.tr_Omega)
    else:
        power, pbf = init
        stats, assignment = stats_builder(pbf)
    F = min_sinr(t_fit, power, stats, assignment, config)
    trace = [F]
    for outer in range(1, max_outer + 1):
        stage_start = time.perf_counter()
        pbf = apso_optimize(
            stats_builder, power, config, rng,
            swarm_size=swarm_size, iterations=swarm_iterations,
            t=t_fit, incumbent=pbf,
        )
        swarm_seconds = time.perf_counter() - stage_start
        stage_start = time.perf_counter()
        stats, assignment = stats_builder(pbf)
        problem = build_soc_problem(stats, assignment, config, t_fit)
        z_cur = np.sqrt(power.eta)
        u_min = max(float(np.min(sinr_floor(problem, z_cur))), 0.0)
        u_min *= 1.0 - 1e-9
        u_max = float(np.min(_solo_targets(problem)))
        if np.isfinite(problem.u_bound):
            u_max = min(u_max, problem.u_bound * (1.0 - 1e-12))
        u_max = max(u_max, u_min)
        try:
            candidate = bisect_power(
                stats, assignment, pbf, config, u_min, u_max, eps_bi,
                t=t_fit, z0=z_cur,
            )
        except NoFeasiblePoint:
            candidate = power
        fallback = min_sinr(t_fit, power, stats, assignment, config)
        advanced = min_sinr(t_fit, candidate, stats, assignment, config)
        if advanced >= fallback:
            power, F_new = candidate, advanced
        else:
            power, F_new = power, fallback
        trace.append(F_new)
        if timings is not None:
            timings.append({
                "iteration": outer,
                "swarm_seconds": swarm_seconds,
                "power_seconds": time.perf_counter() - stage_start,
            })
        _emit(progress, outer, F_new, [u_min, u_max])
        converged = abs(F_new - F) <= eps_ao
        F = F_new
        if converged:
            break
    return power, pbf, trace


def quasiconcavity_probe(stats, assignment, pbf, config, u_grid, t=None):
    """True when feasibility never returns after being lost on the grid.

    Probes the ascending targets in ``u_grid`` and reports whether the
    feasible prefix is followed only by infeasible targets, the pattern
    a quasi-concave power-control problem must produce. Grids with
    fewer than two points are trivially consistent.
    """
    grid = sorted(float(u) for u in u_grid)
    if len(grid) < 2:
        return True
    t_fit = config.tau_p if t is None else t
    problem = build_soc_problem(stats, assignment, config, t_fit)
    warm = None
    seen_infeasible = False
    for u in grid:
        result = soc_feasible(problem, u, stats, assignment, config, z0=warm)
        if isinstance(result, Feasible):
            if seen_infeasible:
                return False
            warm = result.z
        else:
            seen_infeasible = True
    return True
