import dataclasses
import math

import numpy as np
import pytest

from starcf.channel import (
    PassiveBeamforming, SideMismatch, cascaded_covariance, covariance_tensor,
    effective_ris_matrices, equal_split_pbf, los_steering, phase_error_cf,
    random_pbf, sample_channel, sample_phase_errors,
)
from starcf.correlation import build_correlation_set
from starcf.scenario import SystemConfig, large_scale_fading, place_entities


def bessel_series(nu, x, terms=80):
    total = 0.0
    for j in range(terms):
        total += (x / 2.0) ** (2 * j + nu) / (
            math.factorial(j) * math.gamma(j + nu + 1)
        )
    return total


def test_phase_error_cf_at_zero():
    assert phase_error_cf(0.0) == 0.0


def test_phase_error_cf_matches_series():
    for vartheta in (0.5, 1.0, 3.0, 10.0):
        expected = bessel_series(1, vartheta) / bessel_series(0, vartheta)
        assert phase_error_cf(vartheta) == pytest.approx(expected, rel=1e-12)
    assert phase_error_cf(3.0) == pytest.approx(0.8099852939565043, rel=1e-12)


def test_phase_error_cf_large_concentration_limit():
    assert phase_error_cf(1e6) == pytest.approx(1.0, abs=1e-5)


def test_phase_error_cf_monotone():
    grid = np.linspace(0.0, 25.0, 50)
    values = [phase_error_cf(v) for v in grid]
    assert all(b > a for a, b in zip(values, values[1:]))


def test_phase_error_samples_clamped_at_huge_concentration():
    rng = np.random.default_rng(0)
    assert np.all(sample_phase_errors(math.inf, (3, 4), rng) == 0.0)
    assert np.all(sample_phase_errors(1e9, (5,), rng) == 0.0)


def random_hermitian(n, rng):
    A = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return 0.5 * (A + A.conj().T)


def test_effective_matrices_limits():
    rng = np.random.default_rng(5)
    G = random_hermitian(4, rng)
    R = random_hermitian(4, rng)
    G1, R1 = effective_ris_matrices(R, G, 1.0)
    assert np.allclose(G1, G)
    assert np.allclose(R1, R)
    G0, R0 = effective_ris_matrices(R, G, 0.0)
    assert np.allclose(G0, np.diag(np.diag(G)))
    assert np.allclose(R0, np.diag(np.diag(R)))


def test_effective_matrices_match_phase_error_sampling():
    rng = np.random.default_rng(42)
    G = random_hermitian(4, rng)
    vartheta = 3.0
    varsigma = phase_error_cf(vartheta)
    expected, _ = effective_ris_matrices(np.eye(4), G, varsigma)
    draws = 100_000
    angles = rng.vonmises(0.0, vartheta, size=(draws, 4))
    phases = np.exp(1j * angles)
    # average of PhiErr G PhiErr^H entrywise
    mean = (phases[:, :, None] * phases[:, None, :].conj()).mean(axis=0) * G
    err = np.abs(mean - expected).max() / np.abs(G).max()
    assert err < 0.01


def test_pbf_validation():
    pbf = equal_split_pbf(4)
    assert np.allclose(pbf.beta_T + pbf.beta_R, 1.0)
    bad = PassiveBeamforming(
        beta_T=np.full(4, 0.6), beta_R=np.full(4, 0.6),
        theta_T=np.zeros(4), theta_R=np.zeros(4),
    )
    with pytest.raises(ValueError):
        bad.validate()
    wrapped = PassiveBeamforming(
        beta_T=np.full(4, 0.5), beta_R=np.full(4, 0.5),
        theta_T=np.full(4, 7.0), theta_R=np.zeros(4),
    )
    with pytest.raises(ValueError):
        wrapped.validate()


def test_phase_vector_sides():
    pbf = equal_split_pbf(4)
    assert np.allclose(pbf.phase_vector("T"), math.sqrt(0.5))
    assert np.allclose(pbf.phase_vector("R"), math.sqrt(0.5))
    with pytest.raises(SideMismatch):
        pbf.phase_vector("X")


def test_random_pbf_modes():
    rng = np.random.default_rng(9)
    pbf = random_pbf(8, rng)
    assert np.all(pbf.beta_T >= 0.0) and np.all(pbf.beta_T <= 1.0)
    assert np.all(pbf.theta_R < 2.0 * np.pi)
    pair = random_pbf(8, rng, mode="reflect-only-pair")
    assert np.all(pair.beta_T == 0.0)
    assert np.all(pair.beta_R == 1.0)


def _scene(**overrides):
    base = dict(M=1, L=2, N=4, K_T=1, K_R=1, tau_p=2,
                direct_blockage_db=20.0, ris_gain_offset_db=65.0)
    base.update(overrides)
    cfg = dataclasses.replace(SystemConfig(), **base).validate()
    geo = place_entities(cfg, np.random.default_rng(23))
    ls = large_scale_fading(geo, cfg)
    corr = build_correlation_set(cfg, geo, ls)
    return cfg, ls, corr


def test_los_steering_matches_surface_grid():
    g = los_steering([1.0, 0.0, 0.0], 16, 0.0375, 0.0375, 0.15)
    assert np.allclose(g, 1.0)


def test_cascaded_covariance_no_ris_reduces_to_direct():
    cfg, ls, corr = _scene(mode="no-ris")
    pbf = equal_split_pbf(cfg.N)
    R = cascaded_covariance(corr, pbf, ls, 0.81, 0, 0)
    assert np.allclose(R, corr.R_d[0, 0])


def test_cascaded_covariance_rayleigh_limit_drops_los_term():
    cfg, ls, corr = _scene(iota_db=-300.0)
    pbf = equal_split_pbf(cfg.N)
    varsigma = phase_error_cf(cfg.vartheta)
    R = cascaded_covariance(corr, pbf, ls, varsigma, 0, 0)
    v = pbf.phase_vector("R")
    _, R_eff = effective_ris_matrices(
        corr.R_S, np.outer(corr.g_bar[0], corr.g_bar[0].conj()), varsigma
    )
    tr = np.trace(
        corr.R_S @ (R_eff * np.outer(v, v.conj()))
    ).real
    expected = corr.R_d[0, 0] + ls.xi[0] * ls.alpha[0] * tr * corr.R_A[0]
    assert np.allclose(R, expected, rtol=1e-9)


def test_cascaded_covariance_matches_sample_covariance():
    cfg, ls, corr = _scene()
    pbf = equal_split_pbf(cfg.N)
    varsigma = phase_error_cf(cfg.vartheta)
    target = cascaded_covariance(corr, pbf, ls, varsigma, 0, 0)
    rng = np.random.default_rng(77)
    trials = 100_000
    acc = np.zeros((cfg.L, cfg.L), dtype=complex)
    for _ in range(trials):
        real = sample_channel(corr, pbf, ls, cfg.vartheta, rng)
        acc += np.outer(real.f[0, 0], real.f[0, 0].conj())
    sample_cov = acc / trials
    err = abs(np.trace(sample_cov - target)) / abs(np.trace(target))
    assert err < 0.01
    assert np.linalg.eigvalsh(target).min() >= -1e-10 * np.trace(target).real


def test_sample_channel_reconstruction_and_mean():
    cfg, ls, corr = _scene()
    pbf = equal_split_pbf(cfg.N)
    rng = np.random.default_rng(3)
    trials = 20_000
    mean = np.zeros((cfg.M, cfg.K, cfg.L), dtype=complex)
    for _ in range(trials):
        real = sample_channel(corr, pbf, ls, cfg.vartheta, rng)
        for k in range(cfg.K):
            side = corr.ue_sides[k]
            v = pbf.phase_vector(side) * np.exp(1j * real.phase_err[k])
            rebuilt = real.d[:, k] + np.einsum("mln,n->ml", real.Q, v * real.g[k])
            assert np.allclose(rebuilt, real.f[:, k], rtol=1e-12, atol=1e-18)
        mean += real.f
    mean /= trials
    # zero-mean: each entry within 3 standard errors of its own std
    target = cascaded_covariance(corr, pbf, ls, phase_error_cf(cfg.vartheta), 0, 0)
    se = np.sqrt(np.trace(target).real / cfg.L / trials)
    assert np.all(np.abs(mean) < 3.5 * se)


def test_sample_channel_infinite_concentration_means_no_error():
    cfg, ls, corr = _scene()
    pbf = equal_split_pbf(cfg.N)
    real = sample_channel(corr, pbf, ls, math.inf, np.random.default_rng(1))
    assert np.all(real.phase_err == 0.0)


def test_covariance_tensor_matches_pairwise():
    cfg, ls, corr = _scene(M=2, K_T=2, K_R=1, tau_p=3)
    pbf = equal_split_pbf(cfg.N)
    varsigma = phase_error_cf(cfg.vartheta)
    tensor = covariance_tensor(corr, pbf, ls, varsigma)
    for m in range(cfg.M):
        for k in range(cfg.K):
            assert np.allclose(
                tensor[m, k], cascaded_covariance(corr, pbf, ls, varsigma, k, m)
            )
