import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from pcvlab.lvgen import (
    ConfigError,
    DegenerateColumnError,
    Distribution,
    GeneratorConfig,
    Importance,
    Link,
    Rotation,
    Scale,
    add_noise,
    best_case_config,
    cs_cholesky,
    generate,
    propagate,
    sample_latents,
    sample_weights,
)


def _mean_offdiag_r(x):
    r = np.corrcoef(x, rowvar=False)
    return r[np.triu_indices_from(r, 1)]


# ---------------------------------------------------------------- latents


def test_gaussian_zero_mean_uncorrelated_latents():
    cfg = GeneratorConfig(n_participants=10_000, n_latents=2, latent_distribution="Gaussian")
    lat = sample_latents(cfg, 1)
    assert np.all(np.abs(lat.mean(axis=0)) < 0.05)
    assert np.all(np.abs(_mean_offdiag_r(lat)) < 0.05)


@pytest.mark.parametrize(
    "dist, scale", [("Gaussian", "ZeroMean"), ("Uniform", "ZeroMean"), ("Uniform", "PositiveOnly")]
)
def test_correlated_latents_hit_target_pearson(dist, scale):
    cfg = GeneratorConfig(
        n_participants=10_000, n_latents=5, latent_distribution=dist, latent_scale=scale, latent_correlation=0.5
    )
    lat = sample_latents(cfg, 2)
    assert abs(_mean_offdiag_r(lat).mean() - 0.5) < 0.05
    if scale == "PositiveOnly":
        assert lat.min() >= 0.0


def _folded_normal_r(rho):
    # corr(|X|, |Y|) for a standard bivariate normal with correlation rho
    return (math.sqrt(1 - rho**2) + rho * math.asin(rho) - 1) / (math.pi / 2 - 1)


def test_half_normal_latents_fold_after_correlation():
    cfg = GeneratorConfig(
        n_participants=20_000, n_latents=4, latent_scale="PositiveOnly", latent_correlation=0.5
    )
    lat = sample_latents(cfg, 5)
    assert lat.min() >= 0.0
    assert _mean_offdiag_r(lat).mean() == pytest.approx(_folded_normal_r(0.5), abs=0.02)


@pytest.mark.parametrize("m, c", [(2, 0.5), (5, 0.3), (10, 0.9), (3, 0.0)])
def test_cs_cholesky_reconstructs_target(m, c):
    low = cs_cholesky(m, c)
    target = np.full((m, m), c) + (1 - c) * np.eye(m)
    np.testing.assert_allclose(low @ low.T, target, atol=1e-12)
    assert np.allclose(low, np.tril(low))


def test_cs_cholesky_singular_at_one():
    low = cs_cholesky(4, 1.0)
    np.testing.assert_array_equal(low @ low.T, np.ones((4, 4)))


def test_uncorrelated_latents_skip_mixing():
    base = GeneratorConfig(n_participants=50, n_latents=3, latent_distribution="Uniform")
    np.testing.assert_array_equal(sample_latents(base, 8), np.random.default_rng(8).uniform(-1, 1, (50, 3)))


def test_positive_uniform_latents_support_and_mean():
    cfg = GeneratorConfig(n_participants=10_000, n_latents=3, latent_distribution="Uniform", latent_scale="PositiveOnly")
    lat = sample_latents(cfg, 3)
    assert lat.min() >= 0.0 and lat.max() <= 1.0
    assert np.all(np.abs(lat.mean(axis=0) - 0.5) < 0.02)


def test_zero_mean_uniform_support():
    cfg = GeneratorConfig(n_participants=5000, n_latents=2, latent_distribution="Uniform")
    lat = sample_latents(cfg, 4)
    assert lat.min() >= -1.0 and lat.max() <= 1.0
    assert np.all(np.abs(lat.mean(axis=0)) < 0.05)


def test_latent_correlation_one_gives_identical_columns():
    cfg = GeneratorConfig(n_participants=200, n_latents=3, latent_correlation=1.0)
    lat = sample_latents(cfg, 0)
    assert np.allclose(lat, lat[:, :1])


# ---------------------------------------------------------------- weights


def test_monotonic_importance_divides_rows_exactly():
    eq = GeneratorConfig(n_latents=3, n_observed=50, importance="Equal")
    mono = eq.replace(importance=Importance.MONOTONIC_DECREASING)
    w_eq = sample_weights(eq, 9)
    w_mono = sample_weights(mono, 9)
    np.testing.assert_array_equal(w_mono, w_eq / np.array([[1.0], [2.0], [3.0]]))


def test_monotonic_importance_expected_magnitude_ratio():
    cfg = GeneratorConfig(n_latents=3, n_observed=20_000, importance="MonotonicDecreasing")
    w = np.abs(sample_weights(cfg, 5))
    # row 3 is row-1-like draws scaled by 1/3; compare against E|N(0,1)|
    expected = math.sqrt(2 / math.pi)
    assert w[0].mean() == pytest.approx(expected, abs=0.02)
    assert w[2].mean() == pytest.approx(expected / 3, abs=0.01)


def test_equal_importance_rows_identically_distributed():
    cfg = GeneratorConfig(n_latents=3, n_observed=5000, importance="Equal")
    w = sample_weights(cfg, 6)
    for i in (1, 2):
        assert sps.ks_2samp(w[0], w[i]).pvalue > 0.001


def test_positive_gaussian_weights_half_normal_mean():
    cfg = GeneratorConfig(n_latents=2, n_observed=10_000, weight_scale="PositiveOnly", importance="Equal")
    w = sample_weights(cfg, 7)
    assert w.min() >= 0
    assert np.all(np.abs(w.mean(axis=1) - math.sqrt(2 / math.pi)) < 0.02)


def test_uniform_weight_support():
    w = sample_weights(GeneratorConfig(weight_distribution="Uniform", importance="Equal", n_observed=2000), 1)
    assert w.min() >= -1 and w.max() <= 1 and w.min() < -0.9
    w = sample_weights(
        GeneratorConfig(weight_distribution="Uniform", weight_scale="PositiveOnly", importance="Equal", n_observed=2000), 1
    )
    assert w.min() >= 0 and w.max() <= 1


# ---------------------------------------------------------------- propagation and noise


def test_linear_noise_free_is_exact_product():
    cfg = GeneratorConfig(n_participants=50, n_latents=3, n_observed=12, seed=4)
    sys_ = generate(cfg)
    np.testing.assert_array_equal(sys_.observed, sys_.latents @ sys_.weights)
    np.testing.assert_array_equal(sys_.observed, sys_.observed_noise_free)


def test_sigmoid_range():
    cfg = GeneratorConfig(n_participants=500, n_latents=3, n_observed=30, link="Sigmoid", seed=1)
    x = generate(cfg).observed_noise_free
    assert np.all(x > 0) and np.all(x < 1)


def test_noise_factor_one_gives_reliability_near_0707():
    cfg = GeneratorConfig(n_participants=1000, n_latents=2, n_observed=40, noise_sd_factor=1.0, seed=11)
    s = generate(cfg)
    r = [np.corrcoef(s.observed[:, j], s.observed_noise_free[:, j])[0, 1] for j in range(cfg.n_observed)]
    assert np.mean(r) == pytest.approx(1 / math.sqrt(2), abs=0.05)


def test_noise_sd_matches_factor():
    cfg = GeneratorConfig(n_participants=20_000, n_latents=1, n_observed=5, noise_sd_factor=0.5)
    clean = np.random.default_rng(0).standard_normal((20_000, 5)) * np.arange(1, 6)
    noisy = add_noise(cfg, clean, 1)
    ratio = (noisy - clean).std(axis=0) / clean.std(axis=0)
    np.testing.assert_allclose(ratio, 0.5, atol=0.01)


def test_degenerate_column_is_named():
    cfg = GeneratorConfig(n_participants=20, n_latents=2, n_observed=4)
    w = np.ones((2, 4))
    w[:, 2] = 0.0
    with pytest.raises(DegenerateColumnError) as info:
        propagate(cfg, np.random.default_rng(0).standard_normal((20, 2)), w)
    assert info.value.column == 2


def test_paired_mode_reuses_weights():
    cfg = GeneratorConfig(n_participants=100, n_latents=2, n_observed=10)
    a = generate(cfg, 1)
    b = generate(cfg, 2, weights=a.weights)
    np.testing.assert_array_equal(a.weights, b.weights)
    assert not np.array_equal(a.latents, b.latents)
    with pytest.raises(ValueError):
        generate(cfg, 2, weights=np.ones((3, 10)))


# ---------------------------------------------------------------- invariants


def test_same_seed_bit_identical():
    cfg = best_case_config(3, n_participants=200, n_observed=20, noise_sd_factor=0.3, latent_correlation=0.5, seed=99)
    a, b = generate(cfg), generate(cfg)
    for name in ("latents", "weights", "observed", "observed_noise_free"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    assert not np.array_equal(a.observed, generate(cfg.replace(seed=100)).observed)


@settings(max_examples=25, deadline=None)
@given(
    n=st.integers(5, 60),
    m=st.integers(1, 6),
    p=st.integers(1, 15),
    seed=st.integers(0, 2**32),
    dist=st.sampled_from(list(Distribution)),
    scale=st.sampled_from(list(Scale)),
)
def test_linear_noise_free_lies_in_weight_row_space(n, m, p, seed, dist, scale):
    cfg = GeneratorConfig(
        n_participants=n, n_latents=m, n_observed=p, latent_distribution=dist, weight_scale=scale, seed=seed
    )
    try:
        s = generate(cfg)
    except DegenerateColumnError:
        return
    x = s.observed
    assert np.linalg.matrix_rank(x) <= min(m, p, n)
    # project rows of x onto the row space of the weights
    q, _ = np.linalg.qr(s.weights.T)
    residual = x - (x @ q) @ q.T
    assert np.max(np.abs(residual)) < 1e-10 * max(1.0, np.max(np.abs(x)))


def test_noise_uncorrelated_with_latents():
    # 4/sqrt(n) is a ~4 sigma bound per pair; 2 latents x 5 columns x 100 runs keeps
    # the family-wise chance exceedance near 6%
    n = 1000
    z = []
    for seed in range(100):
        cfg = GeneratorConfig(n_participants=n, n_latents=2, n_observed=5, noise_sd_factor=1.0, seed=seed)
        s = generate(cfg)
        noise = s.observed - s.observed_noise_free
        r = np.corrcoef(np.hstack([noise, s.latents]), rowvar=False)[:5, 5:]
        z.append(r.ravel() * math.sqrt(n))
    z = np.concatenate(z)
    assert np.max(np.abs(z)) < 4
    # null distribution of sqrt(n) r is approximately standard normal
    assert abs(z.mean()) < 0.1 and abs(z.std() - 1) < 0.1


def test_monotonic_importance_variance_contribution_non_increasing():
    # per-latent share of noise-free variance; with p random weights per row the
    # ordering of adjacent small rows can swap in a single draw, so the
    # decomposition is averaged over seeds and compared with the 1/i^2 law
    contrib = []
    for seed in range(50):
        cfg = best_case_config(5, n_participants=1000, n_observed=100, latent_distribution="Gaussian", seed=seed)
        s = generate(cfg)
        contrib.append([np.sum(np.var(np.outer(s.latents[:, i], s.weights[i]), axis=0)) for i in range(5)])
    mean = np.mean(contrib, axis=0)
    assert np.all(np.diff(mean) < 0)
    np.testing.assert_allclose(mean / mean[0], 1 / np.arange(1, 6) ** 2, rtol=0.1)


def test_equal_importance_variance_contribution_flat():
    contrib = []
    for seed in range(50):
        cfg = best_case_config(4, n_participants=1000, n_observed=100, importance="Equal", seed=seed)
        s = generate(cfg)
        contrib.append([np.sum(np.var(np.outer(s.latents[:, i], s.weights[i]), axis=0)) for i in range(4)])
    mean = np.mean(contrib, axis=0)
    np.testing.assert_allclose(mean / mean.mean(), 1.0, rtol=0.1)


# ---------------------------------------------------------------- config


@pytest.mark.parametrize(
    "field_name, value",
    [
        ("n_observed", 0),
        ("n_latents", 0),
        ("n_participants", 2),
        ("noise_sd_factor", -0.1),
        ("noise_sd_factor", 1.5),
        ("latent_correlation", 1.01),
        ("seed", -1),
        ("seed", 2**64),
        ("link", "Cubic"),
        ("n_latents", 2.5),
    ],
)
def test_config_validation_names_field(field_name, value):
    with pytest.raises(ConfigError) as info:
        GeneratorConfig(**{field_name: value})
    assert info.value.field == field_name
    assert field_name in str(info.value)


def test_config_unknown_field():
    with pytest.raises(ConfigError) as info:
        GeneratorConfig.from_dict({"n_latent": 3})
    assert info.value.field == "n_latent"


def test_config_coerces_strings_to_enums():
    cfg = GeneratorConfig(link="Sigmoid", rotation="Promax", importance="Equal")
    assert cfg.link is Link.SIGMOID and cfg.rotation is Rotation.PROMAX and cfg.importance is Importance.EQUAL


@settings(max_examples=50, deadline=None)
@given(
    n=st.integers(3, 10_000),
    m=st.integers(1, 50),
    p=st.integers(1, 500),
    noise=st.floats(0, 1),
    corr=st.floats(0, 1),
    seed=st.integers(0, 2**64 - 1),
    link=st.sampled_from(list(Link)),
    rot=st.sampled_from(list(Rotation)),
)
def test_config_json_round_trip(n, m, p, noise, corr, seed, link, rot):
    cfg = GeneratorConfig(
        n_participants=n, n_latents=m, n_observed=p, noise_sd_factor=noise, latent_correlation=corr,
        seed=seed, link=link, rotation=rot,
    )
    assert GeneratorConfig.from_json(cfg.to_json()) == cfg
    assert json.loads(cfg.to_json())["link"] == link.value


def test_best_case_config_fields():
    cfg = best_case_config(5)
    assert (cfg.n_participants, cfg.n_latents, cfg.n_observed) == (1000, 5, 100)
    assert cfg.weight_scale is Scale.ZERO_MEAN and cfg.importance is Importance.MONOTONIC_DECREASING
    assert cfg.link is Link.LINEAR and cfg.noise_sd_factor == 0 and cfg.latent_correlation == 0
