import numpy as np
import pytest
from scipy.stats import chi2, norm

from encp.gmm import (
    MoonsBenchmarkSpec,
    build_spec,
    conditional_cdf,
    conditional_cdf_mc,
    conditional_mean,
    conditional_quantile,
    grid_mass_estimate,
    log_joint,
    log_marginal_x,
    log_marginal_y,
    log_pmd_ratio,
    moons_group_actions,
    natural_representation,
    pmd_ratio,
    pmd_ratio_grid,
    sample,
    sample_moons,
)
from encp.gmm import _moons_latents
from encp.groups import make_group, trivial_group, trivial_representation
from encp.rng import stream


@pytest.fixture(scope="module")
def c2_spec():
    g = make_group("C2")
    return build_spec(g, natural_representation(g, 1), natural_representation(g, 1), 3, 7)


@pytest.fixture(scope="module")
def trivial_spec():
    g = trivial_group()
    return build_spec(g, trivial_representation(g, 1), trivial_representation(g, 1), 1, 5)


def test_build_spec_invariants(c2_spec):
    assert c2_spec.n_components == 6
    for covs in (c2_spec.covs_x, c2_spec.covs_y):
        assert np.abs(covs - covs.transpose(0, 2, 1)).max() < 1e-12
        assert np.linalg.eigvalsh(covs).min() >= 1e-6


def test_build_spec_deterministic(c2_spec):
    g = make_group("C2")
    again = build_spec(g, natural_representation(g, 1), natural_representation(g, 1), 3, 7)
    assert np.array_equal(again.base_means, c2_spec.base_means)
    assert again.digest == c2_spec.digest


def test_build_spec_rejects_mismatched_reps():
    g = make_group("C2")
    other = make_group("C3")
    with pytest.raises(ValueError):
        build_spec(g, natural_representation(other, 2), natural_representation(g, 1), 1, 0)


def test_marginal_invariance_c2(c2_spec):
    xs = stream(1, "xs").normal(size=(500, 1)) * 2
    base = log_marginal_x(c2_spec, xs)
    for g in range(2):
        moved = log_marginal_x(c2_spec, xs @ c2_spec.rep_x.matrices[g].T)
        assert np.abs(moved - base).max() < 1e-10


def test_sampling_determinism(c2_spec):
    a = sample(c2_spec, 100, 3)
    b = sample(c2_spec, 100, 3)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)
    c = sample(c2_spec, 100, 4)
    assert not np.array_equal(a.x, c.x)


def test_single_component_moment_check(trivial_spec):
    ds = sample(trivial_spec, 100_000, 2)
    mu = trivial_spec.means_x[0]
    se = np.sqrt(trivial_spec.covs_x[0, 0, 0] / ds.n)
    assert abs(ds.x.mean() - mu[0]) < 4 * se


def test_c2_sample_mean_centered(c2_spec):
    ds = sample(c2_spec, 100_000, 9)
    se = ds.x.std() / np.sqrt(ds.n)
    assert abs(ds.x.mean()) < 4 * se


def test_sampling_vs_density_chi2(c2_spec):
    # histogram of the x marginal against the analytic density
    ds = sample(c2_spec, 100_000, 21)
    edges = np.linspace(-5, 5, 41)
    counts, _ = np.histogram(ds.x[:, 0], bins=edges)
    centers = 0.5 * (edges[:-1] + edges[1:])
    dens = np.exp(log_marginal_x(c2_spec, centers[:, None]))
    probs = dens * np.diff(edges)
    inside = counts.sum()
    keep = probs * inside > 10
    expected = probs[keep] / probs[keep].sum() * counts[keep].sum()
    stat = ((counts[keep] - expected) ** 2 / expected).sum()
    pval = chi2.sf(stat, keep.sum() - 1)
    assert pval > 0.01


def test_pmd_ratio_independence_is_one(trivial_spec):
    rng = stream(3, "probe")
    xs = rng.normal(size=(50, 1))
    ys = rng.normal(size=(50, 1))
    np.testing.assert_allclose(pmd_ratio(trivial_spec, xs, ys), 1.0, atol=1e-12)


def test_pmd_invariance_random_triples(c2_spec):
    rng = stream(4, "probe")
    xs = rng.normal(size=(1000, 1)) * 2
    ys = rng.normal(size=(1000, 1)) * 2
    base = pmd_ratio(c2_spec, xs, ys)
    for g in range(2):
        moved = pmd_ratio(
            c2_spec, xs @ c2_spec.rep_x.matrices[g].T, ys @ c2_spec.rep_y.matrices[g].T
        )
        assert np.abs(moved - base).max() < 1e-10


def test_pmd_against_straight_line_density_oracle():
    # hand-built 1D C2 spec, independently evaluated mixture densities
    g = make_group("C2")
    spec = build_spec(g, natural_representation(g, 1), natural_representation(g, 1), 2, 13)
    x0, y0 = np.array([[0.37]]), np.array([[-0.81]])

    def mix_logpdf(value, means, variances):
        comps = [
            norm.logpdf(value, loc=m, scale=np.sqrt(v)) for m, v in zip(means, variances)
        ]
        return np.logaddexp.reduce(comps) - np.log(len(means))

    mx = spec.means_x[:, 0]
    vx = spec.covs_x[:, 0, 0]
    my = spec.means_y[:, 0]
    vy = spec.covs_y[:, 0, 0]
    log_px = mix_logpdf(0.37, mx, vx)
    log_py = mix_logpdf(-0.81, my, vy)
    joint_comps = [
        norm.logpdf(0.37, loc=a, scale=np.sqrt(va)) + norm.logpdf(-0.81, loc=b, scale=np.sqrt(vb))
        for a, va, b, vb in zip(mx, vx, my, vy)
    ]
    log_pxy = np.logaddexp.reduce(joint_comps) - np.log(len(mx))
    oracle = np.exp(log_pxy - log_px - log_py)
    assert pmd_ratio(spec, x0, y0) == pytest.approx(oracle, abs=1e-12)


def test_pmd_log_space_never_nan(c2_spec):
    far = np.array([[100.0]])
    val = log_pmd_ratio(c2_spec, far, -far)
    assert np.isfinite(val).all()


def test_pmd_grid_matches_pairs(c2_spec):
    xs = stream(6, "gx").normal(size=(8, 1))
    ys = stream(6, "gy").normal(size=(5, 1))
    grid = pmd_ratio_grid(c2_spec, xs, ys)
    for i in range(8):
        for j in range(5):
            assert grid[i, j] == pytest.approx(
                pmd_ratio(c2_spec, xs[i : i + 1], ys[j : j + 1]), rel=1e-12
            )


def test_mass_conservation(c2_spec):
    est, se = grid_mass_estimate(c2_spec, 340, 17)
    assert abs(est - 1.0) <= 3 * se


def test_conditional_mean_trivial_single_component(trivial_spec):
    xs = stream(7, "x").normal(size=(10, 1))
    means = conditional_mean(trivial_spec, xs)
    np.testing.assert_allclose(
        means, np.tile(trivial_spec.means_y[0], (10, 1)), atol=1e-12
    )


def test_conditional_mean_equivariance(c2_spec):
    xs = stream(8, "x").normal(size=(1000, 1)) * 2
    base = conditional_mean(c2_spec, xs)
    for g in range(2):
        moved = conditional_mean(c2_spec, xs @ c2_spec.rep_x.matrices[g].T)
        assert np.abs(moved - base @ c2_spec.rep_y.matrices[g].T).max() < 1e-10


def test_conditional_mean_against_quadrature():
    g = make_group("C2")
    spec = build_spec(g, natural_representation(g, 1), natural_representation(g, 1), 2, 3)
    x0 = spec.means_x[1:2]  # probe at a component center
    grid = np.linspace(-40, 40, 400_001)[:, None]
    log_cond = log_joint(spec, np.repeat(x0, len(grid), axis=0), grid) - log_marginal_x(
        spec, x0
    )
    quad = np.trapezoid(grid[:, 0] * np.exp(log_cond), grid[:, 0])
    assert conditional_mean(spec, x0)[0, 0] == pytest.approx(quad, abs=1e-6)


def test_conditional_cdf_limits(c2_spec):
    x0 = np.array([0.4])
    assert conditional_cdf(c2_spec, x0, 0, -1e9) == pytest.approx(0.0, abs=1e-15)
    assert conditional_cdf(c2_spec, x0, 0, 1e9) == pytest.approx(1.0, abs=1e-15)


def test_conditional_cdf_monotone(c2_spec):
    x0 = np.array([-0.9])
    ts = np.linspace(-6, 6, 101)
    vals = conditional_cdf(c2_spec, x0, 0, ts)
    assert np.all(np.diff(vals) >= 0)


def test_conditional_cdf_symmetric_center():
    # symmetric 1D spec evaluated at the symmetry-fixed point x = 0
    g = make_group("C2")
    spec = build_spec(g, natural_representation(g, 1), natural_representation(g, 1), 2, 29)
    assert conditional_cdf(spec, np.array([0.0]), 0, 0.0) == pytest.approx(0.5, abs=1e-12)


def test_conditional_cdf_against_monte_carlo(c2_spec):
    x0 = np.array([0.7])
    t = 0.3
    mc, se = conditional_cdf_mc(c2_spec, x0, 0, t, 100_000, 31)
    assert abs(conditional_cdf(c2_spec, x0, 0, t) - mc) <= 3 * se


def test_conditional_cdf_rejects_bad_dim(c2_spec):
    with pytest.raises(ValueError):
        conditional_cdf(c2_spec, np.array([0.0]), 5, 0.0)


def test_conditional_quantile_roundtrip(c2_spec):
    x0 = np.array([1.3])
    for alpha in (0.1, 0.5, 0.9):
        q = conditional_quantile(c2_spec, x0, 0, alpha)
        assert conditional_cdf(c2_spec, x0, 0, q) == pytest.approx(alpha, abs=1e-9)


# ---------------------------------------------------------------------------
# Moons benchmark
# ---------------------------------------------------------------------------


def test_moons_spec_validation():
    with pytest.raises(ValueError):
        MoonsBenchmarkSpec(beta=0.0)


def test_moons_covariate_range():
    ds = sample_moons(MoonsBenchmarkSpec(), 50_000, 3)
    assert ds.x.min() >= 0.8 and ds.x.max() <= 3.2


def test_moons_reflection_symmetry_of_y0():
    ds = sample_moons(MoonsBenchmarkSpec(), 100_000, 5)
    se = ds.y[:, 0].std() / np.sqrt(ds.n)
    assert abs(ds.y[:, 0].mean()) < 4 * se


def test_moons_latent_interval_identity():
    # y1 - sin(x) - r sin(phi) = (1 - cos z) / 2 lies in [0, 1] by construction
    spec = MoonsBenchmarkSpec()
    n, seed = 20_000, 11
    x, z, phi, r = _moons_latents(spec, n, seed)
    ds = sample_moons(spec, n, seed)
    residual = ds.y[:, 1] - np.sin(x) - r * np.sin(phi)
    assert residual.min() >= 0.0 - 1e-12
    assert residual.max() <= 1.0 + 1e-12
    np.testing.assert_allclose(residual, 0.5 * (1.0 - np.cos(z)), atol=1e-12)


def test_moons_determinism():
    a = sample_moons(MoonsBenchmarkSpec(), 100, 3)
    b = sample_moons(MoonsBenchmarkSpec(), 100, 3)
    assert np.array_equal(a.y, b.y)


def test_moons_group_actions_shape():
    group, rep_x, rep_y = moons_group_actions()
    assert group.order == 2
    assert rep_x.dim == 1 and rep_y.dim == 2
    assert np.array_equal(rep_y.matrices[1], np.diag([-1.0, 1.0]))
