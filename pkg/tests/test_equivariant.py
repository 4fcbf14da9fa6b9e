import numpy as np
import pytest

from encp.equivariant import (
    encode,
    invariant_feature_mean,
    make_encoder,
    project_equivariant,
    project_fixed,
    project_params,
    refresh_center,
)
from encp.gmm import natural_representation
from encp.groups import make_group, regular_representation
from encp.rng import stream


@pytest.fixture(scope="module", params=["C2", "C3", "D3", "C6", "C2xC2"])
def encoder(request):
    group = make_group(request.param)
    rep_in = natural_representation(group, 3)
    enc = make_encoder(group, rep_in, [2, 2], 2, "tanh", stream(11, f"enc:{request.param}"))
    xs = stream(12, "xs").standard_normal((256, 3))
    refresh_center(enc, xs)
    return enc, xs


def test_projection_trivial_group_is_identity_map():
    g = make_group("trivial")
    rep = regular_representation(g)
    w = np.array([[2.5]])
    assert np.array_equal(project_equivariant(w, rep, rep), w)


def test_projection_c2_regular_example():
    g = make_group("C2")
    reg = regular_representation(g)
    w = np.array([[1.0, 0.0], [0.0, 0.0]])
    expected = np.array([[0.5, 0.0], [0.0, 0.5]])
    assert np.abs(project_equivariant(w, reg, reg) - expected).max() == 0.0


def test_projection_idempotent_fixed_point(encoder):
    enc, _ = encoder
    rng = stream(13, "w")
    for rep_in, rep_out, (w, _) in zip(enc.layer_reps[:-1], enc.layer_reps[1:], enc.params.layers):
        projected = project_equivariant(rng.standard_normal(w.shape), rep_in, rep_out)
        again = project_equivariant(projected, rep_in, rep_out)
        assert np.abs(again - projected).max() < 1e-14


def test_projection_commutes_with_actions(encoder):
    enc, _ = encoder
    group = enc.group
    for rep_in, rep_out, (w, _) in zip(enc.layer_reps[:-1], enc.layer_reps[1:], enc.params.layers):
        for g in group.elements():
            err = np.abs(rep_out.matrices[g] @ w - w @ rep_in.matrices[g]).max()
            assert err < 1e-12


def test_projection_shape_mismatch():
    g = make_group("C2")
    reg = regular_representation(g)
    with pytest.raises(ValueError):
        project_equivariant(np.zeros((3, 2)), reg, reg)


def test_bias_in_fixed_subspace(encoder):
    enc, _ = encoder
    for rep, (_, b) in zip(enc.layer_reps[1:], enc.params.layers):
        for g in enc.group.elements():
            assert np.abs(rep.matrices[g] @ b - b).max() < 1e-12


def test_output_dim_is_multiple_of_group_order(encoder):
    enc, _ = encoder
    assert enc.out_dim == 2 * enc.group.order
    assert enc.out_dim == sum(b.multiplicity * b.dim for b in enc.blocks)


def test_encoder_equivariance_thousand_trials(encoder):
    enc, xs = encoder
    rng = stream(14, "trial")
    base = encode(enc, xs)
    worst = 0.0
    for _ in range(1000 // enc.group.order + 1):
        g = int(rng.integers(0, enc.group.order))
        moved = encode(enc, xs @ enc.rep_in.matrices[g].T)
        worst = max(worst, np.abs(moved - base @ enc.iso_rep.matrices[g].T).max())
    assert worst < 1e-10


def test_encode_dim_mismatch(encoder):
    enc, _ = encoder
    with pytest.raises(ValueError):
        encode(enc, np.zeros((4, enc.rep_in.dim + 1)))


def test_trivial_group_encoder_is_plain_mlp():
    g = make_group("trivial")
    rep = natural_representation(g, 2)
    enc = make_encoder(g, rep, [3], 5, "tanh", stream(15, "t"))
    assert np.array_equal(enc.iso_basis.q, np.eye(5))
    xs = stream(16, "xs").standard_normal((64, 2))
    refresh_center(enc, xs)
    from encp.nn import forward

    assert np.allclose(encode(enc, xs), forward(enc.params, xs) - enc.center)


def test_centering_trivial_block_mean_zero(encoder):
    enc, xs = encoder
    u = encode(enc, xs)
    trivial_mean = u[:, enc.blocks[0].rows].mean(axis=0)
    assert np.abs(trivial_mean).max() < 1e-12


def test_centering_orbit_augmented_mean_zero_all_blocks(encoder):
    # with the invariant centering statistic, the orbit-augmented empirical
    # mean of every feature block vanishes on the centering sample
    enc, xs = encoder
    aug = np.concatenate(
        [encode(enc, xs @ enc.rep_in.matrices[g].T) for g in enc.group.elements()]
    )
    assert np.abs(aug.mean(axis=0)).max() < 1e-12


def test_center_lies_in_fixed_subspace(encoder):
    enc, xs = encoder
    mu = invariant_feature_mean(enc, xs)
    rep = enc.layer_reps[-1]
    for g in enc.group.elements():
        assert np.abs(rep.matrices[g] @ mu - mu).max() < 1e-12


def test_equivariance_survives_arbitrary_parameter_values(encoder):
    # overwrite weights with fresh noise, re-project, and re-check equivariance
    enc, xs = encoder
    enc = enc.copy()
    rng = stream(17, "noise")
    noisy = enc.params.copy()
    for i, (w, b) in enumerate(noisy.layers):
        noisy.layers[i] = (rng.standard_normal(w.shape), rng.standard_normal(b.shape))
    enc.params = project_params(noisy, enc.layer_reps)
    refresh_center(enc, xs)
    u = encode(enc, xs)
    for g in enc.group.elements():
        moved = encode(enc, xs @ enc.rep_in.matrices[g].T)
        assert np.abs(moved - u @ enc.iso_rep.matrices[g].T).max() < 1e-10
