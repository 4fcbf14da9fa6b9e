import numpy as np
import pytest

from encp.groups import (
    DecompositionError,
    GroupError,
    UnsupportedGroupError,
    act,
    character_projector,
    cyclic,
    dihedral,
    isotypic_decomposition,
    isotypic_representation,
    make_group,
    product,
    real_irreps,
    regular_representation,
    trivial_group,
)

LABELS = ["trivial", "C2", "C3", "C4", "C6", "C2xC2", "D3", "D6"]
PRODUCT_LABELS = ["C2xC3", "C3xC3", "C4xC4", "D3xC3", "D3xD3"]


@pytest.fixture(scope="module", params=LABELS + PRODUCT_LABELS)
def group(request):
    return make_group(request.param)


def test_group_axioms_exact(group):
    group.validate()


def test_make_group_rejects_zero():
    with pytest.raises(GroupError):
        cyclic(0)
    with pytest.raises(GroupError):
        dihedral(0)


def test_make_group_labels():
    assert make_group("trivial").order == 1
    assert make_group("C2").order == 2
    assert make_group("D6").order == 12
    assert make_group("C2xC2").order == 4
    with pytest.raises(GroupError):
        make_group("Q8")


def test_cyclic_2_self_inverse():
    g = cyclic(2)
    assert g.mul(1, 1) == 0


def test_cyclic_3_composition():
    # C3 = {e, g120, g240} with g120 * g240 = e
    g = cyclic(3)
    assert g.mul(1, 2) == 0
    assert g.inv(1) == 2


def test_klein_group_every_element_self_inverse():
    g = product(cyclic(2), cyclic(2))
    assert g.order == 4
    for a in g.elements():
        assert g.mul(a, a) == 0


def test_regular_representation_is_exact_homomorphism(group):
    reg = regular_representation(group)
    for a in group.elements():
        for b in group.elements():
            assert np.array_equal(
                reg.matrices[a] @ reg.matrices[b], reg.matrices[group.mul(a, b)]
            )


def test_regular_representation_c3_shift_matrix():
    reg = regular_representation(cyclic(3))
    expected = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
    assert np.array_equal(reg.matrices[1], expected)
    assert np.array_equal(reg.matrices[0], np.eye(3))
    # rho(g120) @ rho(g240) = I
    assert np.array_equal(reg.matrices[1] @ reg.matrices[2], np.eye(3))


def test_act_examples():
    reg = regular_representation(cyclic(3))
    v = np.array([1.0, 0.0, 0.0])
    assert np.array_equal(act(reg, 0, v), v)
    assert np.array_equal(act(reg, 1, v), np.array([0.0, 0.0, 1.0]))
    rng = np.random.default_rng(0)
    w = rng.standard_normal(3)
    for a in range(3):
        for b in range(3):
            composed = act(reg, a, act(reg, b, w))
            direct = (reg.matrices[a] @ reg.matrices[b]) @ w
            assert np.allclose(composed, direct, atol=1e-14)


def test_act_dimension_mismatch():
    reg = regular_representation(cyclic(3))
    with pytest.raises(ValueError):
        act(reg, 0, np.zeros(2))


def test_irreps_are_orthogonal_homomorphisms(group):
    irreps = real_irreps(group)
    for ir in irreps:
        assert np.abs(ir.matrices[0] - np.eye(ir.dim)).max() < 1e-12
        for g in group.elements():
            assert np.abs(ir.matrices[g] @ ir.matrices[g].T - np.eye(ir.dim)).max() < 1e-12
        for a in group.elements():
            for b in group.elements():
                err = np.abs(
                    ir.matrices[a] @ ir.matrices[b] - ir.matrices[group.mul(a, b)]
                ).max()
                assert err < 1e-12


def test_irrep_characters_pairwise_orthogonal(group):
    irreps = real_irreps(group)
    for i, ir1 in enumerate(irreps):
        for ir2 in irreps[i + 1 :]:
            inner = np.dot(ir1.character, ir2.character) / group.order
            assert abs(inner) < 1e-10


def test_irrep_complex_dimension_count(group):
    # sum over real irreps of d_k^2 / <chi, chi> equals |G| for every type mix
    irreps = real_irreps(group)
    total = sum(ir.dim**2 / ir.char_norm_sq for ir in irreps)
    assert abs(total - group.order) < 1e-9


def test_trivial_irrep_first(group):
    assert real_irreps(group)[0].is_trivial


def test_c2_irreps():
    irreps = real_irreps(cyclic(2))
    assert [ir.dim for ir in irreps] == [1, 1]
    assert np.allclose(irreps[1].character, [1.0, -1.0])


def test_c3_irreps_match_rotation_table():
    irreps = real_irreps(cyclic(3))
    assert [ir.dim for ir in irreps] == [1, 2]
    theta = 2.0 * np.pi / 3.0
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    assert np.abs(irreps[1].matrices[1] - rot).max() < 1e-12


def test_d6_irrep_structure():
    # four 1-dimensional and two 2-dimensional irreps; real-type dimension sum 12
    irreps = real_irreps(dihedral(6))
    dims = sorted(ir.dim for ir in irreps)
    assert dims == [1, 1, 1, 1, 2, 2]
    assert sum(ir.dim**2 for ir in irreps) == 12


def test_irrep_schur_commutant_is_scalar(group):
    # averaging a random intertwiner candidate lands in the commutant; for a
    # real-type irrep that algebra is one-dimensional, and for any real irrep
    # the symmetric part is scalar
    rng = np.random.default_rng(5)
    for ir in real_irreps(group):
        r = rng.standard_normal((ir.dim, ir.dim))
        avg = sum(ir.matrices[g] @ r @ ir.matrices[g].T for g in group.elements())
        avg /= group.order
        sym = 0.5 * (avg + avg.T)
        assert np.abs(sym - np.trace(sym) / ir.dim * np.eye(ir.dim)).max() < 1e-10


def test_unsupported_group_kind_raises():
    g = trivial_group()
    bad = type(g)(g.order, g.cayley, g.inverse, 0, "S5", ("symmetric", 5))
    with pytest.raises(UnsupportedGroupError):
        real_irreps(bad)


# ---------------------------------------------------------------------------
# Isotypic decomposition
# ---------------------------------------------------------------------------


def test_regular_rep_isotypic_invariants(group):
    reg = regular_representation(group)
    irreps = real_irreps(group)
    basis = isotypic_decomposition(reg, irreps)
    q = basis.q
    assert np.abs(q @ q.T - np.eye(group.order)).max() < 1e-12
    assert basis.total_dim == group.order
    assert sum(b.multiplicity * b.dim for b in basis.blocks) == group.order
    assert basis.blocks[0].irrep_id == 0  # trivial block first
    assert len(basis.blocks) <= group.order
    # residual against the aligned direct sum of irrep copies
    iso = isotypic_representation(irreps, basis)
    for g in group.elements():
        resid = np.linalg.norm(q @ reg.matrices[g] @ q.T - iso.matrices[g])
        assert resid < 1e-10


def test_c3_regular_basis_matches_published_matrix():
    basis = isotypic_decomposition(regular_representation(cyclic(3)))
    expected_rows = np.array(
        [
            [1.0, 1.0, 1.0] / np.sqrt(3.0),
            [2.0, -1.0, -1.0] / np.sqrt(6.0),
            [0.0, 1.0, -1.0] / np.sqrt(2.0),
        ]
    )
    for row in expected_rows:
        matched = any(
            np.allclose(row, q_row, atol=1e-10) or np.allclose(row, -q_row, atol=1e-10)
            for q_row in basis.q
        )
        assert matched, f"no row of Q matches {row} up to sign"


def test_trivial_group_decomposition_is_identity():
    g = trivial_group()
    rep = regular_representation(g)
    basis = isotypic_decomposition(rep)
    assert np.array_equal(basis.q, np.eye(1))
    assert basis.blocks[0].multiplicity == 1


def test_c2_regular_symmetric_antisymmetric_split():
    basis = isotypic_decomposition(regular_representation(cyclic(2)))
    expected = np.array([[1.0, 1.0], [1.0, -1.0]]) / np.sqrt(2.0)
    for row in expected:
        assert any(
            np.allclose(row, q, atol=1e-12) or np.allclose(row, -q, atol=1e-12)
            for q in basis.q
        )
    assert [b.irrep_id for b in basis.blocks] == [0, 1]


def test_regular_rep_multiplicities(group):
    # m_k = d_k / <chi_k, chi_k> * ... reduces to d_k for real type; in all
    # cases m_k * d_k summed over blocks recovers |G|
    basis = isotypic_decomposition(regular_representation(group))
    irreps = {ir.id: ir for ir in real_irreps(group)}
    for blk in basis.blocks:
        ir = irreps[blk.irrep_id]
        assert blk.multiplicity == round(ir.dim / ir.char_norm_sq)


def test_character_projector_idempotent(group):
    reg = regular_representation(group)
    for ir in real_irreps(group):
        p = character_projector(reg, ir)
        assert np.abs(p @ p - p).max() < 1e-10


def test_isotypic_decomposition_of_direct_sum():
    # a non-regular representation: two copies of the sign irrep of C2 plus one trivial
    from encp.groups import GroupRepresentation, direct_sum_representation

    g = cyclic(2)
    irreps = real_irreps(g)
    sign = GroupRepresentation(g, 1, irreps[1].matrices)
    triv = GroupRepresentation(g, 1, irreps[0].matrices)
    rep = direct_sum_representation(sign, triv, sign)
    basis = isotypic_decomposition(rep, irreps)
    by_id = {b.irrep_id: b.multiplicity for b in basis.blocks}
    assert by_id == {0: 1, 1: 2}


def test_decomposition_failure_on_nonorthogonal_input():
    g = cyclic(2)
    reg = regular_representation(g)
    bad = type(reg)(g, 2, reg.matrices + 0.05)
    with pytest.raises(DecompositionError):
        isotypic_decomposition(bad)
