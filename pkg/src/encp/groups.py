"""Finite groups, their real irreducible representations, and isotypic bases.

Groups are stored as index tables: elements are integers ``0..|G|-1`` with a
Cayley (composition) table and an inverse table.  Supported constructions are
cyclic groups ``C_n``, dihedral groups ``D_n`` (order ``2n``) and finite direct
products thereof.

Conventions
-----------
* The identity element has index 0.
* Dihedral elements: indices ``0..n-1`` are the rotations ``r^k``, indices
  ``n..2n-1`` are the reflections ``s r^k``, with the relation ``r s = s r^-1``.
* Representations are unitary (orthogonal real matrices).  The regular
  representation is the right-translation permutation action, which for the
  cyclic case yields the familiar cyclic shift matrices.
* Two-dimensional rotation irreps use the counterclockwise orientation
  ``R(theta) = [[cos, -sin], [sin, cos]]``.  Any clockwise variant is
  equivalent up to conjugation by ``diag(1, -1)``.
* An isotypic basis ``Q`` has orthonormal *rows*; it block-diagonalizes a
  representation as ``Q @ rho(g) @ Q.T = direct_sum_k (m_k copies of pi_k(g))``
  with the trivial block first.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "FiniteGroup",
    "GroupRepresentation",
    "RealIrrep",
    "IsotypicBlock",
    "IsotypicBasis",
    "GroupError",
    "UnsupportedGroupError",
    "DecompositionError",
    "cyclic",
    "dihedral",
    "product",
    "trivial_group",
    "make_group",
    "regular_representation",
    "trivial_representation",
    "direct_sum_representation",
    "real_irreps",
    "character_projector",
    "isotypic_decomposition",
    "isotypic_representation",
    "act",
]


class GroupError(ValueError):
    """Invalid group construction parameters."""


class UnsupportedGroupError(GroupError):
    """Group kind has no closed-form irreducible representation table here."""


class DecompositionError(RuntimeError):
    """Isotypic decomposition failed to reach the required tolerance."""


@dataclass(frozen=True)
class FiniteGroup:
    """A finite group as indexed elements with composition and inverse tables."""

    order: int
    cayley: np.ndarray  # (|G|, |G|) int, cayley[a, b] = index of a * b
    inverse: np.ndarray  # (|G|,) int
    identity_index: int
    label: str
    kind: tuple = field(default=("cyclic", 1))

    def mul(self, a: int, b: int) -> int:
        return int(self.cayley[a, b])

    def inv(self, a: int) -> int:
        return int(self.inverse[a])

    def elements(self) -> range:
        return range(self.order)

    def validate(self) -> None:
        """Check the group axioms exactly (integer arithmetic)."""
        n = self.order
        e = self.identity_index
        cay = self.cayley
        if cay.shape != (n, n):
            raise GroupError(f"cayley table shape {cay.shape} != ({n}, {n})")
        if not (np.array_equal(cay[e, :], np.arange(n)) and np.array_equal(cay[:, e], np.arange(n))):
            raise GroupError("identity axiom violated")
        if not np.all(cay[np.arange(n), self.inverse] == e):
            raise GroupError("inverse axiom violated")
        # associativity: (a b) c == a (b c)
        left = cay[cay, :]  # left[a, b, c] = (a b) c
        right = cay[:, cay]  # right[a, b, c] = a (b c)
        if not np.array_equal(left, right):
            raise GroupError("associativity violated")


@dataclass(frozen=True)
class GroupRepresentation:
    """Orthogonal matrix representation: one ``dim x dim`` matrix per element."""

    group: FiniteGroup
    dim: int
    matrices: np.ndarray  # (|G|, dim, dim) float64

    def matrix(self, g: int) -> np.ndarray:
        return self.matrices[g]

    def character(self) -> np.ndarray:
        return np.trace(self.matrices, axis1=1, axis2=2)


@dataclass(frozen=True)
class RealIrrep:
    """Real irreducible representation with its character vector.

    ``char_norm_sq`` is the group-averaged squared character norm: 1 for real
    type, 2 for realified complex type, 4 for quaternionic type.
    """

    id: int
    group: FiniteGroup
    dim: int
    matrices: np.ndarray
    character: np.ndarray

    @property
    def char_norm_sq(self) -> float:
        return float(np.dot(self.character, self.character) / self.group.order)

    def matrix(self, g: int) -> np.ndarray:
        return self.matrices[g]

    @property
    def is_trivial(self) -> bool:
        return self.dim == 1 and np.allclose(self.character, 1.0)


@dataclass(frozen=True)
class IsotypicBlock:
    irrep_id: int
    multiplicity: int
    dim: int  # irrep dimension d_k
    offset: int  # first row of the block in the isotypic basis

    @property
    def size(self) -> int:
        return self.multiplicity * self.dim

    @property
    def rows(self) -> slice:
        return slice(self.offset, self.offset + self.size)


@dataclass(frozen=True)
class IsotypicBasis:
    """Orthogonal change of basis exposing the isotypic blocks of a representation."""

    q: np.ndarray  # (dim, dim), rows are the new basis vectors
    blocks: tuple  # ordered IsotypicBlock tuple, trivial block first
    total_dim: int

    def block(self, irrep_id: int) -> IsotypicBlock:
        for blk in self.blocks:
            if blk.irrep_id == irrep_id:
                return blk
        raise KeyError(f"no isotypic block for irrep id {irrep_id}")


# ---------------------------------------------------------------------------
# Group constructors
# ---------------------------------------------------------------------------


def cyclic(n: int) -> FiniteGroup:
    """Cyclic group C_n with elements g^0 .. g^{n-1}."""
    if n < 1:
        raise GroupError(f"cyclic group order must be >= 1, got {n}")
    idx = np.arange(n)
    cay = (idx[:, None] + idx[None, :]) % n
    inv = (-idx) % n
    label = "trivial" if n == 1 else f"C{n}"
    return FiniteGroup(n, cay, inv, 0, label, ("cyclic", n))


def dihedral(n: int) -> FiniteGroup:
    """Dihedral group D_n of order 2n. D_1 is C2, D_2 the Klein four-group."""
    if n < 1:
        raise GroupError(f"dihedral parameter must be >= 1, got {n}")
    order = 2 * n
    cay = np.empty((order, order), dtype=np.int64)
    for a in range(order):
        ra, ka = divmod(a, n)  # ra=0 rotation r^ka, ra=1 reflection s r^ka
        for b in range(order):
            rb, kb = divmod(b, n)
            if ra == 0 and rb == 0:
                cay[a, b] = (ka + kb) % n
            elif ra == 0 and rb == 1:
                cay[a, b] = n + (kb - ka) % n  # r^a (s r^b) = s r^{b-a}
            elif ra == 1 and rb == 0:
                cay[a, b] = n + (ka + kb) % n  # (s r^a) r^b = s r^{a+b}
            else:
                cay[a, b] = (kb - ka) % n  # (s r^a)(s r^b) = r^{b-a}
    inv = np.array([np.nonzero(cay[a] == 0)[0][0] for a in range(order)])
    return FiniteGroup(order, cay, inv, 0, f"D{n}", ("dihedral", n))


def product(g1: FiniteGroup, g2: FiniteGroup) -> FiniteGroup:
    """Direct product with index (i1, i2) -> i1 * |G2| + i2."""
    n1, n2 = g1.order, g2.order
    order = n1 * n2
    a1, a2 = np.divmod(np.arange(order), n2)
    cay = g1.cayley[a1[:, None], a1[None, :]] * n2 + g2.cayley[a2[:, None], a2[None, :]]
    inv = g1.inverse[a1] * n2 + g2.inverse[a2]
    label = f"{g1.label}x{g2.label}"
    return FiniteGroup(order, cay, inv, 0, label, ("product", g1.kind, g2.kind))


def trivial_group() -> FiniteGroup:
    return cyclic(1)


_LABEL_RE = re.compile(r"^([CD])(\d+)$")


def make_group(spec: str | tuple) -> FiniteGroup:
    """Build a group from a label like ``"C3"``, ``"D6"``, ``"C2xC2"``,
    ``"trivial"``, or from a kind tuple ``("cyclic", n)`` etc."""
    if isinstance(spec, tuple):
        if spec[0] == "cyclic":
            return cyclic(spec[1])
        if spec[0] == "dihedral":
            return dihedral(spec[1])
        if spec[0] == "product":
            return product(make_group(spec[1]), make_group(spec[2]))
        raise GroupError(f"unknown group kind {spec!r}")
    text = spec.strip()
    if text.lower() in ("trivial", "c1", "e", "1"):
        return trivial_group()
    if "x" in text:
        head, _, tail = text.partition("x")
        return product(make_group(head), make_group(tail))
    m = _LABEL_RE.match(text)
    if not m:
        raise GroupError(f"cannot parse group label {spec!r}")
    n = int(m.group(2))
    return cyclic(n) if m.group(1) == "C" else dihedral(n)


# ---------------------------------------------------------------------------
# Representations
# ---------------------------------------------------------------------------


def regular_representation(group: FiniteGroup) -> GroupRepresentation:
    """Right-translation permutation representation of dimension ``|G|``.

    ``rho(g) e_j = e_{j g^{-1}}``; for C3 this gives the cyclic shift with
    ``rho(g120) = [[0,1,0],[0,0,1],[1,0,0]]``.
    """
    n = group.order
    mats = np.zeros((n, n, n))
    for g in group.elements():
        targets = group.cayley[:, group.inverse[g]]
        mats[g, targets, np.arange(n)] = 1.0
    return GroupRepresentation(group, n, mats)


def trivial_representation(group: FiniteGroup, dim: int = 1) -> GroupRepresentation:
    mats = np.broadcast_to(np.eye(dim), (group.order, dim, dim)).copy()
    return GroupRepresentation(group, dim, mats)


def direct_sum_representation(*reps: GroupRepresentation) -> GroupRepresentation:
    """Block-diagonal direct sum of representations of the same group."""
    group = reps[0].group
    if any(r.group.order != group.order for r in reps):
        raise GroupError("direct sum requires representations of the same group")
    dim = sum(r.dim for r in reps)
    mats = np.zeros((group.order, dim, dim))
    off = 0
    for r in reps:
        mats[:, off : off + r.dim, off : off + r.dim] = r.matrices
        off += r.dim
    return GroupRepresentation(group, dim, mats)


def act(rep: GroupRepresentation, g: int, v: np.ndarray) -> np.ndarray:
    """Apply the group element ``g`` to a vector (or batch of row vectors)."""
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != rep.dim:
        raise ValueError(f"vector dim {v.shape[-1]} != representation dim {rep.dim}")
    return v @ rep.matrices[g].T


# ---------------------------------------------------------------------------
# Real irreducible representations
# ---------------------------------------------------------------------------


def _rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def _cyclic_irrep_matrices(n: int):
    """Yield (dim, matrices) for the real irreps of C_n, trivial first."""
    yield 1, np.ones((n, 1, 1))
    if n % 2 == 0 and n > 1:
        signs = np.array([(-1.0) ** k for k in range(n)])
        yield 1, signs.reshape(n, 1, 1)
    for j in range(1, (n + 1) // 2):
        mats = np.stack([_rotation(2.0 * np.pi * j * k / n) for k in range(n)])
        yield 2, mats


def _dihedral_irrep_matrices(n: int):
    """Yield (dim, matrices) for the real irreps of D_n, trivial first."""
    order = 2 * n
    refl = np.array([[1.0, 0.0], [0.0, -1.0]])

    def one_dim(rot_sign: float, ref_sign: float) -> np.ndarray:
        vals = np.empty(order)
        for a in range(order):
            ra, ka = divmod(a, n)
            vals[a] = (rot_sign**ka) * (ref_sign if ra else 1.0)
        return vals.reshape(order, 1, 1)

    yield 1, one_dim(1.0, 1.0)
    yield 1, one_dim(1.0, -1.0)
    if n % 2 == 0:
        yield 1, one_dim(-1.0, 1.0)
        yield 1, one_dim(-1.0, -1.0)
    for j in range(1, (n + 1) // 2):
        mats = np.empty((order, 2, 2))
        for a in range(order):
            ra, ka = divmod(a, n)
            rot = _rotation(2.0 * np.pi * j * ka / n)
            mats[a] = refl @ rot if ra else rot
        yield 2, mats


def _kron_rep(m1: np.ndarray, m2: np.ndarray) -> np.ndarray:
    """Per-element Kronecker product of two matrix stacks on a product group."""
    n1, d1 = m1.shape[0], m1.shape[1]
    n2, d2 = m2.shape[0], m2.shape[1]
    out = np.einsum("aij,bkl->abikjl", m1, m2).reshape(n1 * n2, d1 * d2, d1 * d2)
    return out


# Basis splitting kron(R(a), R(b)) into R(a+b) (+) R(a-b); rows are orthonormal.
_ANGLE_SPLIT = np.array(
    [
        [1.0, 0.0, 0.0, -1.0],  # sum block
        [0.0, 1.0, 1.0, 0.0],
        [1.0, 0.0, 0.0, 1.0],  # difference block
        [0.0, -1.0, 1.0, 0.0],
    ]
) / np.sqrt(2.0)


def _split_double_rotation(mats: np.ndarray):
    """Split the 4D tensor of two realified complex-type 2D irreps into two
    2D rotation irreps (angle sum and angle difference)."""
    conj = np.einsum("ij,gjk,lk->gil", _ANGLE_SPLIT, mats, _ANGLE_SPLIT)
    upper = conj[:, :2, :2]
    lower = conj[:, 2:, 2:]
    off = max(np.abs(conj[:, :2, 2:]).max(), np.abs(conj[:, 2:, :2]).max())
    if off > 1e-10:
        raise DecompositionError(f"double-rotation split residual {off:.2e}")
    return upper, lower


def _char_key(character: np.ndarray) -> bytes:
    return np.round(character, 9).tobytes()


def real_irreps(group: FiniteGroup) -> list[RealIrrep]:
    """Complete list of real irreducible representations, trivial first.

    Raises ``UnsupportedGroupError`` for group kinds without a closed-form
    table.  Completeness is certified by ``sum_k d_k^2 / <chi_k, chi_k> = |G|``
    (the complex-dimension count, valid for every Frobenius-Schur type).
    """
    stacks = _irrep_stacks(group)
    seen: dict[bytes, None] = {}
    irreps: list[RealIrrep] = []
    for dim, mats in stacks:
        char = np.trace(mats, axis1=1, axis2=2)
        key = _char_key(char)
        if key in seen:
            continue
        seen[key] = None
        irreps.append(RealIrrep(len(irreps), group, dim, np.ascontiguousarray(mats), char))
    total = sum(ir.dim**2 / ir.char_norm_sq for ir in irreps)
    if abs(total - group.order) > 1e-8:
        raise DecompositionError(
            f"irrep table incomplete for {group.label}: dimension count {total} != {group.order}"
        )
    if not irreps[0].is_trivial:
        raise DecompositionError("trivial irrep not listed first")
    return irreps


def _irrep_stacks(group: FiniteGroup):
    kind = group.kind
    if kind[0] == "cyclic":
        return list(_cyclic_irrep_matrices(kind[1]))
    if kind[0] == "dihedral":
        return list(_dihedral_irrep_matrices(kind[1]))
    if kind[0] == "product":
        return _product_irrep_stacks(group)
    raise UnsupportedGroupError(f"no irrep table for group kind {kind!r}")


def _product_irrep_stacks(group: FiniteGroup):
    g1 = make_group(group.kind[1])
    g2 = make_group(group.kind[2])
    if g1.order * g2.order != group.order:
        raise GroupError("inconsistent product group kind")
    irreps1 = real_irreps(g1)
    irreps2 = real_irreps(g2)
    out = []
    for ir1 in irreps1:
        for ir2 in irreps2:
            tensor = _kron_rep(ir1.matrices, ir2.matrices)
            both_complex = (
                ir1.dim == 2
                and ir2.dim == 2
                and abs(ir1.char_norm_sq - 2.0) < 1e-9
                and abs(ir2.char_norm_sq - 2.0) < 1e-9
            )
            if both_complex:
                upper, lower = _split_double_rotation(tensor)
                out.append((2, upper))
                out.append((2, lower))
            else:
                out.append((ir1.dim * ir2.dim, tensor))
    return out


# ---------------------------------------------------------------------------
# Isotypic decomposition
# ---------------------------------------------------------------------------


def character_projector(rep: GroupRepresentation, irrep: RealIrrep) -> np.ndarray:
    """Idempotent projector onto the isotypic component of ``irrep`` in ``rep``.

    ``P = (d_k / <chi_k, chi_k>) * (1/|G|) sum_g chi_k(g) rho(g)``; the leading
    rescale makes the projector exactly idempotent for every irrep type.
    """
    scale = irrep.dim / irrep.char_norm_sq
    p = np.einsum("g,gij->ij", irrep.character, rep.matrices) / rep.group.order
    return scale * p


def _multiplicities(rep: GroupRepresentation, irreps: list[RealIrrep]) -> list[int]:
    chi = rep.character()
    mults = []
    for ir in irreps:
        raw = float(np.dot(chi, ir.character)) / (rep.group.order * ir.char_norm_sq)
        m = int(round(raw))
        if abs(raw - m) > 1e-8 or m < 0:
            raise DecompositionError(
                f"non-integer multiplicity {raw} for irrep {ir.id} in representation"
            )
        mults.append(m)
    return mults


def _intertwiner(rep: GroupRepresentation, irrep: RealIrrep, seed_mat: np.ndarray) -> np.ndarray:
    """Schur average ``T = (1/|G|) sum_g pi(g) R rho(g)^T``; satisfies
    ``T rho(g) = pi(g) T`` exactly up to floating point."""
    seeded = np.einsum("ai,gji->gaj", seed_mat, rep.matrices)  # stack of R rho(g)^T
    return np.einsum("gba,gaj->bj", irrep.matrices, seeded) / rep.group.order


def _is_complex_2d(irrep: RealIrrep) -> bool:
    return irrep.dim == 2 and abs(irrep.char_norm_sq - 2.0) < 1e-9


def _canonical_copy(rows: np.ndarray, irrep: RealIrrep) -> np.ndarray:
    """Fix the residual gauge of one irrep copy deterministically.

    For realified complex 2D irreps the commutant contains all rotations, so
    the first row is aligned with the projection of the first reachable
    standard basis vector.  Every copy is finally sign-flipped as a whole so
    the leading entry of its first row is positive; per-row flips would break
    the exact intertwining for 2D blocks.
    """
    rows = rows.copy()
    if _is_complex_2d(irrep):
        coeffs = rows[:, np.argmax(np.linalg.norm(rows, axis=0) > 1e-9)]
        for j in range(rows.shape[1]):
            c = rows[:, j]
            if np.linalg.norm(c) > 1e-9:
                coeffs = c
                break
        norm = np.linalg.norm(coeffs)
        cos_phi, sin_phi = coeffs[0] / norm, -coeffs[1] / norm
        gauge = np.array([[cos_phi, -sin_phi], [sin_phi, cos_phi]])
        rows = gauge @ rows
    lead = rows[0]
    nz = np.nonzero(np.abs(lead) > 1e-9)[0]
    if nz.size and lead[nz[0]] < 0:
        rows = -rows
    return rows


def _extract_block(
    rep: GroupRepresentation, irrep: RealIrrep, mult: int, rng: np.random.Generator
) -> np.ndarray:
    """Rows spanning the isotypic component, grouped as ``mult`` aligned copies."""
    d = irrep.dim
    accepted = np.zeros((0, rep.dim))
    copies = []
    attempts = 0
    while len(copies) < mult:
        attempts += 1
        if attempts > 50 * max(mult, 1):
            raise DecompositionError(
                f"failed to extract {mult} copies of irrep {irrep.id} after {attempts} attempts"
            )
        t = _intertwiner(rep, irrep, rng.standard_normal((d, rep.dim)))
        if accepted.size:
            t = t - (t @ accepted.T) @ accepted
        gram = t @ t.T
        scale = np.trace(gram) / d
        if scale < 1e-10:
            continue
        # Symmetric orthonormalization stays inside the commutant, preserving
        # the intertwining property of the rows.
        evals, evecs = np.linalg.eigh(gram)
        if evals.min() < 1e-12 * evals.max():
            continue
        t = (evecs * (1.0 / np.sqrt(evals))) @ evecs.T @ t
        t = _canonical_copy(t, irrep)
        copies.append(t)
        accepted = np.concatenate([accepted, t], axis=0)
    return accepted


def _rng_for(rep: GroupRepresentation, irrep: RealIrrep) -> np.random.Generator:
    tag = f"isotypic:{rep.group.label}:{rep.dim}:{irrep.id}".encode()
    key = int.from_bytes(hashlib.blake2b(tag, digest_size=16).digest(), "little")
    return np.random.Generator(np.random.Philox(key=key))


def isotypic_decomposition(
    rep: GroupRepresentation,
    irreps: list[RealIrrep] | None = None,
    tol: float = 1e-8,
) -> IsotypicBasis:
    """Orthogonal basis exposing the isotypic blocks of an orthogonal representation.

    The returned ``q`` satisfies ``q @ rho(g) @ q.T`` equal to the direct sum of
    ``m_k`` aligned copies of each irrep, blocks ordered by irrep id (trivial
    first).  Raises ``DecompositionError`` if the residual exceeds ``tol``.
    """
    if irreps is None:
        irreps = real_irreps(rep.group)
    if rep.group.order == 1:
        # no symmetry: everything is one trivial block, identity basis
        blocks = (IsotypicBlock(0, rep.dim, 1, 0),)
        return IsotypicBasis(np.eye(rep.dim), blocks, rep.dim)
    mults = _multiplicities(rep, irreps)
    if sum(m * ir.dim for m, ir in zip(mults, irreps)) != rep.dim:
        raise DecompositionError("multiplicities do not account for the representation dimension")
    rows = []
    blocks = []
    offset = 0
    for ir, m in zip(irreps, mults):
        if m == 0:
            continue
        block_rows = _extract_block(rep, ir, m, _rng_for(rep, ir))
        rows.append(block_rows)
        blocks.append(IsotypicBlock(ir.id, m, ir.dim, offset))
        offset += m * ir.dim
    q = np.concatenate(rows, axis=0)
    basis = IsotypicBasis(q, tuple(blocks), offset)
    _validate_isotypic(rep, irreps, basis, tol)
    return basis


def _block_diagonal_target(irreps: list[RealIrrep], basis: IsotypicBasis, g: int) -> np.ndarray:
    mats = []
    for blk in basis.blocks:
        pi = irreps[blk.irrep_id].matrices[g]
        for _ in range(blk.multiplicity):
            mats.append(pi)
    out = np.zeros((basis.total_dim, basis.total_dim))
    off = 0
    for m in mats:
        d = m.shape[0]
        out[off : off + d, off : off + d] = m
        off += d
    return out


def _validate_isotypic(
    rep: GroupRepresentation, irreps: list[RealIrrep], basis: IsotypicBasis, tol: float
) -> None:
    q = basis.q
    ortho_err = np.abs(q @ q.T - np.eye(q.shape[0])).max()
    if ortho_err > 1e-12:
        raise DecompositionError(f"isotypic basis not orthogonal: residual {ortho_err:.2e}")
    worst = 0.0
    for g in rep.group.elements():
        target = _block_diagonal_target(irreps, basis, g)
        resid = np.linalg.norm(q @ rep.matrices[g] @ q.T - target)
        worst = max(worst, resid)
    if worst > tol:
        raise DecompositionError(f"block-diagonalization residual {worst:.2e} exceeds {tol:.1e}")


def isotypic_representation(
    irreps: list[RealIrrep], basis: IsotypicBasis
) -> GroupRepresentation:
    """The block-diagonal representation ``g -> direct_sum_k m_k copies of pi_k(g)``."""
    group = irreps[0].group
    mats = np.stack([_block_diagonal_target(irreps, basis, g) for g in group.elements()])
    return GroupRepresentation(group, basis.total_dim, mats)
