import numpy as np
import pytest
import scipy.linalg as la
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from qdlab.groups import GroupSpec
from qdlab.lattice import Rectangle, TorusGeometry
from qdlab.operators import (HilbertIndexer, LocalOperator, OperatorFactory, ResourceError, SupportError,
                             commutant_basis, commutator, dump_operator, elementary, is_psd, load_operator,
                             modulation_matrix, op_norm, partial_trace, shift_matrix)


def test_z2_elementary_matrices_are_paulis(z2):
    assert np.array_equal(shift_matrix(z2, 1).toarray(), [[0, 1], [1, 0]])
    assert np.array_equal(modulation_matrix(z2, 1).toarray(), np.diag([1, -1]))


@pytest.mark.parametrize("orders", [(2,), (3,), (2, 2), (4,)])
def test_modulation_shift_relation(orders):
    G = GroupSpec(orders)
    for g in range(G.order):
        for c in range(G.order):
            L, M = shift_matrix(G, g).toarray(), modulation_matrix(G, c).toarray()
            assert np.allclose(M @ L, G.character_table[c, g] * L @ M, atol=1e-14)
        assert np.trace(shift_matrix(G, g).toarray()) == (G.order if g == 0 else 0)


def test_elementary_operator_support(z3):
    op = elementary(z3, 5, "shift", 1)
    assert op.support == (5,) and op.dim == 3


def test_indexer_round_trip():
    ix = HilbertIndexer((3, 7, 9), 3)
    for i in range(ix.total_dim):
        assert ix.index(ix.config(i)) == i
    # first support edge is the most significant digit
    assert ix.index((1, 0, 0)) == 9


@pytest.fixture(scope="module")
def fac33():
    return OperatorFactory(TorusGeometry(3), GroupSpec.cyclic(3))


def test_star_projector_identities(fac33):
    G = fac33.G
    s = 4
    assert np.allclose(fac33.star_group(s, 0).toarray(), np.eye(3**4))
    P = [fac33.star_character(s, c).toarray() for c in range(G.order)]
    for i in range(G.order):
        for j in range(G.order):
            target = P[i] if i == j else 0 * P[i]
            assert np.abs(P[i] @ P[j] - target).max() <= 1e-12
    assert np.abs(sum(P) - np.eye(P[0].shape[0])).max() <= 1e-12
    A = fac33.star(s).toarray()
    assert np.abs(A @ A - A).max() <= 1e-12


def test_group_and_character_laws(fac33):
    G = fac33.G
    for g in range(G.order):
        for h in range(G.order):
            lhs = (fac33.star_group(0, g) @ fac33.star_group(0, h)).toarray()
            assert np.abs(lhs - fac33.star_group(0, int(G.mul_table[g, h])).toarray()).max() <= 1e-12
            lhs = (fac33.plaquette_character(0, g) @ fac33.plaquette_character(0, h)).toarray()
            assert np.abs(lhs - fac33.plaquette_character(0, int(G.mul_table[g, h])).toarray()).max() <= 1e-12
        adj = fac33.star_group(0, g).dag().toarray()
        assert np.abs(adj - fac33.star_group(0, int(G.inv_table[g])).toarray()).max() == 0


def test_plaquette_forms_agree(fac33):
    for p in range(fac33.torus.n_vertices):
        a = fac33.plaquette(p)
        b = fac33.plaquette_delta_form(p).embed(a.support)
        assert np.abs(a.toarray() - b.toarray()).max() <= 1e-12
    assert np.allclose(fac33.plaquette_character(0, 0).toarray(), np.eye(81))


def test_all_generalized_projectors_commute():
    for q in (2, 3):
        fac = OperatorFactory(TorusGeometry(3), GroupSpec.cyclic(q))
        supp = tuple(range(fac.torus.n_edges))
        ops = []
        for v in range(fac.torus.n_vertices):
            for k in range(q):
                ops += [fac.star_group(v, k), fac.star_character(v, k),
                        fac.plaquette_group(v, k), fac.plaquette_character(v, k)]
        # adjacent terms are the only ones that can fail to commute
        for i, a in enumerate(ops):
            for b in ops[i + 1:]:
                if set(a.support) & set(b.support):
                    c = commutator(a, b).tocsr()
                    assert (abs(c).max() if c.nnz else 0.0) <= 1e-12
        assert len(supp) == 18


def test_hamiltonian_spectrum_on_smallest_torus(factory2):
    H = factory2.hamiltonian(factory2.torus.full()).toarray()
    w = la.eigvalsh(H)
    assert np.allclose(w, np.round(w), atol=1e-10)
    vals, counts = np.unique(np.round(w).astype(int), return_counts=True)
    # frozen from syndrome counting: stars and plaquettes each contribute 0, 2 or 4 violations
    assert vals.tolist() == [-8, -6, -4, -2, 0]
    assert counts.tolist() == [4, 48, 152, 48, 4]


def test_hamiltonians_commute(factory2, unit_square2):
    full = tuple(range(8))
    H1 = factory2.hamiltonian(unit_square2, support=full)
    H2 = factory2.hamiltonian(factory2.torus.region([2, 5]), support=full)
    assert op_norm(commutator(H1, H2)) <= 1e-12
    A = factory2.star(0).toarray()
    assert np.allclose(sorted(set(np.round(la.eigvalsh(-A), 12))), [-1, 0])


def test_partial_trace_of_star():
    fac = OperatorFactory(TorusGeometry(4), GroupSpec.cyclic(3))
    A = fac.star(5)
    R = Rectangle(fac.torus, (1, 1), (1, 1)).region
    amb = fac.torus.collar(R).edges
    d_R = 3 ** len(R)
    # overlapping: Tr_R A_s = d_R / |G| on the rest of the star
    t = partial_trace(A, R.edges, ambient=amb)
    assert np.allclose(t.toarray(), d_R / 3 * np.eye(t.dim))
    far = fac.torus.region([fac.torus.edge_index(3, 3, 0)])
    t2 = partial_trace(A, far.edges)
    assert np.allclose(t2.toarray(), 3 * A.toarray())
    one = LocalOperator.identity(R.edges, 3)
    assert np.allclose(partial_trace(one, R.edges).toarray(), d_R)


def test_partial_trace_outside_ambient_is_rejected(factory2):
    A = factory2.star(0)
    with pytest.raises(SupportError):
        partial_trace(A, [7], ambient=A.support)


def test_partial_trace_dense_and_sparse_agree(rng):
    X = rng.normal(size=(27, 27)) + 1j * rng.normal(size=(27, 27))
    dense = LocalOperator((1, 4, 6), 3, X)
    sparse = LocalOperator((1, 4, 6), 3, sp.csr_matrix(X))
    a = partial_trace(dense, [4]).toarray()
    b = partial_trace(sparse, [4]).toarray()
    ref = np.einsum("abcdbf->acdf", X.reshape((3,) * 6)).reshape(9, 9)
    assert np.allclose(a, b) and np.allclose(a, ref)


def test_commutant_of_full_algebra_and_empty_set():
    dim = 3
    basis = np.eye(dim * dim, dtype=complex)
    units = []
    for i in range(dim):
        for j in range(dim):
            E = np.zeros((dim, dim))
            E[i, j] = 1
            units.append(E)
    assert commutant_basis(units, basis, dim).shape[1] == 1
    assert commutant_basis([], basis, dim).shape[1] == dim * dim


def test_star_commutant_dimension_matches_pinching_rank(z2):
    fac = OperatorFactory(TorusGeometry(3), z2)
    P = [fac.star_character(0, c).toarray() for c in range(2)]
    dim = P[0].shape[0]
    basis = np.eye(dim * dim, dtype=complex)
    com = commutant_basis(P, basis, dim)
    # the pinching O -> sum_chi P O P is a projector; its rank is sum rank(P)^2
    pinch_rank = sum(int(round(np.trace(p).real)) ** 2 for p in P)
    assert com.shape[1] == pinch_rank == 128


def test_psd_test_reports_minimum():
    ok, lam = is_psd(np.diag([1.0, 0.0, -1e-3]))
    assert not ok and lam == pytest.approx(-1e-3)


def test_dimension_cap_raises():
    fac = OperatorFactory(TorusGeometry(4), GroupSpec.cyclic(3), dim_cap=3**10)
    with pytest.raises(ResourceError) as exc:
        fac.hamiltonian(fac.torus.full())
    assert exc.value.required == 3**32


@given(st.integers(0, 2**16))
@settings(max_examples=10, deadline=None)
def test_dump_load_round_trip(seed):
    rng = np.random.default_rng(seed)
    X = sp.random(9, 9, density=0.3, random_state=seed) + 1j * sp.random(9, 9, density=0.3, random_state=seed + 1)
    op = LocalOperator((2, 5), 3, X.tocsr())
    back = load_operator(dump_operator(op))
    assert back.support == op.support
    assert np.abs(back.toarray() - op.toarray()).max() <= 1e-15 * (1 + rng.random())


def test_embedding_is_tensor_with_identity(rng):
    X = rng.normal(size=(2, 2))
    op = LocalOperator((3,), 2, X)
    big = op.embed((1, 3, 6)).toarray()
    assert np.allclose(big, np.kron(np.kron(np.eye(2), X), np.eye(2)))
