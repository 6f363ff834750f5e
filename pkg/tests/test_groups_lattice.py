import cmath

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qdlab.groups import (Character, GroupElement, GroupMismatchError, GroupSpec, dual_orthogonality_sum,
                          evaluate_character, multiply, orthogonality_sum)
from qdlab.lattice import GeometryError, Rectangle, TorusGeometry, all_rectangles


# -- groups -------------------------------------------------------------------

def test_product_group_multiplication():
    G = GroupSpec((2, 2))
    a = GroupElement.from_residues(G, (1, 0))
    b = GroupElement.from_residues(G, (1, 1))
    assert multiply(a, b).residues == (0, 1)


def test_cyclic_multiplication_wraps():
    G = GroupSpec.cyclic(3)
    two = GroupElement.from_residues(G, (2,))
    assert (two * two).residues == (1,)


@given(st.lists(st.integers(2, 5), min_size=1, max_size=3), st.data())
@settings(max_examples=40, deadline=None)
def test_identity_and_inverse_laws(orders, data):
    G = GroupSpec(tuple(orders))
    g = data.draw(st.integers(0, G.order - 1))
    el = G.elements()[g]
    assert (el * G.identity()).index == el.index
    assert (el * el.inverse()).is_identity


def test_cyclic_character_values():
    G3 = GroupSpec.cyclic(3)
    chi = G3.characters()[1]
    assert abs(evaluate_character(chi, G3.elements()[2]) - cmath.exp(4j * cmath.pi / 3)) < 1e-15
    G2 = GroupSpec.cyclic(2)
    assert evaluate_character(G2.characters()[1], G2.elements()[1]) == -1
    for g in G3.elements():
        assert evaluate_character(G3.trivial_character(), g) == 1


def test_character_orthogonality():
    Z4 = GroupSpec.cyclic(4)
    assert abs(orthogonality_sum(Z4.trivial_character()) - 1) < 1e-15
    assert abs(orthogonality_sum(Z4.characters()[1])) < 1e-15
    Z23 = GroupSpec((2, 3))
    chi = Character(Z23, Z23.index_of((1, 0)))
    assert abs(orthogonality_sum(chi)) < 1e-15
    assert abs(dual_orthogonality_sum(Z23.identity()) - 1) < 1e-15


@pytest.mark.parametrize("orders", [(2,), (3,), (4,), (2, 3), (2, 2)])
def test_character_table_is_unitary(orders):
    G = GroupSpec(orders)
    T = G.character_table / np.sqrt(G.order)
    assert np.allclose(T @ T.conj().T, np.eye(G.order), atol=1e-14)


def test_mismatched_groups_are_rejected():
    a = GroupSpec.cyclic(2).elements()[1]
    b = GroupSpec.cyclic(3).elements()[1]
    with pytest.raises(GroupMismatchError):
        multiply(a, b)


def test_invalid_group_orders():
    with pytest.raises(ValueError):
        GroupSpec((1,))
    with pytest.raises(ValueError):
        GroupSpec(())


# -- lattice ------------------------------------------------------------------

def test_edge_indexing_round_trip():
    T = TorusGeometry(4)
    for e in range(T.n_edges):
        x, y, axis = T.edge(e)
        assert T.edge_index(x, y, axis) == e


def test_star_orientation_convention():
    # star 0 at (0,0) on N=4: left arm h(3,0)=6 and lower arm v(0,3)=25 point away
    T = TorusGeometry(4)
    se = T.star_edges(0)
    assert se.plus == (6, 25)
    assert se.minus == (0, 1)
    for s in range(T.n_vertices):
        assert len(T.star_edges(s).all) == 4


def test_plaquette_orientation_matches_walk():
    T = TorusGeometry(4)
    pe = T.plaquette_edges(0)
    assert pe.plus == (8, 1) and pe.minus == (0, 3)
    for p in range(T.n_vertices):
        a = T.plaquette_edges(p)
        b = T.plaquette_edges_clockwise_start(p)
        assert sorted(a.plus) == list(b.plus) and sorted(a.minus) == list(b.minus)


def test_locality_of_stars_and_plaquettes():
    T = TorusGeometry(5)
    assert not set(T.star_edges(T.vertex_index(0, 0)).all) & set(T.star_edges(T.vertex_index(2, 0)).all)
    shared = set(T.plaquette_edges(T.vertex_index(0, 0)).all) & set(T.plaquette_edges(T.vertex_index(1, 0)).all)
    assert len(shared) == 1


def test_touching_sets_of_unit_square():
    T = TorusGeometry(4)
    R = Rectangle(T, (1, 1), (1, 1)).region
    stars, plaqs = T.touching_sets(R)
    assert (len(stars), len(plaqs)) == (4, 5)
    assert T.touching_sets(T.region([])) == (frozenset(), frozenset())
    s_all, p_all = T.touching_sets(T.full())
    assert len(s_all) == len(p_all) == 16


def test_rectangles_are_connected():
    T = TorusGeometry(4)
    for rc in all_rectangles(T, 12):
        s_ok, p_ok, comps = T.connectivity(rc.region)
        assert s_ok and p_ok and len(comps) == 1


def test_distant_rectangles_split_into_components():
    T = TorusGeometry(8)
    V = Rectangle(T, (0, 0), (1, 1)).region | Rectangle(T, (4, 4), (1, 1)).region
    assert len(T.connectivity(V)[2]) == 2
    single = T.region([0])
    assert T.connectivity(single)[:2] == (True, True)


def test_metrics():
    T = TorusGeometry(8)
    R = Rectangle(T, (0, 0), (1, 1)).region
    assert T.dist(R, R) == 0
    assert T.diam(R) == 1 and T.inner_diam(R) == 1
    # vertex boxes {0,1}^2 and {4,5}x{0,1}: horizontal gap of 3 steps
    R2 = Rectangle(T, (4, 0), (1, 1)).region
    assert T.dist(R, R2) == 3


def test_rectangle_length_validation():
    with pytest.raises(GeometryError):
        Rectangle(TorusGeometry(3), (0, 0), (3, 1))
    with pytest.raises(GeometryError):
        TorusGeometry(1)


def test_unit_square_on_smallest_torus_is_not_everything():
    T = TorusGeometry(2)
    R = Rectangle(T, (0, 0), (1, 1)).region
    assert R.edges == (0, 1, 3, 4)
