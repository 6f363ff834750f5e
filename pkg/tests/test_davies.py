import numpy as np
import pytest
import scipy.linalg as la

from qdlab.davies import (BohrSpectrum, GibbsState, JumpModel, dissipator, edge_spectrum, fourier_component,
                          lindbladian, rate_function, self_adjointness_defect, spectral_gap, top_spectrum)
from qdlab.operators import LocalOperator, elementary
from qdlab.suites import _gap, torus_generator


@pytest.fixture(scope="module")
def edge0(factory2):
    """Spectrum of the terms on edge 0 and the matching local Gibbs state at beta=1."""
    spec = edge_spectrum(factory2, 0)
    sup = next(iter(spec.projections.values())).support
    H = sum(lam * P.toarray() for lam, P in spec.projections.items())
    return spec, sup, H, GibbsState.of(LocalOperator(sup, 2, H), 1.0)


def test_fourier_components_sum_to_operator(factory2, edge0):
    spec, sup, H, _ = edge0
    Q = elementary(factory2.G, 0, "shift", 1).embed(sup).toarray()
    comps = {w: fourier_component(LocalOperator(sup, 2, Q), w, spec).toarray() for w in spec.frequencies}
    assert np.allclose(sum(comps.values()), Q, atol=1e-12)
    for w, X in comps.items():
        assert np.allclose(H @ X - X @ H, w * X, atol=1e-12)


def test_commuting_operator_has_only_zero_frequency(factory2, edge0):
    spec, sup, H, _ = edge0
    A = factory2.star(0).embed(sup)
    for w in spec.frequencies:
        X = fourier_component(A, w, spec).toarray()
        assert np.abs(X).max() <= 1e-12 if w != 0 else np.allclose(X, A.toarray())


def test_non_bohr_frequency_warns(edge0):
    spec, sup, _, _ = edge0
    Q = LocalOperator(sup, 2, np.eye(2 ** len(sup)))
    with pytest.warns(UserWarning):
        X = fourier_component(Q, 99, spec)
    assert np.abs(X.toarray()).max() == 0


def test_bohr_spectrum_from_operator_matches_projector_formula(edge0):
    spec, sup, H, _ = edge0
    other = BohrSpectrum.from_operator(LocalOperator(sup, 2, H))
    assert other.eigenvalues == spec.eigenvalues
    for lam in spec.eigenvalues:
        assert np.allclose(other.projections[lam].toarray(), spec.projections[lam].toarray(), atol=1e-10)


def test_dissipator_matches_eigenbasis_oracle(factory2, edge0, rng):
    spec, sup, H, _ = edge0
    beta = 1.0
    D = dissipator(factory2, 0, beta, JumpModel())
    w, v = la.eigh(H)
    E = np.rint(w)
    h = rate_function("sqrt_boltzmann", beta)
    O = rng.normal(size=(D.dim, D.dim)) + 1j * rng.normal(size=(D.dim, D.dim))
    ref = np.zeros_like(O)
    for kind in ("shift", "modulation"):
        Q = v.conj().T @ elementary(factory2.G, 0, kind, 1).embed(sup).toarray() @ v
        for om in set((E[:, None] - E[None, :]).ravel()):
            # the component lowering the energy by om carries rate h(om)
            X = np.where(E[:, None] - E[None, :] == -om, Q, 0)
            X = v @ X @ v.conj().T
            if np.abs(X).max() < 1e-14:
                continue
            ref += h(om) * (X.conj().T @ O @ X - 0.5 * (X.conj().T @ X @ O + O @ X.conj().T @ X))
    assert np.allclose(D.apply(O), ref, atol=1e-10)


def test_generator_is_unital_and_trace_preserving(factory2, rng):
    L = dissipator(factory2, 0, 1.0, JumpModel())
    assert np.abs(L.apply(np.eye(L.dim))).max() <= 1e-12
    rho = rng.normal(size=(L.dim, L.dim)) + 1j * rng.normal(size=(L.dim, L.dim))
    assert abs(np.trace(L.apply_dual(rho))) <= 1e-10


def test_assembled_matrix_matches_apply(factory2, rng):
    L = dissipator(factory2, 0, 1.0, JumpModel())
    M = L.assemble(cap=2**15)
    O = rng.normal(size=(L.dim, L.dim))
    assert np.allclose(M @ O.ravel(order="F"), L.apply(O).ravel(order="F"), atol=1e-12)
    # the Schrodinger picture is the Hilbert-Schmidt adjoint
    assert np.allclose(M.conj().T @ O.ravel(order="F"), L.apply_dual(O).ravel(order="F"), atol=1e-12)


@pytest.mark.parametrize("rates", ["sqrt_boltzmann", "glauber"])
def test_gibbs_state_is_fixed_and_generator_self_adjoint(factory2, edge0, rates):
    _, _, _, rho = edge0
    L = dissipator(factory2, 0, 1.0, JumpModel(rate_family=rates))
    assert np.abs(L.apply_dual(rho.matrix)).max() <= 1e-12
    for s in (1.0, 0.5):
        assert self_adjointness_defect(L, rho, s) <= 1e-10


def test_skewed_rates_break_detailed_balance(factory2, edge0):
    _, _, _, rho = edge0
    L = dissipator(factory2, 0, 1.0, JumpModel(rate_family="skewed"))
    assert self_adjointness_defect(L, rho, 1.0) > 1e-6
    assert JumpModel(rate_family="skewed").detailed_balance_defect(1.0, [-2, 2]) > 0.1
    assert JumpModel().detailed_balance_defect(1.0, [-2, 0, 2]) <= 1e-15


def test_single_edge_commutants(z2, z3):
    for G in (z2, z3):
        assert JumpModel().single_edge_commutant_dim(G) == 1
        assert JumpModel(jump_family="shift_only").single_edge_commutant_dim(G) == G.order
        assert JumpModel().is_adjoint_closed(G)


def test_unknown_families_are_rejected():
    with pytest.raises(ValueError):
        JumpModel(jump_family="bogus")
    with pytest.raises(ValueError):
        rate_function("bogus", 1.0)


def test_shift_only_generator_has_large_kernel():
    L, rho = torus_generator(2, (2,), 2**20, 1.0, "shift_only", "sqrt_boltzmann")
    top = top_spectrum(L, rho, 1.0, k=8, max_k=8)
    assert top.kernel_dim is not None and top.kernel_dim > 1


def test_lindbladian_sums_dissipators(factory2, rng):
    full = tuple(range(8))
    L = lindbladian(factory2, [0, 1], 1.0, support=full)
    D0 = dissipator(factory2, 0, 1.0, JumpModel(), full)
    D1 = dissipator(factory2, 1, 1.0, JumpModel(), full)
    O = rng.normal(size=(256, 256))
    assert np.allclose(L.apply(O), D0.apply(O) + D1.apply(O), atol=1e-12)


def full_torus_gap(beta=1.0):
    return _gap(2, (2,), 2**20, beta, "shift_modulation", "sqrt_boltzmann", 0, 1e-8)


def test_full_torus_gap_frozen(torus_beta1):
    L, rho = torus_beta1
    g = full_torus_gap()
    assert g.kernel_dim == 1 and g.residual <= 1e-8
    assert g.gap == pytest.approx(1.9233319737342367, rel=1e-8)
    assert np.abs(L.apply_dual(rho.matrix)).max() <= 1e-11
    assert self_adjointness_defect(L, rho, 1.0) <= 1e-10


def test_gap_does_not_depend_on_weight_exponent(torus_beta1):
    L, rho = torus_beta1
    g = spectral_gap(L, rho, s=0.5)
    assert g.gap == pytest.approx(full_torus_gap().gap, rel=1e-8)
