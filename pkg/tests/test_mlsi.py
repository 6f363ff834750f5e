import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from qdlab.davies import GibbsState, JumpTerm, SuperOperatorHandle, spectral_gap
from qdlab.gibbs import DSConstants
from qdlab.mlsi import (THRESHOLD, DensityState, MLSIObjective, RankError, _pack, _unpack, closed_form_factor,
                        doubling_factor, entropy_production, entropy_production_fd, evolve, minimal_scale,
                        mixing_bounds, mlsi_estimate, random_density, recursion_calculator, recursion_check,
                        relative_entropy, trace_norm)
from qdlab.operators import LocalOperator


def qubit_generator(beta):
    """Thermal qubit: lowering |0><1| at rate e^{beta/2}, raising at e^{-beta/2}."""
    lower = sp.csr_matrix(np.array([[0, 1], [0, 0]], dtype=complex))
    terms = [JumpTerm(0, "lower", 1, math.exp(beta / 2), lower),
             JumpTerm(0, "raise", -1, math.exp(-beta / 2), lower.T.tocsr())]
    L = SuperOperatorHandle((0,), 2, terms)
    rho = GibbsState.of(LocalOperator((0,), 2, np.diag([-0.5, 0.5])), beta)
    return L, rho


@pytest.fixture(scope="module")
def qubit():
    return qubit_generator(1.0)


# -- states and entropies -------------------------------------------------------

def test_density_state_checks(rng):
    s = DensityState(random_density(4, rng))
    assert s.is_psd and s.is_unit_trace and s.is_full_rank()
    low = DensityState(random_density(4, rng, columns=2))
    assert not low.is_full_rank(1e-12)


def test_relative_entropy_basic(rng):
    a, b = random_density(5, rng), random_density(5, rng)
    assert relative_entropy(a, a) == 0.0
    assert relative_entropy(a, b) > 0
    # commuting states reduce to the classical formula
    p, q = np.array([0.2, 0.8]), np.array([0.5, 0.5])
    assert relative_entropy(np.diag(p), np.diag(q)) == pytest.approx(float(np.sum(p * np.log(p / q))))
    with pytest.raises(RankError):
        relative_entropy(a, np.diag([1.0, 0, 0, 0, 0]))


def test_trace_norm():
    assert trace_norm(np.diag([0.5, -0.5])) == pytest.approx(1.0)


# -- qubit generator: exact gap and entropy production ---------------------------

@pytest.mark.parametrize("beta", [0.0, 0.5, 2.0])
def test_qubit_gap_is_exact(beta):
    L, rho = qubit_generator(beta)
    assert np.abs(L.apply_dual(rho.matrix)).max() <= 1e-15
    # coherences relax at cosh(beta/2), populations twice as fast
    assert spectral_gap(L, rho).gap == pytest.approx(math.cosh(beta / 2), rel=1e-12)


def test_entropy_production_matches_finite_difference(qubit, rng):
    L, rho = qubit
    for _ in range(3):
        sigma = random_density(2, rng, columns=4)
        ep = entropy_production(sigma, L, rho)
        assert ep >= 0
        assert ep == pytest.approx(entropy_production_fd(sigma, L, rho), rel=1e-6)


def test_entropy_production_on_torus_matches_finite_difference(torus_beta1):
    L, rho = torus_beta1
    sigma = random_density(L.dim, np.random.default_rng(7), columns=2 * L.dim)
    ep = entropy_production(sigma, L, rho)
    assert ep > 0
    assert ep == pytest.approx(entropy_production_fd(sigma, L, rho), rel=1e-5)


def test_evolution_preserves_states_and_reaches_gibbs(qubit, rng):
    L, rho = qubit
    sigma = random_density(2, rng)
    out = evolve(L, sigma, [0.0, 1.0, 40.0])
    assert np.allclose(out[0], sigma)
    assert np.trace(out[1]).real == pytest.approx(1.0)
    assert trace_norm(out[2] - rho.matrix) <= 1e-12


# -- MLSI objective ----------------------------------------------------------------

@given(st.integers(0, 2**16))
@settings(max_examples=10, deadline=None)
def test_gradient_matches_finite_difference(seed):
    L, rho = qubit_generator(1.0)
    obj = MLSIObjective(L, rho)
    rng = np.random.default_rng(seed)
    H = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    A = obj.log_rho + (H + H.conj().T)
    _, g = obj.value_and_grad(A)
    x = _pack(A)
    d = rng.normal(size=x.size)
    h = 1e-6
    fd = (obj.value(_unpack(x + h * d, 2)) - obj.value(_unpack(x - h * d, 2))) / (2 * h)
    assert np.dot(_pack(g), d) == pytest.approx(fd, rel=1e-5, abs=1e-8)


def test_objective_is_half_entropy_production_ratio(qubit, rng):
    L, rho = qubit
    obj = MLSIObjective(L, rho)
    A = obj.log_rho + np.diag([0.3, -0.3])
    sigma = obj.state(A)
    ratio = entropy_production(sigma, L, rho) / (2 * relative_entropy(sigma, rho))
    assert obj.value(A) == pytest.approx(ratio, rel=1e-10)


def test_ratio_near_equilibrium_tends_to_gap(qubit):
    L, rho = qubit
    obj = MLSIObjective(L, rho)
    coherence = np.array([[0, 1], [1, 0]], dtype=complex)
    assert obj.value(obj.log_rho + 1e-4 * coherence) == pytest.approx(math.cosh(0.5), rel=1e-6)


def test_mlsi_estimate_on_qubit(qubit):
    L, rho = qubit
    est = mlsi_estimate(L, rho, restarts=6, seed=3)
    gap = math.cosh(0.5)
    assert est.label == "estimate" and est.n_diverged == 0
    assert 0 < est.alpha_upper <= gap * (1 + 1e-6)
    assert est.alpha_upper == min(est.restart_values)
    assert est.entropy_production == pytest.approx(2 * est.alpha_upper * est.relative_entropy, rel=1e-8)


def test_mlsi_estimate_is_deterministic(qubit):
    L, rho = qubit
    a = mlsi_estimate(L, rho, restarts=3, seed=11)
    b = mlsi_estimate(L, rho, restarts=3, seed=11)
    assert a.restart_values == b.restart_values


# -- mixing envelopes --------------------------------------------------------------

def test_mixing_envelope_on_qubit(qubit):
    L, rho = qubit
    report, curves = mixing_bounds(L, rho, math.cosh(0.5), n_states=10, n_times=15)
    assert report.status == "PASS"
    assert curves.distances.shape == (10, 15)
    assert np.all(curves.worst <= curves.gap_envelope)
    assert report.metrics["t_mix_curve"] <= report.metrics["t_mix_gap_envelope"]


def test_mixing_envelope_detects_wrong_gap(qubit):
    L, rho = qubit
    report, _ = mixing_bounds(L, rho, 50.0, n_states=5, n_times=15, t_max=2.0)
    assert report.status == "FAIL"


# -- recursion ----------------------------------------------------------------------

def test_recursion_factors():
    assert doubling_factor(64) == pytest.approx(1 / 7)
    assert closed_form_factor(1000) == pytest.approx(math.exp(-12))


def test_recursion_ledger_holds_and_is_monotone():
    for L0 in (64, 125, 1000):
        led = recursion_calculator(L0, 30)
        assert led.holds and led.monotone
        assert led.accumulated[-1] == pytest.approx(np.prod(led.factors))


def test_minimal_scale_is_tight():
    c = DSConstants(1.0, 2)
    L = minimal_scale(c.K, c.xi)
    assert c.K * math.exp(-c.xi * math.sqrt(L)) < THRESHOLD
    assert c.K * math.exp(-c.xi * math.sqrt(L - 1)) >= THRESHOLD


def test_recursion_check_report():
    c = DSConstants(1.0, 2)
    r = recursion_check(c.K, c.xi, beta=1.0)
    assert r.status == "PASS" and r.metrics["min_slack"] > 0


def test_best_state_reproduces_value(qubit):
    L, rho = qubit
    est = mlsi_estimate(L, rho, restarts=4, seed=2)
    assert MLSIObjective(L, rho).value(est.best_log) == pytest.approx(est.alpha_upper, abs=1e-8)
    assert mlsi_estimate(L, rho, restarts=4, seed=2).alpha_upper == est.alpha_upper
    # the search never enters the region where rounding in D dominates the ratio
    assert est.relative_entropy >= 1e-6
