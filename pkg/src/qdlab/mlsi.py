"""Relative entropy, entropy production, MLSI estimates, mixing envelopes and the recursion ledger."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as la
import scipy.optimize as opt
from scipy.sparse.linalg import expm_multiply

from .davies import ConvergenceError, GibbsState, SuperOperatorHandle
from .reports import FAIL, PASS, VerificationReport

EIG_FLOOR = 1e-300
# below this relative entropy the ratio EP/(2D) is dominated by rounding in D
D_FLOOR = 1e-6
TRACE_TOL = 1e-12


class RankError(ValueError):
    """The reference state of a relative entropy is not full rank."""


def worker_count() -> int:
    return max(1, int(os.environ.get("QDLAB_WORKERS", "1")))


# ---------------------------------------------------------------------------
# states and matrix functions
# ---------------------------------------------------------------------------

@dataclass
class DensityState:
    """A density matrix with its spectral data."""

    matrix: np.ndarray
    evals: np.ndarray = field(init=False, repr=False)
    evecs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        M = np.asarray(self.matrix, dtype=complex)
        M = 0.5 * (M + M.conj().T)
        self.matrix = M
        self.evals, self.evecs = la.eigh(M)

    @classmethod
    def from_gibbs(cls, rho: GibbsState) -> "DensityState":
        return cls(rho.matrix)

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    @property
    def min_eigenvalue(self) -> float:
        return float(self.evals.min())

    @property
    def is_psd(self) -> bool:
        return self.min_eigenvalue >= -TRACE_TOL

    @property
    def is_unit_trace(self) -> bool:
        return abs(self.trace - 1.0) <= TRACE_TOL

    def is_full_rank(self, tol: float = 0.0) -> bool:
        return self.min_eigenvalue > tol

    def log(self) -> np.ndarray:
        w = np.log(np.clip(self.evals, EIG_FLOOR, None))
        return (self.evecs * w) @ self.evecs.conj().T


def _as_state(x) -> DensityState:
    if isinstance(x, DensityState):
        return x
    if isinstance(x, GibbsState):
        return DensityState.from_gibbs(x)
    return DensityState(x)


def random_density(dim: int, rng: np.random.Generator, columns: int | None = None) -> np.ndarray:
    """Normalized Wishart matrix X X^dag with X of shape (dim, columns), Gaussian.

    ``columns = dim`` (default) is the Ginibre ensemble; more columns give
    better-conditioned states, fewer give rank-deficient ones.
    """
    k = columns or dim
    X = rng.normal(size=(dim, k)) + 1j * rng.normal(size=(dim, k))
    S = X @ X.conj().T
    return S / np.trace(S).real


def trace_norm(X: np.ndarray) -> float:
    X = 0.5 * (X + X.conj().T)
    return float(np.abs(la.eigvalsh(X)).sum())


def relative_entropy(sigma, sigma_ref) -> float:
    """D(sigma || sigma_ref) = Tr sigma (ln sigma - ln sigma_ref), natural log."""
    a, b = _as_state(sigma), _as_state(sigma_ref)
    if not b.is_full_rank():
        raise RankError(f"reference state has minimal eigenvalue {b.min_eigenvalue:.3e}")
    val = float(np.trace(a.matrix @ (a.log() - b.log())).real)
    # rounding can push D(sigma||sigma) a few ulps below zero
    return max(val, 0.0)


# ---------------------------------------------------------------------------
# entropy production
# ---------------------------------------------------------------------------

def entropy_production(sigma, L: SuperOperatorHandle, rho) -> float:
    """-Tr(L^*(sigma) (ln sigma - ln rho)), the entropy production at sigma."""
    a, r = _as_state(sigma), _as_state(rho)
    Ls = L.apply_dual(a.matrix)
    return float(-np.trace(Ls @ (a.log() - r.log())).real)


def evolve(L: SuperOperatorHandle, sigma: np.ndarray, times: Sequence[float]) -> np.ndarray:
    """e^{t L^*}(sigma) for each t, via the assembled sparse generator."""
    dim = L.dim
    M = L.assemble(cap=max(2**17, dim**2)).conj().T.tocsr()
    v = np.asarray(sigma, dtype=complex).ravel(order="F")
    out = np.empty((len(times), dim, dim), dtype=complex)
    for k, t in enumerate(times):
        out[k] = expm_multiply(M * t, v).reshape(dim, dim, order="F")
    return out


def entropy_production_fd(sigma, L: SuperOperatorHandle, rho, h: float = 1e-5) -> float:
    """Central finite difference of -d/dt D(e^{tL^*} sigma || rho) at t=0."""
    a = _as_state(sigma)
    fwd, bwd = evolve(L, a.matrix, [h, -h])
    return -(relative_entropy(fwd, rho) - relative_entropy(bwd, rho)) / (2 * h)


# ---------------------------------------------------------------------------
# MLSI ratio and its gradient in the exponential parametrization
# ---------------------------------------------------------------------------

def _divided_differences(w: np.ndarray, f: Callable, fprime: Callable) -> np.ndarray:
    fw = f(w)
    dw = w[:, None] - w[None, :]
    close = np.abs(dw) <= 1e-12 * np.maximum(1.0, np.abs(w)[:, None])
    num = fw[:, None] - fw[None, :]
    safe = np.where(close, 1.0, dw)
    mid = 0.5 * (w[:, None] + w[None, :])
    return np.where(close, fprime(mid), num / safe)


def _frechet(V: np.ndarray, gamma: np.ndarray, E: np.ndarray) -> np.ndarray:
    """Frechet derivative of a spectral function in direction E (self-adjoint in HS)."""
    return V @ (gamma * (V.conj().T @ E @ V)) @ V.conj().T


class MLSIObjective:
    """EP(sigma)/(2 D(sigma||rho)) with sigma = e^A / Tr e^A, A Hermitian."""

    def __init__(self, L: SuperOperatorHandle, rho):
        self.L = L
        self.rho = _as_state(rho)
        if not self.rho.is_full_rank():
            raise RankError("fixed point is not full rank")
        self.log_rho = self.rho.log()
        self.dim = L.dim
        # one sparse matvec is much cheaper than summing the jump terms
        self._M = L.assemble(cap=max(2**17, L.dim**2))
        self._Md = self._M.conj().T.tocsr()

    def _heis(self, X: np.ndarray) -> np.ndarray:
        return (self._M @ X.ravel(order="F")).reshape(X.shape, order="F")

    def _schr(self, X: np.ndarray) -> np.ndarray:
        return (self._Md @ X.ravel(order="F")).reshape(X.shape, order="F")

    def state(self, A: np.ndarray) -> np.ndarray:
        w, V = la.eigh(0.5 * (A + A.conj().T))
        p = np.exp(w - w.max())
        return (V * (p / p.sum())) @ V.conj().T

    def parts(self, A: np.ndarray) -> dict:
        A = 0.5 * (A + A.conj().T)
        w, V = la.eigh(A)
        shift = w.max()
        e = np.exp(w - shift)
        Z = e.sum()
        p = e / Z
        sigma = (V * p) @ V.conj().T
        log_sigma = (V * (w - shift - math.log(Z))) @ V.conj().T
        delta = log_sigma - self.log_rho
        D = float(np.trace(sigma @ delta).real)
        Ls = self._schr(sigma)
        EP = float(-np.trace(Ls @ delta).real)
        return dict(w=w, V=V, shift=shift, Z=Z, p=p, sigma=sigma, delta=delta, D=D, EP=EP, Ls=Ls)

    def value(self, A: np.ndarray) -> float:
        q = self.parts(A)
        return q["EP"] / (2 * q["D"])

    def value_and_grad(self, A: np.ndarray) -> tuple[float, np.ndarray]:
        with np.errstate(all="ignore"):
            f, g = self._value_and_grad(A)
        if not (math.isfinite(f) and np.all(np.isfinite(g))):
            return math.inf, np.zeros_like(A)
        return f, g

    def _value_and_grad(self, A: np.ndarray) -> tuple[float, np.ndarray]:
        q = self.parts(A)
        D, EP = q["D"], q["EP"]
        if not D >= D_FLOOR:
            return math.inf, np.zeros_like(A)
        f = EP / (2 * D)
        V, p, w = q["V"], q["p"], q["w"]
        g_D = q["delta"]
        log_dd = _divided_differences(p, lambda x: np.log(np.clip(x, EIG_FLOOR, None)), lambda x: 1 / x)
        g_EP = -self._heis(q["delta"]) - _frechet(V, log_dd, q["Ls"])
        g_sigma = (g_EP - 2 * f * g_D) / (2 * D)
        g_sigma = 0.5 * (g_sigma + g_sigma.conj().T)
        c = np.trace(g_sigma @ q["sigma"]).real
        exp_dd = _divided_differences(w - q["shift"], np.exp, np.exp)
        g_A = _frechet(V, exp_dd, g_sigma - c * np.eye(self.dim)) / q["Z"]
        return f, 0.5 * (g_A + g_A.conj().T)


def _pack(A: np.ndarray) -> np.ndarray:
    return np.concatenate([A.real.ravel(), A.imag.ravel()])


def _unpack(x: np.ndarray, dim: int) -> np.ndarray:
    n = dim * dim
    return (x[:n] + 1j * x[n:]).reshape(dim, dim)


@dataclass
class MLSIEstimate:
    """Smallest ratio found; an upper bound on the MLSI constant, not a certificate."""

    alpha_upper: float
    best_state: np.ndarray
    best_log: np.ndarray
    entropy_production: float
    relative_entropy: float
    restart_values: list[float]
    n_diverged: int
    label: str = "estimate"


def _local_search(obj: MLSIObjective, A0: np.ndarray, maxiter: int, gtol: float):
    dim = obj.dim

    def fun(x):
        f, g = obj.value_and_grad(_unpack(x, dim))
        return f, _pack(g)

    res = opt.minimize(fun, _pack(A0), jac=True, method="L-BFGS-B",
                       options=dict(maxiter=maxiter, gtol=gtol, ftol=1e-15))
    A = _unpack(res.x, dim)
    return float(res.fun), 0.5 * (A + A.conj().T)


def mlsi_estimate(L: SuperOperatorHandle, rho, restarts: int = 32, seed: int = 0,
                  maxiter: int = 200, gtol: float = 1e-10, scale: float | Sequence[float] = (3.0, 0.05),
                  initial: np.ndarray | None = None) -> MLSIEstimate:
    """Minimize EP/(2D) by quasi-Newton descent from seeded random log-states.

    Restart k starts from ln(rho) + scale[k % len(scale)] * (random Hermitian).
    Far starts explore states with large relative entropy; near starts let the
    search reach the linearized regime, where the ratio tends to the spectral
    gap. With ``initial`` (a log-state) a single local search starts there.
    """
    scales = [float(scale)] if np.isscalar(scale) else [float(x) for x in scale]
    obj = MLSIObjective(L, rho)
    dim = obj.dim
    if initial is not None:
        starts = [np.asarray(initial, dtype=complex)]
    else:
        ss = np.random.SeedSequence(seed)
        starts = []
        for k, child in enumerate(ss.spawn(restarts)):
            rng = np.random.default_rng(child)
            H = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
            H = (H + H.conj().T) / (2 * math.sqrt(2 * dim))
            starts.append(obj.log_rho + scales[k % len(scales)] * H)
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        results = list(pool.map(lambda A: _local_search(obj, A, maxiter, gtol), starts))
    values = [v for v, _ in results]
    finite = [i for i, v in enumerate(values) if math.isfinite(v) and v >= -1e-12]
    if not finite:
        raise ConvergenceError(f"all {len(starts)} restarts diverged: {values}", math.nan)
    best = min(finite, key=lambda i: (values[i], i))
    A = results[best][1]
    q = obj.parts(A)
    return MLSIEstimate(max(values[best], 0.0), q["sigma"], A, q["EP"], q["D"], values,
                        len(starts) - len(finite))


# ---------------------------------------------------------------------------
# mixing envelopes
# ---------------------------------------------------------------------------

@dataclass
class DecayCurves:
    times: np.ndarray
    distances: np.ndarray  # (n_states, n_times)
    gap_envelope: np.ndarray
    mlsi_envelope: np.ndarray

    @property
    def worst(self) -> np.ndarray:
        return self.distances.max(axis=0)

    def rows(self):
        for t, d, g, m in zip(self.times, self.worst, self.gap_envelope, self.mlsi_envelope):
            yield (float(t), float(d), float(g), float(m))


def gap_envelope(t, gap: float, rho_min: float):
    return np.exp(-np.asarray(t) * gap) * math.sqrt(1.0 / rho_min)


def mlsi_envelope(t, alpha: float, rho_min: float):
    return np.exp(-np.asarray(t) * alpha) * math.sqrt(math.log(1.0 / rho_min))


def mixing_time_from_curve(times, curve, eps: float = 0.01) -> float:
    """First grid time at which the curve is at most eps (inf if never)."""
    idx = np.nonzero(np.asarray(curve) <= eps)[0]
    return float(times[idx[0]]) if idx.size else math.inf


def mixing_bounds(L: SuperOperatorHandle, rho: GibbsState, gap: float, rho_min: float | None = None,
                  alpha: float | None = None, n_states: int = 20, n_times: int = 20,
                  t_max: float | None = None, eps: float = 0.01, seed: int = 0,
                  monotone_tol: float = 1e-12) -> tuple[VerificationReport, DecayCurves]:
    """Trace-distance decay of random initial states against the gap envelope.

    The MLSI envelope is evaluated with ``alpha`` (typically an upper estimate)
    and reported as indicative only; it does not enter the pass/fail status.
    """
    rho_mat = rho.matrix
    rho_min = rho.min_eigenvalue if rho_min is None else rho_min
    dim = L.dim
    t_pred = math.log(math.sqrt(1.0 / rho_min) / eps) / gap
    if t_max is None:
        t_max = 1.25 * t_pred
    times = np.linspace(0.0, t_max, n_times)
    rng = np.random.default_rng(seed)
    sigmas = np.stack([random_density(dim, rng) for _ in range(n_states)], axis=-1)
    M = L.assemble(cap=max(2**17, dim**2)).conj().T.tocsr()
    B = sigmas.reshape(dim * dim, n_states, order="F")
    traj = expm_multiply(M, B, start=0.0, stop=t_max, num=n_times, endpoint=True)
    dist = np.empty((n_states, n_times))
    for k in range(n_times):
        for j in range(n_states):
            S = traj[k][:, j].reshape(dim, dim, order="F")
            dist[j, k] = trace_norm(S - rho_mat)
    g_env = gap_envelope(times, gap, rho_min)
    a = alpha if alpha is not None else 0.0
    m_env = mlsi_envelope(times, a, rho_min)
    curves = DecayCurves(times, dist, g_env, m_env)
    below = float((dist - g_env[None, :]).max())
    steps = np.diff(dist, axis=1)
    rise = float(steps.max())
    t_curve = mixing_time_from_curve(times, curves.worst, eps)
    ok = below <= 0 and rise <= monotone_tol and t_curve <= t_pred and float(dist[:, 0].max()) <= 2 + 1e-12
    report = VerificationReport(
        "mixing_envelope", PASS if ok else FAIL, beta=rho.beta,
        metrics=dict(gap=gap, rho_min=rho_min, max_excess_over_gap_envelope=below,
                     max_increase=rise, t_mix_curve=t_curve, t_mix_gap_envelope=t_pred,
                     initial_max_distance=float(dist[:, 0].max()), alpha_proxy=alpha,
                     mlsi_envelope_status="indicative" if alpha is not None else "not evaluated",
                     n_states=n_states, n_times=n_times),
        notes="MLSI envelope uses an upper estimate of alpha and is not certified",
    )
    return report, curves


# ---------------------------------------------------------------------------
# multiscale recursion
# ---------------------------------------------------------------------------

THRESHOLD = 1.0 / 28.0
STEP_CONSTANT = 24.0
CLOSED_FORM_CONSTANT = 120.0


def doubling_factor(L: float) -> float:
    return 1.0 / (1.0 + STEP_CONSTANT / np.cbrt(L))


def closed_form_factor(L0: float) -> float:
    return math.exp(-CLOSED_FORM_CONSTANT / np.cbrt(L0))


def minimal_scale(K: float, xi: float, threshold: float = THRESHOLD) -> int:
    """Smallest integer L with K e^{-xi sqrt(L)} < threshold."""
    root = math.log(K / threshold) / xi
    L = max(1, int(math.floor(root * root)))
    while K * math.exp(-xi * math.sqrt(L)) >= threshold:
        L += 1
    while L > 1 and K * math.exp(-xi * math.sqrt(L - 1)) < threshold:
        L -= 1
    return L


@dataclass
class RecursionLedger:
    L0: float
    threshold: float
    scales: list[float]
    factors: list[float]
    accumulated: list[float]
    closed_form: float

    @property
    def holds(self) -> bool:
        return all(a >= self.closed_form for a in self.accumulated)

    @property
    def monotone(self) -> bool:
        return all(b <= a for a, b in zip(self.accumulated, self.accumulated[1:]))


def recursion_calculator(L0: float, horizon: int = 30) -> RecursionLedger:
    """Telescoped product of the doubling factors from L0 over ``horizon`` doublings."""
    scales = [L0 * 2.0**k for k in range(horizon)]
    factors = [doubling_factor(L) for L in scales]
    acc = list(np.cumprod(factors)) if factors else []
    return RecursionLedger(L0, THRESHOLD, scales, factors, [float(a) for a in acc],
                           closed_form_factor(L0))


def recursion_check(K: float, xi: float, L0_values: Sequence[float] = (64, 125, 1000),
                    horizon: int = 30, beta: float | None = None) -> VerificationReport:
    L_min = minimal_scale(K, xi)
    threshold_value = K * math.exp(-xi * math.sqrt(L_min))
    ledgers = {L0: recursion_calculator(L0, horizon) for L0 in L0_values}
    slack = {str(L0): led.accumulated[-1] - led.closed_form for L0, led in ledgers.items()}
    ok = threshold_value < THRESHOLD and all(l.holds and l.monotone for l in ledgers.values())
    return VerificationReport(
        "recursion_ledger", PASS if ok else FAIL, beta=beta,
        metrics=dict(K=K, xi=xi, L0_min=L_min, threshold_value=threshold_value,
                     min_slack=min(slack.values()), slack=slack,
                     closed_form={str(k): v.closed_form for k, v in ledgers.items()},
                     final_product={str(k): v.accumulated[-1] for k, v in ledgers.items()}),
    )
