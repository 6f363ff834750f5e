"""Davies generators for commuting star/plaquette Hamiltonians.

Vectorization is column-stacking throughout: vec(A X B) = (B^T kron A) vec(X).

Jump components are paired with rates so that ``h(omega)`` is the rate of the
energy-lowering part ``S_omega`` that removes energy ``omega`` (Schrodinger
picture ``S_omega rho S_omega^dag``). With this pairing the relation
h(-omega) = h(omega) exp(-beta omega) makes exp(-beta H) the fixed point.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, eigsh

from .groups import GroupSpec
from .lattice import Region, TorusGeometry
from .operators import (
    DEFAULT_DIM_CAP,
    LocalOperator,
    OperatorFactory,
    ResourceError,
    gap_rank,
    hs_orthonormalize,
    modulation_matrix,
    shift_matrix,
)

SNAP_TOL = 1e-9


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


# ---------------------------------------------------------------------------
# Bohr spectra
# ---------------------------------------------------------------------------

@dataclass
class BohrSpectrum:
    """Spectral projections of a Hamiltonian, keyed by snapped eigenvalue."""

    projections: dict[int, LocalOperator]

    @property
    def eigenvalues(self) -> list[int]:
        return sorted(self.projections)

    @property
    def frequencies(self) -> list[int]:
        ev = self.eigenvalues
        return sorted({a - b for a in ev for b in ev})

    @classmethod
    def from_operator(cls, H: LocalOperator, tol: float = SNAP_TOL) -> "BohrSpectrum":
        w, v = la.eigh(H.toarray())
        snapped = np.rint(w)
        if np.abs(w - snapped).max(initial=0.0) > tol:
            raise ValueError("spectrum is not integral within the snapping tolerance")
        out = {}
        for lam in np.unique(snapped):
            cols = v[:, snapped == lam]
            out[int(lam)] = LocalOperator(H.support, H.d, cols @ cols.conj().T)
        return cls(out)

    @classmethod
    def from_commuting_projectors(cls, terms: Sequence[LocalOperator]) -> "BohrSpectrum":
        """Spectrum of -sum(terms) for commuting projections.

        The projection onto eigenvalue -k is the sum over k-subsets T of
        prod_{t in T} t prod_{t not in T} (1 - t).
        """
        support = tuple(sorted(set().union(*[t.support for t in terms])))
        d = terms[0].d
        ts = [t.embed(support).tocsr() for t in terms]
        eye = sp.identity(d ** len(support), dtype=complex, format="csr")
        out: dict[int, sp.csr_matrix] = {}
        for mask in itertools.product((0, 1), repeat=len(ts)):
            m = eye
            for bit, t in zip(mask, ts):
                m = m @ (t if bit else eye - t)
            m = m.tocsr()
            m.data[np.abs(m.data) < 1e-14] = 0
            m.eliminate_zeros()
            if m.nnz == 0:
                continue
            k = -sum(mask)
            out[k] = out[k] + m if k in out else m
        return cls({k: LocalOperator(support, d, m.tocsr()) for k, m in out.items()})


def fourier_component(Q: LocalOperator, omega: int, spectrum: BohrSpectrum) -> LocalOperator:
    """Q(omega) = sum_{lam - lam' = omega} P_lam Q P_lam'."""
    omega = int(round(omega))
    if omega not in spectrum.frequencies:
        warnings.warn(f"frequency {omega} is not a Bohr frequency; returning zero", stacklevel=2)
        return Q * 0.0
    acc = None
    for lam in spectrum.eigenvalues:
        lp = lam - omega
        if lp not in spectrum.projections:
            continue
        term = spectrum.projections[lam] @ Q @ spectrum.projections[lp]
        acc = term if acc is None else acc + term
    return acc


# ---------------------------------------------------------------------------
# jump and rate families
# ---------------------------------------------------------------------------

def rate_function(name: str, beta: float) -> Callable[[float], float]:
    """Rate families; all except 'skewed' and 'constant' satisfy detailed balance."""
    if name == "sqrt_boltzmann":
        return lambda w: float(np.exp(beta * w / 2))
    if name == "glauber":
        return lambda w: float(2.0 / (1.0 + np.exp(-beta * w)))
    if name == "constant":
        return lambda w: 1.0
    if name == "skewed":
        # breaks h(-w) = h(w) exp(-beta w) whenever beta > 0 or w != 0
        return lambda w: float(np.exp(beta * w / 2) * (1.5 if w > 0 else 1.0))
    raise ValueError(f"unknown rate family {name!r}")


RATE_FAMILIES = ("sqrt_boltzmann", "glauber", "constant", "skewed")
JUMP_FAMILIES = ("shift_modulation", "shift_only", "modulation_only")


@dataclass(frozen=True)
class JumpModel:
    jump_family: str = "shift_modulation"
    rate_family: str = "sqrt_boltzmann"

    def __post_init__(self):
        if self.jump_family not in JUMP_FAMILIES:
            raise ValueError(f"unknown jump family {self.jump_family!r}")
        if self.rate_family not in RATE_FAMILIES:
            raise ValueError(f"unknown rate family {self.rate_family!r}")

    def single_edge_jumps(self, G: GroupSpec) -> list[tuple[str, int, sp.csr_matrix]]:
        """Bare single-edge jumps; identities are dropped since they do not contribute."""
        out = []
        if self.jump_family in ("shift_modulation", "shift_only"):
            out += [("L", g, shift_matrix(G, g)) for g in range(1, G.order)]
        if self.jump_family in ("shift_modulation", "modulation_only"):
            out += [("M", c, modulation_matrix(G, c)) for c in range(1, G.order)]
        return out

    def rate(self, beta: float) -> Callable[[float], float]:
        return rate_function(self.rate_family, beta)

    def is_adjoint_closed(self, G: GroupSpec) -> bool:
        mats = [m.toarray() for _, _, m in self.single_edge_jumps(G)]
        return all(any(np.allclose(a.conj().T, b) for b in mats) for a in mats)

    def single_edge_commutant_dim(self, G: GroupSpec) -> int:
        """Dimension of the commutant of the jumps in the single-edge algebra (1 = ergodic)."""
        d = G.order
        eye = np.eye(d)
        rows = [np.kron(eye, m.toarray()) - np.kron(m.toarray().T, eye) for _, _, m in self.single_edge_jumps(G)]
        if not rows:
            return d * d
        s = la.svdvals(np.vstack(rows))
        return int(d * d - np.sum(s > 1e-10 * max(1.0, s[0])))

    def detailed_balance_defect(self, beta: float, omegas: Iterable[int]) -> float:
        h = self.rate(beta)
        return max(abs(h(-w) - h(w) * np.exp(-beta * w)) / max(h(-w), 1e-300) for w in omegas)

    def floor(self, beta: float, omegas: Iterable[int]) -> float:
        h = self.rate(beta)
        return min(h(w) * np.exp(-beta * w / 2) for w in omegas)


# ---------------------------------------------------------------------------
# superoperators
# ---------------------------------------------------------------------------

@dataclass
class JumpTerm:
    edge: int
    label: str
    omega: int
    rate: float
    X: sp.csr_matrix  # on the ambient support


@dataclass
class SuperOperatorHandle:
    """A Lindblad-form map on operators of the ambient support (Heisenberg picture)."""

    support: tuple[int, ...]
    d: int
    terms: list[JumpTerm] = field(default_factory=list)

    def __post_init__(self):
        self._refresh()

    def _refresh(self):
        dim = self.dim
        K = sp.csr_matrix((dim, dim), dtype=complex)
        for t in self.terms:
            K = K + t.rate * (t.X.conj().T @ t.X)
        self._K = K.tocsr()
        self._Xs = [(t.rate, t.X, t.X.conj().T.tocsr()) for t in self.terms]

    @property
    def dim(self) -> int:
        return self.d ** len(self.support)

    def __add__(self, other: "SuperOperatorHandle") -> "SuperOperatorHandle":
        if other.support != self.support:
            raise ValueError("supports differ")
        return SuperOperatorHandle(self.support, self.d, self.terms + other.terms)

    def apply(self, O: np.ndarray) -> np.ndarray:
        O = np.asarray(O, dtype=complex)
        out = -0.5 * (self._K @ O + (self._K.T @ O.T).T)
        for h, X, Xd in self._Xs:
            out += h * (Xd @ (X.T @ O.T).T)
        return out

    def apply_dual(self, rho: np.ndarray) -> np.ndarray:
        rho = np.asarray(rho, dtype=complex)
        out = -0.5 * (self._K @ rho + (self._K.T @ rho.T).T)
        for h, X, Xd in self._Xs:
            out += h * (X @ (Xd.T @ rho.T).T)
        return out

    def assemble(self, cap: int = 2**17) -> sp.csr_matrix:
        """Sparse matrix on column-stacked vec(O)."""
        dim = self.dim
        if dim * dim > cap:
            raise ResourceError(dim * dim, cap, "superoperator")
        eye = sp.identity(dim, dtype=complex, format="csr")
        M = -0.5 * (sp.kron(eye, self._K) + sp.kron(self._K.T, eye))
        for h, X, Xd in self._Xs:
            M = M + h * sp.kron(X.T, Xd)
        return M.tocsr()

    def as_linear_operator(self) -> LinearOperator:
        dim = self.dim

        def mv(v):
            O = np.asarray(v).reshape(dim, dim, order="F")
            return self.apply(O).ravel(order="F")

        return LinearOperator((dim * dim, dim * dim), matvec=mv, dtype=complex)


def edge_spectrum(factory: OperatorFactory, e: int) -> BohrSpectrum:
    """Bohr spectrum of the local Hamiltonian of the 2 stars and 2 plaquettes on e.

    Fourier components of any operator on e agree for this local Hamiltonian
    and the full one, since the remaining terms commute with both.
    """
    key = ("edge_spectrum", e)
    if key not in factory._cache:
        terms = [factory.star(s) for s in factory.torus.stars_of_edge(e)]
        terms += [factory.plaquette(p) for p in factory.torus.plaquettes_of_edge(e)]
        factory._cache[key] = BohrSpectrum.from_commuting_projectors(terms)
    return factory._cache[key]


def dissipator(factory: OperatorFactory, e: int, beta: float, model: JumpModel,
               support: Sequence[int] | None = None) -> SuperOperatorHandle:
    """D_e for the jump model; ambient support defaults to the spectrum support of e."""
    spec = edge_spectrum(factory, e)
    base = next(iter(spec.projections.values())).support
    support = tuple(sorted(support)) if support is not None else base
    h = model.rate(beta)
    terms = []
    for kind, label, m in model.single_edge_jumps(factory.G):
        S = LocalOperator((e,), factory.d, m)
        for omega in spec.frequencies:
            X = fourier_component(S, -omega, spec)
            Xm = X.tocsr()
            Xm.data[np.abs(Xm.data) < 1e-14] = 0
            Xm.eliminate_zeros()
            if Xm.nnz == 0:
                continue
            Xe = LocalOperator(X.support, X.d, Xm).embed(support, factory.dim_cap).tocsr()
            terms.append(JumpTerm(e, f"{kind}{label}", omega, h(omega), Xe))
    return SuperOperatorHandle(support, factory.d, terms)


def lindbladian(factory: OperatorFactory, V: Region | Iterable[int], beta: float,
                model: JumpModel | None = None, support: Sequence[int] | None = None) -> SuperOperatorHandle:
    """L_V = sum_{e in V} D_e on the given ambient support (default: collar of V)."""
    model = model or JumpModel()
    torus = factory.torus
    V = V if isinstance(V, Region) else torus.region(V)
    if support is None:
        support = torus.collar(V).edges
    support = tuple(sorted(support))
    dim = factory.d ** len(support)
    if dim > factory.dim_cap:
        raise ResourceError(dim, factory.dim_cap, "Lindbladian support")
    terms: list[JumpTerm] = []
    for e in V.edges:
        terms += dissipator(factory, e, beta, model, support).terms
    return SuperOperatorHandle(support, factory.d, terms)


# ---------------------------------------------------------------------------
# Gibbs states and weighted forms
# ---------------------------------------------------------------------------

@dataclass
class GibbsState:
    """exp(-beta H)/Z with its eigen-decomposition for fractional powers."""

    support: tuple[int, ...]
    d: int
    evals: np.ndarray
    evecs: np.ndarray
    beta: float

    @classmethod
    def of(cls, H: LocalOperator, beta: float) -> "GibbsState":
        w, v = la.eigh(H.toarray())
        return cls(H.support, H.d, w, v, beta)

    @property
    def weights(self) -> np.ndarray:
        x = -self.beta * (self.evals - self.evals.min())
        p = np.exp(x)
        return p / p.sum()

    def power(self, s: float) -> np.ndarray:
        return (self.evecs * self.weights**s) @ self.evecs.conj().T

    @property
    def matrix(self) -> np.ndarray:
        return self.power(1.0)

    @property
    def min_eigenvalue(self) -> float:
        return float(self.weights.min())


def weighted_inner_product(A: np.ndarray, B: np.ndarray, s: float, rho: GibbsState) -> complex:
    """Tr(rho^s A^dag rho^(1-s) B)."""
    return complex(np.trace(rho.power(s) @ A.conj().T @ rho.power(1 - s) @ B))


def self_adjointness_defect(L: SuperOperatorHandle, rho: GibbsState, s: float,
                            n_probes: int = 4, seed: int = 0) -> float:
    """max |<A, L B>_s - <L A, B>_s| over random probe pairs, relative to the norms involved."""
    rng = np.random.default_rng(seed)
    dim = L.dim
    worst = 0.0
    rs, r1s = rho.power(s), rho.power(1 - s)
    for _ in range(n_probes):
        A = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
        B = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
        A /= np.linalg.norm(A)
        B /= np.linalg.norm(B)
        lhs = np.trace(rs @ A.conj().T @ r1s @ L.apply(B))
        rhs = np.trace(rs @ L.apply(A).conj().T @ r1s @ B)
        scale = max(1.0, abs(lhs), abs(rhs))
        worst = max(worst, abs(lhs - rhs) / scale)
    return float(worst)


# ---------------------------------------------------------------------------
# symmetrized spectra
# ---------------------------------------------------------------------------

def symmetrized_operator(L: SuperOperatorHandle, rho: GibbsState, s: float) -> LinearOperator:
    """Gamma L Gamma^{-1} with Gamma(X) = rho^{(1-s)/2} X rho^{s/2}; Hermitian under detailed balance."""
    dim = L.dim
    a, ai = rho.power((1 - s) / 2), rho.power(-(1 - s) / 2)
    b, bi = rho.power(s / 2), rho.power(-s / 2)

    def mv(v):
        X = np.asarray(v).reshape(dim, dim, order="F")
        Y = L.apply(ai @ X @ bi)
        return (a @ Y @ b).ravel(order="F")

    return LinearOperator((dim * dim, dim * dim), matvec=mv, dtype=complex)


def unsymmetrize(vectors: np.ndarray, rho: GibbsState, s: float) -> np.ndarray:
    """Map eigenvectors of the symmetrized operator back to eigen-operators of L."""
    dim = rho.evecs.shape[0]
    ai, bi = rho.power(-(1 - s) / 2), rho.power(-s / 2)
    out = np.empty_like(vectors)
    for j in range(vectors.shape[1]):
        X = vectors[:, j].reshape(dim, dim, order="F")
        out[:, j] = (ai @ X @ bi).ravel(order="F")
    return out


@dataclass
class TopSpectrum:
    eigenvalues: np.ndarray  # descending (closest to 0 first)
    vectors: np.ndarray
    residual: float
    kernel_dim: int | None


def top_spectrum(L: SuperOperatorHandle, rho: GibbsState, s: float = 1.0, k: int = 8,
                 seed: int = 0, max_k: int = 200, tol: float = 1e-12) -> TopSpectrum:
    """Eigenvalues of the symmetrized generator closest to zero, growing k until a kernel gap shows."""
    A = symmetrized_operator(L, rho, s)
    n = A.shape[0]
    rng = np.random.default_rng(seed)
    v0 = rng.normal(size=n) + 1j * rng.normal(size=n)
    while True:
        k_eff = min(k, n - 2)
        w, v = eigsh(A, k=k_eff, which="LA", v0=v0, tol=tol, maxiter=100000)
        order = np.argsort(-w)
        w, v = w[order], v[:, order]
        res = max(np.linalg.norm(A.matvec(v[:, j]) - w[j] * v[:, j]) for j in range(w.size))
        r = gap_rank(w, ratio=1e6)
        if (r is not None and r < w.size) or k_eff >= min(max_k, n - 2):
            return TopSpectrum(w, v, float(res), r)
        k = 2 * k


def kernel_basis(L: SuperOperatorHandle, rho: GibbsState, s: float = 1.0, k: int = 8, seed: int = 0):
    """HS-orthonormal basis of ker L (columns, column-stacked) and the eigensolve record."""
    top = top_spectrum(L, rho, s, k=k, seed=seed)
    if top.kernel_dim is None:
        raise ArithmeticError("kernel rank decision inconclusive")
    vecs = unsymmetrize(top.vectors[:, : top.kernel_dim], rho, s)
    return hs_orthonormalize(vecs), top


@dataclass
class GapResult:
    gap: float
    kernel_dim: int
    residual: float
    solver: str
    s: float


def spectral_gap(L: SuperOperatorHandle, rho: GibbsState, s: float = 1.0, seed: int = 0,
                 residual_tol: float = 1e-8, dense_limit: int = 1024) -> GapResult:
    """Smallest nonzero eigenvalue of -L after symmetrization."""
    n = L.dim**2
    if n <= dense_limit:
        dim = L.dim
        eye = np.eye(n, dtype=complex)
        M = np.column_stack([symmetrized_operator(L, rho, s).matvec(eye[:, j]) for j in range(n)])
        M = 0.5 * (M + M.conj().T)
        w, v = la.eigh(M)
        w = w[::-1]
        r = gap_rank(w, ratio=1e6)
        if r is None or r >= n:
            raise ConvergenceError("no kernel gap in dense spectrum", 0.0)
        return GapResult(float(-w[r]), r, 0.0, "dense", s)
    top = top_spectrum(L, rho, s, k=8, seed=seed)
    if top.kernel_dim is None or top.kernel_dim >= top.eigenvalues.size:
        raise ConvergenceError("kernel gap not resolved", top.residual)
    if top.residual > residual_tol:
        raise ConvergenceError("iterative eigensolver residual too large", top.residual)
    return GapResult(float(-top.eigenvalues[top.kernel_dim]), top.kernel_dim, top.residual, "eigsh", s)
