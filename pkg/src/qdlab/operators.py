"""Operators on tensor products of l^2(G) over edge supports.

Basis states of a support are maps ``support -> G`` indexed mixed-radix in the
support's canonical (sorted) edge order, first edge most significant.
Matrices are scipy CSR unless explicitly densified.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .groups import GroupSpec
from .lattice import Region, TorusGeometry

DEFAULT_DIM_CAP = 2**20
DENSE_THRESHOLD = 4096


class ResourceError(RuntimeError):
    """A construction would exceed the configured dimension cap."""

    def __init__(self, required: int, cap: int, what: str = "operator"):
        super().__init__(f"{what} needs dimension {required} > cap {cap}")
        self.required = required
        self.cap = cap


class SupportError(ValueError):
    pass


def _check_dim(d: int, n: int, cap: int, what: str = "operator") -> int:
    dim = d**n
    if dim > cap:
        raise ResourceError(dim, cap, what)
    return dim


@dataclass(frozen=True)
class HilbertIndexer:
    support: tuple[int, ...]
    local_dim: int

    @property
    def total_dim(self) -> int:
        return self.local_dim ** len(self.support)

    @property
    def weights(self) -> np.ndarray:
        n = len(self.support)
        return self.local_dim ** np.arange(n - 1, -1, -1, dtype=np.int64)

    def index(self, config: Sequence[int]) -> int:
        return int(np.asarray(config, dtype=np.int64) @ self.weights)

    def config(self, index: int) -> tuple[int, ...]:
        return tuple(int(c) for c in self.digits()[index])

    def digits(self) -> np.ndarray:
        """(total_dim, n) array of configurations."""
        idx = np.arange(self.total_dim, dtype=np.int64)
        return (idx[:, None] // self.weights[None, :]) % self.local_dim


@lru_cache(maxsize=256)
def _digit_map(local_dim: int, n: int, positions: tuple[int, ...]) -> np.ndarray:
    """Index of the sub-configuration on ``positions`` for every full index."""
    w_full = local_dim ** np.arange(n - 1, -1, -1, dtype=np.int64)
    k = len(positions)
    w_sub = local_dim ** np.arange(k - 1, -1, -1, dtype=np.int64)
    idx = np.arange(local_dim**n, dtype=np.int64)
    out = np.zeros_like(idx)
    for j, pos in enumerate(positions):
        out += ((idx // w_full[pos]) % local_dim) * w_sub[j]
    return out


def _scatter_map(local_dim: int, n: int, positions: Sequence[int]) -> np.ndarray:
    """Full index contributed by each sub-configuration placed at ``positions``."""
    w_full = local_dim ** np.arange(n - 1, -1, -1, dtype=np.int64)
    k = len(positions)
    w_sub = local_dim ** np.arange(k - 1, -1, -1, dtype=np.int64)
    idx = np.arange(local_dim**k, dtype=np.int64)
    out = np.zeros_like(idx)
    for j, pos in enumerate(positions):
        out += ((idx // w_sub[j]) % local_dim) * w_full[pos]
    return out


class LocalOperator:
    """A matrix on the tensor product space of ``support``.

    The operator acts as identity on every edge outside its support; products
    and sums embed both operands into the union support.
    """

    __slots__ = ("support", "d", "matrix")

    def __init__(self, support: Iterable[int], d: int, matrix):
        support = tuple(support)
        if list(support) != sorted(set(support)):
            raise SupportError("support must be strictly increasing")
        self.support = support
        self.d = int(d)
        dim = self.d ** len(support)
        if matrix.shape != (dim, dim):
            raise SupportError(f"matrix shape {matrix.shape} does not match support dimension {dim}")
        self.matrix = matrix

    # -- constructors ---------------------------------------------------------
    @classmethod
    def identity(cls, support: Iterable[int], d: int) -> "LocalOperator":
        support = tuple(sorted(support))
        return cls(support, d, sp.identity(d ** len(support), dtype=complex, format="csr"))

    @classmethod
    def scalar(cls, value: complex, d: int) -> "LocalOperator":
        return cls((), d, sp.csr_matrix(np.array([[complex(value)]])))

    @classmethod
    def from_dense(cls, support, d, array) -> "LocalOperator":
        return cls(tuple(support), d, np.asarray(array, dtype=complex))

    # -- basics ---------------------------------------------------------------
    @property
    def dim(self) -> int:
        return self.d ** len(self.support)

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.matrix)

    def toarray(self) -> np.ndarray:
        m = self.matrix
        return m.toarray() if sp.issparse(m) else np.asarray(m)

    def tocsr(self) -> sp.csr_matrix:
        m = self.matrix
        return m.tocsr() if sp.issparse(m) else sp.csr_matrix(m)

    def dag(self) -> "LocalOperator":
        return LocalOperator(self.support, self.d, self.matrix.conj().T if not self.is_sparse else self.matrix.conj().T.tocsr())

    def embed(self, target: Iterable[int], cap: int = DEFAULT_DIM_CAP) -> "LocalOperator":
        """The same operator written on a larger support (implicit identity)."""
        target = tuple(sorted(target))
        if target == self.support:
            return self
        missing = set(self.support) - set(target)
        if missing:
            raise SupportError(f"target support misses edges {sorted(missing)}")
        n = len(target)
        _check_dim(self.d, n, cap)
        pos = {e: i for i, e in enumerate(target)}
        own = [pos[e] for e in self.support]
        rest = [i for i in range(n) if target[i] not in set(self.support)]
        s_map = _scatter_map(self.d, n, own)
        r_map = _scatter_map(self.d, n, rest)
        coo = self.tocsr().tocoo()
        rows = (s_map[coo.row][:, None] + r_map[None, :]).ravel()
        cols = (s_map[coo.col][:, None] + r_map[None, :]).ravel()
        vals = np.repeat(coo.data, len(r_map))
        dim = self.d**n
        m = sp.csr_matrix((vals, (rows, cols)), shape=(dim, dim))
        if not self.is_sparse and dim <= DENSE_THRESHOLD:
            m = m.toarray()
        return LocalOperator(target, self.d, m)

    def _aligned(self, other: "LocalOperator"):
        if self.d != other.d:
            raise SupportError("local dimensions differ")
        union = tuple(sorted(set(self.support) | set(other.support)))
        return self.embed(union), other.embed(union)

    def __matmul__(self, other: "LocalOperator") -> "LocalOperator":
        a, b = self._aligned(other)
        m = a.matrix @ b.matrix
        return LocalOperator(a.support, a.d, m.tocsr() if sp.issparse(m) else np.asarray(m))

    def __add__(self, other: "LocalOperator") -> "LocalOperator":
        a, b = self._aligned(other)
        m = a.matrix + b.matrix
        return LocalOperator(a.support, a.d, m.tocsr() if sp.issparse(m) else np.asarray(m))

    def __sub__(self, other: "LocalOperator") -> "LocalOperator":
        return self + other * (-1.0)

    def __mul__(self, c: complex) -> "LocalOperator":
        return LocalOperator(self.support, self.d, self.matrix * c)

    __rmul__ = __mul__

    def __neg__(self) -> "LocalOperator":
        return self * (-1.0)

    def __repr__(self) -> str:
        kind = "sparse" if self.is_sparse else "dense"
        return f"LocalOperator(support={list(self.support)}, dim={self.dim}, {kind})"


# ---------------------------------------------------------------------------
# elementary operators
# ---------------------------------------------------------------------------

def shift_matrix(G: GroupSpec, g: int) -> sp.csr_matrix:
    """L^g = sum_h |gh><h|."""
    n = G.order
    rows = G.mul_table[g]
    return sp.csr_matrix((np.ones(n, dtype=complex), (rows, np.arange(n))), shape=(n, n))


def modulation_matrix(G: GroupSpec, chi: int) -> sp.csr_matrix:
    """M^chi = sum_g chi(g) |g><g|."""
    return sp.diags(G.character_table[chi]).astype(complex).tocsr()


def elementary(G: GroupSpec, e: int, kind: str, label: int) -> LocalOperator:
    if kind in ("L", "shift"):
        m = shift_matrix(G, label)
    elif kind in ("M", "modulation"):
        m = modulation_matrix(G, label)
    else:
        raise ValueError(f"unknown elementary kind {kind!r}")
    return LocalOperator((e,), G.order, m)


def _product_on_edges(G: GroupSpec, factors: dict[int, sp.spmatrix]) -> LocalOperator:
    support = tuple(sorted(factors))
    m = sp.identity(1, dtype=complex, format="csr")
    for e in support:
        m = sp.kron(m, factors[e], format="csr")
    return LocalOperator(support, G.order, m)


class OperatorFactory:
    """Star and plaquette operators of one torus and one group, memoized."""

    def __init__(self, torus: TorusGeometry, G: GroupSpec, dim_cap: int = DEFAULT_DIM_CAP):
        self.torus = torus
        self.G = G
        self.d = G.order
        self.dim_cap = dim_cap
        self._cache: dict = {}

    def _memo(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    # -- stars ----------------------------------------------------------------
    def star_group(self, s: int, g: int) -> LocalOperator:
        """A_s(g): L^g on outgoing edges, L^{g bar} on incoming ones."""
        def build():
            se = self.torus.star_edges(s)
            ginv = int(self.G.inv_table[g])
            f = {e: shift_matrix(self.G, g) for e in se.plus}
            for e in se.minus:
                f[e] = shift_matrix(self.G, ginv) if e not in f else f[e] @ shift_matrix(self.G, ginv)
            return _product_on_edges(self.G, f)
        return self._memo(("Ag", s, g), build)

    def star_character(self, s: int, chi: int) -> LocalOperator:
        """A_s(chi) = (1/|G|) sum_g chi(g) A_s(g)."""
        def build():
            acc = None
            for g in range(self.d):
                term = self.star_group(s, g) * (self.G.character_table[chi, g] / self.d)
                acc = term if acc is None else acc + term
            acc.matrix.eliminate_zeros()
            return acc
        return self._memo(("Achi", s, chi), build)

    def star(self, s: int) -> LocalOperator:
        return self.star_character(s, 0)

    # -- plaquettes -----------------------------------------------------------
    def plaquette_character(self, p: int, chi: int) -> LocalOperator:
        """B_p(chi): M^chi on counterclockwise edges, M^{chi bar} on clockwise ones."""
        def build():
            pe = self.torus.plaquette_edges(p)
            cinv = int(self.G.inv_table[chi])
            f = {e: modulation_matrix(self.G, chi) for e in pe.plus}
            for e in pe.minus:
                f[e] = modulation_matrix(self.G, cinv) if e not in f else f[e] @ modulation_matrix(self.G, cinv)
            return _product_on_edges(self.G, f)
        return self._memo(("Bchi", p, chi), build)

    def plaquette_group(self, p: int, h: int) -> LocalOperator:
        """B_p(h) = (1/|G|) sum_chi chi(h) B_p(chi)."""
        def build():
            acc = None
            for c in range(self.d):
                term = self.plaquette_character(p, c) * (self.G.character_table[c, h] / self.d)
                acc = term if acc is None else acc + term
            m = acc.tocsr()
            m.data[np.abs(m.data) < 1e-14] = 0
            m.eliminate_zeros()
            return LocalOperator(acc.support, acc.d, m)
        return self._memo(("Bg", p, h), build)

    def plaquette(self, p: int) -> LocalOperator:
        return self.plaquette_group(p, 0)

    def plaquette_delta_form(self, p: int) -> LocalOperator:
        """B_p as sum_g delta_1(g1 g2 g3bar g4bar)|g><g| (ccw edges enter as g, cw as g bar)."""
        pe = self.torus.plaquette_edges(p)
        support = tuple(sorted(pe.all))
        digits = HilbertIndexer(support, self.d).digits()
        total = np.zeros(len(digits), dtype=np.int64)
        for j, e in enumerate(support):
            col = digits[:, j]
            if e in pe.minus:
                col = self.G.inv_table[col]
            total = self.G.mul_table[total, col]
        return LocalOperator(support, self.d, sp.diags((total == 0).astype(complex)).tocsr())

    # -- Hamiltonians ---------------------------------------------------------
    def hamiltonian(self, V: Region, support: Iterable[int] | None = None) -> LocalOperator:
        """H_V = -sum_{s in S_V} A_s - sum_{p in P_V} B_p on the collar of V."""
        stars, plaqs = self.torus.touching_sets(V)
        if support is None:
            support = self.torus.collar(V).edges
        support = tuple(sorted(support))
        dim = _check_dim(self.d, len(support), self.dim_cap, "Hamiltonian")
        H = sp.csr_matrix((dim, dim), dtype=complex)
        for s in sorted(stars):
            H = H - self.star(s).embed(support, self.dim_cap).tocsr()
        for p in sorted(plaqs):
            H = H - self.plaquette(p).embed(support, self.dim_cap).tocsr()
        return LocalOperator(support, self.d, H.tocsr())

    def local_terms(self, V: Region) -> tuple[list[int], list[int]]:
        stars, plaqs = self.torus.touching_sets(V)
        return sorted(stars), sorted(plaqs)


# ---------------------------------------------------------------------------
# partial trace and algebra tools
# ---------------------------------------------------------------------------

def partial_trace(O: LocalOperator, R: Iterable[int], ambient: Iterable[int] | None = None) -> LocalOperator:
    """Tr_R O, supported on support(O) minus R.

    Edges of R outside the support of O contribute a factor d each, since O
    acts as identity there. With ``ambient`` given, R and the support of O
    must both lie inside it.
    """
    R = set(R)
    if ambient is not None:
        amb = set(ambient)
        if not R <= amb:
            raise SupportError(f"edges {sorted(R - amb)} are outside the ambient support")
        if not set(O.support) <= amb:
            raise SupportError("operator support leaves the ambient support")
    outside = R - set(O.support)
    traced = [i for i, e in enumerate(O.support) if e in R]
    kept = [i for i, e in enumerate(O.support) if e not in R]
    n = len(O.support)
    d = O.d
    factor = float(d ** len(outside))
    new_support = tuple(e for e in O.support if e not in R)
    if not traced:
        return LocalOperator(O.support, d, O.matrix * factor)
    if not O.is_sparse:
        t = O.toarray().reshape((d,) * (2 * n))
        perm = kept + traced + [n + i for i in kept] + [n + i for i in traced]
        k, r = d ** len(kept), d ** len(traced)
        t = t.transpose(perm).reshape(k, r, k, r)
        return LocalOperator(new_support, d, np.einsum("arbr->ab", t) * factor)
    coo = O.tocsr().tocoo()
    to_r = _digit_map(d, n, tuple(traced))
    to_k = _digit_map(d, n, tuple(kept))
    keep = to_r[coo.row] == to_r[coo.col]
    k = d ** len(kept)
    m = sp.csr_matrix((coo.data[keep] * factor, (to_k[coo.row[keep]], to_k[coo.col[keep]])), shape=(k, k))
    return LocalOperator(new_support, d, m)


def commutator(A: LocalOperator, B: LocalOperator) -> LocalOperator:
    return A @ B - B @ A


def op_norm(O: LocalOperator | np.ndarray | sp.spmatrix) -> float:
    """Operator 2-norm (largest singular value)."""
    m = O.matrix if isinstance(O, LocalOperator) else O
    if sp.issparse(m):
        if m.nnz == 0:
            return 0.0
        if m.shape[0] <= DENSE_THRESHOLD:
            m = m.toarray()
        else:
            from scipy.sparse.linalg import svds
            return float(svds(m.astype(complex), k=1, return_singular_vectors=False, tol=1e-10)[0])
    m = np.asarray(m)
    if m.size == 0:
        return 0.0
    return float(la.svdvals(m)[0])


def max_abs(O) -> float:
    m = O.matrix if isinstance(O, LocalOperator) else O
    if sp.issparse(m):
        return float(abs(m).max()) if m.nnz else 0.0
    return float(np.abs(m).max()) if np.size(m) else 0.0


def min_eigenvalue(O) -> float:
    """Minimal eigenvalue of the Hermitian part; the caller applies the tolerance."""
    m = O.matrix if isinstance(O, LocalOperator) else O
    if sp.issparse(m):
        if m.shape[0] > DENSE_THRESHOLD:
            from scipy.sparse.linalg import eigsh
            h = (m + m.conj().T) * 0.5
            return float(eigsh(h, k=1, which="SA", return_eigenvectors=False, tol=1e-12)[0])
        m = m.toarray()
    m = np.asarray(m)
    return float(la.eigvalsh(0.5 * (m + m.conj().T))[0])


def is_psd(O, rel_tol: float = 1e-9) -> tuple[bool, float]:
    """PSD up to roundoff: min eigenvalue >= -rel_tol * (1 + norm)."""
    lam = min_eigenvalue(O)
    return lam >= -rel_tol * (1.0 + op_norm(O)), lam


def hs_orthonormalize(vectors: np.ndarray, rank_tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis (columns) of the span of the given columns."""
    if vectors.shape[1] == 0:
        return vectors
    u, s, _ = la.svd(vectors, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return vectors[:, :0]
    return u[:, s > rank_tol * s[0]]


def gap_rank(eigs: np.ndarray, ratio: float = 1e6, floor: float = 1e-300) -> int | None:
    """Number of 'zero' values by a relative gap test on sorted magnitudes.

    Returns None when no jump of at least ``ratio`` separates a zero cluster
    from the rest (inconclusive).
    """
    a = np.sort(np.abs(np.asarray(eigs, dtype=float)))
    if a.size == 0:
        return 0
    if a[0] > 1e-6 * max(1.0, a[-1]):
        return 0
    for i in range(a.size - 1):
        if a[i + 1] >= ratio * max(a[i], floor):
            return i + 1
    if a[-1] <= 1e-8:
        return int(a.size)
    return None


def commutant_basis(ops: Sequence[sp.spmatrix | np.ndarray], within: np.ndarray,
                    dim: int, ratio: float = 1e6) -> np.ndarray:
    """Orthonormal (Hilbert-Schmidt) basis of {ops}' intersected with span(within).

    ``within`` holds HS-orthonormal vectorized operators (column-stacked) as
    columns. Solves sum_k c_k [B_k, S_i] = 0 through the Gram matrix of the
    stacked commutator system. Raises if the rank decision is inconclusive.
    """
    k = within.shape[1]
    if not ops:
        return within
    gram = np.zeros((k, k), dtype=complex)
    basis_ops = [within[:, j].reshape(dim, dim, order="F") for j in range(k)]
    basis_sp = [sp.csr_matrix(b) for b in basis_ops]
    for S in ops:
        S = sp.csr_matrix(S)
        cols = []
        for b in basis_sp:
            c = (b @ S - S @ b).tocoo()
            cols.append(c)
        M = sp.hstack([sp.csr_matrix(c.reshape(dim * dim, 1)) for c in cols]).tocsc()
        gram += (M.conj().T @ M).toarray()
    w, v = la.eigh(gram)
    r = gap_rank(w, ratio)
    if r is None:
        raise ArithmeticError("commutant rank decision inconclusive (no clear spectral gap)")
    coeffs = v[:, :r]
    out = within @ coeffs
    return hs_orthonormalize(out)


def dump_operator(O: LocalOperator, torus: TorusGeometry | None = None) -> str:
    """Text dump: header with support and dimension, then 'row col re im' lines."""
    coo = O.tocsr().tocoo()
    lines = [
        "# qdlab operator v1",
        "support " + " ".join(str(e) for e in O.support),
        f"local_dim {O.d}",
        f"dim {O.dim}",
        f"nnz {coo.nnz}",
    ]
    order = np.lexsort((coo.col, coo.row))
    for i in order:
        v = coo.data[i]
        lines.append(f"{coo.row[i]} {coo.col[i]} {v.real:.17g} {v.imag:.17g}")
    return "\n".join(lines) + "\n"


def load_operator(text: str) -> LocalOperator:
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    header = {}
    i = 0
    while i < len(lines) and not lines[i][0].isdigit():
        key, *vals = lines[i].split()
        header[key] = vals
        i += 1
    support = tuple(int(v) for v in header["support"])
    d = int(header["local_dim"][0])
    dim = int(header["dim"][0])
    rows, cols, data = [], [], []
    for ln in lines[i:]:
        r, c, re_, im_ = ln.split()
        rows.append(int(r))
        cols.append(int(c))
        data.append(float(re_) + 1j * float(im_))
    m = sp.csr_matrix((np.array(data, dtype=complex), (rows, cols)), shape=(dim, dim))
    return LocalOperator(support, d, m)
