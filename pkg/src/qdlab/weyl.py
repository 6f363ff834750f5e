"""Brute-force expansion of Gibbs factors into Weyl strings.

A Weyl string on an ordered edge list is prod_e L_e^{a_e} M_e^{chi_e}, with the
shift written to the left of the modulation on every edge. Products follow
(L^a M^chi)(L^b M^psi) = chi(b) L^{ab} M^{chi psi} and single-edge traces are
Tr(L^a M^chi) = |G| delta_{a,1} delta_{chi,1}. Strings are orthogonal with
Tr(W^dag W) = |G|^n, which gives cheap rigorous norm bounds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .groups import GroupSpec
from .lattice import Region, TorusGeometry
from .operators import LocalOperator, modulation_matrix, shift_matrix


@dataclass
class WeylSum:
    """sum_k coef[k] * W(shifts[k], chars[k]) over the edge list ``edges``."""

    G: GroupSpec
    edges: list[int]
    shifts: np.ndarray  # (n, len(edges)) group-element indices
    chars: np.ndarray  # (n, len(edges)) character indices
    coef: np.ndarray  # (n,)

    @classmethod
    def identity(cls, G: GroupSpec, edges, scale: complex = 1.0) -> "WeylSum":
        m = len(edges)
        return cls(G, list(edges), np.zeros((1, m), np.int64), np.zeros((1, m), np.int64),
                   np.array([complex(scale)]))

    def __len__(self) -> int:
        return self.coef.size

    def compress(self, tol: float = 0.0) -> "WeylSum":
        """Merge duplicate strings; drop coefficients with |c| <= tol."""
        if self.coef.size == 0:
            return self
        key = np.hstack([self.shifts, self.chars])
        # pack digit columns into int64 words; sorting a few words beats a row-wise unique
        per_word = max(1, int(62 // np.log2(max(self.G.order, 2))))
        words = [np.zeros(key.shape[0], np.int64)]
        for c0 in range(0, key.shape[1], per_word):
            block = key[:, c0:c0 + per_word]
            radix = self.G.order ** np.arange(block.shape[1], dtype=np.int64)
            words.append(block @ radix)
        order = np.lexsort(words[::-1])
        packed = np.stack(words, axis=1)[order]
        new = np.ones(order.size, dtype=bool)
        new[1:] = np.any(packed[1:] != packed[:-1], axis=1)
        group = np.cumsum(new) - 1
        inv = np.empty_like(group)
        inv[order] = group
        uniq = key[order[new]]
        coef = np.zeros(len(uniq), dtype=complex)
        np.add.at(coef, inv, self.coef)
        keep = np.abs(coef) > tol
        m = len(self.edges)
        return WeylSum(self.G, self.edges, uniq[keep, :m], uniq[keep, m:], coef[keep])

    def multiply_factor(self, positions: list[int], shift_pattern: np.ndarray,
                        char_pattern: np.ndarray, weights: np.ndarray) -> "WeylSum":
        """Right-multiply by sum_j weights[j] * W_j, W_j given on the listed positions.

        ``shift_pattern``/``char_pattern`` have shape (J, len(positions)).
        """
        G = self.G
        n, J = self.coef.size, weights.size
        sh = np.repeat(self.shifts, J, axis=0)
        ch = np.repeat(self.chars, J, axis=0)
        co = np.repeat(self.coef, J) * np.tile(weights, n)
        bs = np.tile(shift_pattern, (n, 1))
        cs = np.tile(char_pattern, (n, 1))
        for j, pos in enumerate(positions):
            # phase chi(b) from moving the right factor's shift past our modulation
            co = co * G.character_table[ch[:, pos], bs[:, j]]
            sh[:, pos] = G.mul_table[sh[:, pos], bs[:, j]]
            ch[:, pos] = G.mul_table[ch[:, pos], cs[:, j]]
        return WeylSum(G, self.edges, sh, ch, co)

    def trace_out(self, edge: int) -> "WeylSum":
        pos = self.edges.index(edge)
        keep = (self.shifts[:, pos] == 0) & (self.chars[:, pos] == 0)
        edges = self.edges[:pos] + self.edges[pos + 1:]
        return WeylSum(self.G, edges, np.delete(self.shifts[keep], pos, axis=1),
                       np.delete(self.chars[keep], pos, axis=1), self.coef[keep] * self.G.order)

    def restrict_to(self, edges) -> "WeylSum":
        """Reorder columns to ``edges`` (must be a permutation of self.edges, plus identities)."""
        edges = list(edges)
        n = self.coef.size
        sh = np.zeros((n, len(edges)), np.int64)
        ch = np.zeros((n, len(edges)), np.int64)
        for j, e in enumerate(edges):
            if e in self.edges:
                i = self.edges.index(e)
                sh[:, j] = self.shifts[:, i]
                ch[:, j] = self.chars[:, i]
        extra = set(self.edges) - set(edges)
        for e in extra:
            i = self.edges.index(e)
            if np.any(self.shifts[:, i]) or np.any(self.chars[:, i]):
                raise ValueError(f"edge {e} carries non-identity factors")
        return WeylSum(self.G, edges, sh, ch, self.coef.copy())

    def as_dict(self) -> dict:
        c = self.compress()
        return {(tuple(a), tuple(x)): v for a, x, v in zip(c.shifts, c.chars, c.coef)}

    def to_local(self) -> LocalOperator:
        """Dense-sparse matrix on sorted(edges); small supports only."""
        order = sorted(self.edges)
        perm = [self.edges.index(e) for e in order]
        d = self.G.order
        dim = d ** len(order)
        acc = sp.csr_matrix((dim, dim), dtype=complex)
        for a, x, v in zip(self.shifts[:, perm], self.chars[:, perm], self.coef):
            m = sp.identity(1, dtype=complex, format="csr")
            for ai, xi in zip(a, x):
                m = sp.kron(m, shift_matrix(self.G, ai) @ modulation_matrix(self.G, xi), format="csr")
            acc = acc + v * m
        return LocalOperator(tuple(order), d, acc.tocsr())


def difference_bound(X: WeylSum, Y: WeylSum) -> tuple[float, float]:
    """(upper bound on ||X - Y||_op / ||Y||_op, max coefficient difference).

    ||sum c W|| <= sum |c| since strings are unitary, and ||Y||_op is at least
    the normalized Hilbert-Schmidt norm sqrt(sum |c_Y|^2).
    """
    dx, dy = X.as_dict(), Y.as_dict()
    keys = set(dx) | set(dy)
    diff = np.array([dx.get(k, 0) - dy.get(k, 0) for k in keys])
    ynorm = np.sqrt(sum(abs(v) ** 2 for v in dy.values()))
    num = float(np.abs(diff).sum()) if diff.size else 0.0
    return num / ynorm, float(np.abs(diff).max(initial=0.0))


def _star_factor(torus: TorusGeometry, G: GroupSpec, s: int, c_id: complex, c_g: complex):
    se = torus.star_edges(s)
    pos_edges = list(se.all)
    J = G.order
    shifts = np.zeros((J, len(pos_edges)), np.int64)
    for g in range(J):
        for j, e in enumerate(pos_edges):
            sh = 0
            if e in se.plus:
                sh = G.mul_table[sh, g]
            if e in se.minus:
                sh = G.mul_table[sh, G.inv_table[g]]
            shifts[g, j] = sh
    w = np.full(J, c_g, dtype=complex)
    w[0] = c_id
    return pos_edges, shifts, np.zeros_like(shifts), w


def _plaquette_factor(torus: TorusGeometry, G: GroupSpec, p: int, c_id: complex, c_g: complex):
    pe = torus.plaquette_edges(p)
    pos_edges = list(pe.all)
    J = G.order
    chars = np.zeros((J, len(pos_edges)), np.int64)
    for c in range(J):
        for j, e in enumerate(pos_edges):
            x = 0
            if e in pe.plus:
                x = G.mul_table[x, c]
            if e in pe.minus:
                x = G.mul_table[x, G.inv_table[c]]
            chars[c, j] = x
    w = np.full(J, c_g, dtype=complex)
    w[0] = c_id
    return pos_edges, np.zeros_like(chars), chars, w


def brute_force_marginal(torus: TorusGeometry, G: GroupSpec, R: Region, beta: float,
                         tol: float = 1e-300) -> WeylSum:
    """Tr_R exp(-beta H_R) by expanding prod (1 + (e^beta - 1) T) over the terms T of H_R.

    Stars and plaquettes are multiplied in an interleaved spatial order, so
    the character phases of the product rule are exercised; each edge of R
    is traced out as soon as every factor touching it has been absorbed.
    """
    stars, plaqs = torus.touching_sets(R)
    gp = np.expm1(beta)
    c_id, c_g = 1 + gp / G.order, gp / G.order
    factors = [("s", s) for s in stars] + [("p", p) for p in plaqs]

    def where(f):
        kind, i = f
        x, y = torus.vertex(i)
        return (y, x, 0 if kind == "s" else 1)

    factors.sort(key=where)
    edges = sorted(torus.collar(R).edges)
    remaining = {e: 0 for e in R.edges}
    for kind, i in factors:
        for e in set(torus.star_edges(i).all if kind == "s" else torus.plaquette_edges(i).all):
            if e in remaining:
                remaining[e] += 1
    X = WeylSum.identity(G, edges)
    for kind, i in factors:
        build = _star_factor if kind == "s" else _plaquette_factor
        pos_edges, sh, ch, w = build(torus, G, i, c_id, c_g)
        # a star on N=2 can touch the same edge twice; merge repeated columns
        uniq = sorted(set(pos_edges))
        sh2 = np.zeros((w.size, len(uniq)), np.int64)
        ch2 = np.zeros((w.size, len(uniq)), np.int64)
        for j, e in enumerate(pos_edges):
            k = uniq.index(e)
            sh2[:, k] = G.mul_table[sh2[:, k], sh[:, j]]
            ch2[:, k] = G.mul_table[ch2[:, k], ch[:, j]]
        X = X.multiply_factor([X.edges.index(e) for e in uniq], sh2, ch2, w).compress(tol)
        for e in set(uniq):
            if e in remaining:
                remaining[e] -= 1
                if remaining[e] == 0:
                    X = X.trace_out(e).compress(tol)
                    del remaining[e]
    return X
