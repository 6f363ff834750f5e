"""Operators of the commutative star/plaquette algebra as functions of syndrome labels.

Every such operator is diagonal in the joint eigenbasis of the generalized
projectors A_s(chi) and B_p(h), i.e. a function of one character per star and
one group element per plaquette. In that basis A_s(g) acts as conj(chi_s(g)),
so the group average over a star set S, (1/|G|) sum_g prod_{s in S} A_s(g), is
the indicator that prod_{s in S} chi_s is trivial; dually for plaquettes.

Operators that only involve such set-products are stored on the coarsest
partition ("atoms") of the stars (plaquettes) refining every set in use.
For sets that do not cover the whole torus, atom products are independent
and uniformly free, so a grid over G^{#atoms} enumerates all eigenvalues.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .groups import GroupSpec


def atom_partition(universe, sets: Mapping[str, frozenset]) -> list[frozenset]:
    """Nonempty cells of the Venn diagram of ``sets`` inside ``universe``."""
    names = list(sets)
    cells: dict[tuple, set] = {}
    for x in universe:
        sig = tuple(x in sets[n] for n in names)
        if any(sig):
            cells.setdefault(sig, set()).add(x)
    return [frozenset(c) for _, c in sorted(cells.items(), key=lambda kv: min(kv[1]))]


@dataclass
class SyndromeSpace:
    """Grid over atom labels: star atoms carry characters, plaquette atoms group elements."""

    G: GroupSpec
    star_sets: dict[str, frozenset]
    plaq_sets: dict[str, frozenset]

    def __post_init__(self):
        su = set().union(*self.star_sets.values()) if self.star_sets else set()
        pu = set().union(*self.plaq_sets.values()) if self.plaq_sets else set()
        self.star_atoms = atom_partition(sorted(su), self.star_sets)
        self.plaq_atoms = atom_partition(sorted(pu), self.plaq_sets)
        self.shape = (self.G.order,) * (len(self.star_atoms) + len(self.plaq_atoms))

    @property
    def n_atoms(self) -> int:
        return len(self.star_atoms) + len(self.plaq_atoms)

    def _label_grid(self, axis: int) -> np.ndarray:
        shape = [1] * len(self.shape)
        shape[axis] = self.G.order
        return np.arange(self.G.order).reshape(shape)

    def _product_label(self, atoms: list[frozenset], offset: int, S: frozenset) -> np.ndarray:
        members = [i for i, a in enumerate(atoms) if a <= S]
        partial = [i for i, a in enumerate(atoms) if (a & S) and not a <= S]
        if partial:
            raise ValueError("set is not a union of atoms")
        acc = np.zeros([1] * len(self.shape), dtype=np.int64)
        for i in members:
            acc = self.G.mul_table[acc, self._label_grid(offset + i)]
        return np.broadcast_to(acc, self.shape)

    def star_indicator(self, name: str) -> np.ndarray:
        """A_{S} for the named star set: 1 where the product of labels is trivial."""
        lab = self._product_label(self.star_atoms, 0, self.star_sets[name])
        return (lab == 0).astype(float)

    def plaquette_indicator(self, name: str) -> np.ndarray:
        lab = self._product_label(self.plaq_atoms, len(self.star_atoms), self.plaq_sets[name])
        return (lab == 0).astype(float)


def individual_labels_product(G: GroupSpec, labels: Mapping[int, int], S) -> int:
    acc = 0
    for s in S:
        acc = int(G.mul_table[acc, labels[s]])
    return acc
