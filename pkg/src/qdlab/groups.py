"""Finite Abelian groups as products of cyclic factors, and their characters.

Elements and characters are both labelled by mixed-radix integers over the
factor orders; index 0 is the identity (resp. the trivial character).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np


class GroupMismatchError(ValueError):
    """Raised when elements or characters of different groups are combined."""


@dataclass(frozen=True)
class GroupSpec:
    factor_orders: tuple[int, ...]

    def __post_init__(self):
        orders = tuple(int(n) for n in self.factor_orders)
        if not orders:
            raise ValueError("a group needs at least one cyclic factor")
        if any(n < 2 for n in orders):
            raise ValueError(f"cyclic factor orders must be >= 2, got {orders}")
        object.__setattr__(self, "factor_orders", orders)

    @classmethod
    def cyclic(cls, n: int) -> "GroupSpec":
        return cls((n,))

    @classmethod
    def from_config(cls, value: Sequence[int] | int) -> "GroupSpec":
        if isinstance(value, int):
            return cls.cyclic(value)
        return cls(tuple(value))

    @property
    def order(self) -> int:
        return int(np.prod(self.factor_orders))

    @property
    def name(self) -> str:
        return "x".join(f"Z{n}" for n in self.factor_orders)

    # -- index <-> residues -------------------------------------------------
    @cached_property
    def _radix(self) -> np.ndarray:
        # last factor varies fastest
        w = np.ones(len(self.factor_orders), dtype=np.int64)
        for i in range(len(self.factor_orders) - 2, -1, -1):
            w[i] = w[i + 1] * self.factor_orders[i + 1]
        return w

    @cached_property
    def residue_table(self) -> np.ndarray:
        """(|G|, k) array; row i holds the residues of element index i."""
        idx = np.arange(self.order)
        return np.stack([(idx // w) % n for w, n in zip(self._radix, self.factor_orders)], axis=1)

    def index_of(self, residues: Sequence[int]) -> int:
        r = np.mod(np.asarray(residues, dtype=np.int64), self.factor_orders)
        return int(r @ self._radix)

    # -- group law as index tables ------------------------------------------
    @cached_property
    def mul_table(self) -> np.ndarray:
        res = self.residue_table
        s = np.mod(res[:, None, :] + res[None, :, :], self.factor_orders)
        return s @ self._radix

    @cached_property
    def inv_table(self) -> np.ndarray:
        return np.mod(-self.residue_table, self.factor_orders) @ self._radix

    @cached_property
    def character_table(self) -> np.ndarray:
        """chi_table[c, g] = exp(2 pi i sum_j f_j g_j / n_j).

        Phases are reduced modulo 1 with exact rational arithmetic (integers
        over the lcm of the factor orders) before exponentiation.
        """
        res = self.residue_table
        lcm = int(np.lcm.reduce(self.factor_orders))
        scale = np.array([lcm // n for n in self.factor_orders], dtype=np.int64)
        num = np.mod((res[:, None, :] * res[None, :, :] * scale).sum(axis=2), lcm)
        table = np.exp(2j * np.pi * num / lcm)
        # snap the exactly-real values so that e.g. Z2 characters are exactly +-1
        table[num == 0] = 1.0
        if lcm % 2 == 0:
            table[num == lcm // 2] = -1.0
        if lcm % 4 == 0:
            table[num == lcm // 4] = 1j
            table[num == 3 * lcm // 4] = -1j
        table.flags.writeable = False
        return table

    def elements(self) -> list["GroupElement"]:
        return [GroupElement(self, i) for i in range(self.order)]

    def characters(self) -> list["Character"]:
        return [Character(self, i) for i in range(self.order)]

    def identity(self) -> "GroupElement":
        return GroupElement(self, 0)

    def trivial_character(self) -> "Character":
        return Character(self, 0)


@dataclass(frozen=True)
class GroupElement:
    group: GroupSpec
    index: int

    @classmethod
    def from_residues(cls, group: GroupSpec, residues: Sequence[int]) -> "GroupElement":
        return cls(group, group.index_of(residues))

    @property
    def residues(self) -> tuple[int, ...]:
        return tuple(int(r) for r in self.group.residue_table[self.index])

    def __mul__(self, other: "GroupElement") -> "GroupElement":
        return multiply(self, other)

    def inverse(self) -> "GroupElement":
        return GroupElement(self.group, int(self.group.inv_table[self.index]))

    def is_identity(self) -> bool:
        return self.index == 0


@dataclass(frozen=True)
class Character:
    group: GroupSpec
    index: int

    @property
    def frequencies(self) -> tuple[int, ...]:
        return tuple(int(r) for r in self.group.residue_table[self.index])

    def __call__(self, g: GroupElement) -> complex:
        return evaluate_character(self, g)

    def __mul__(self, other: "Character") -> "Character":
        _check_same(self.group, other.group)
        return Character(self.group, int(self.group.mul_table[self.index, other.index]))

    def conjugate(self) -> "Character":
        return Character(self.group, int(self.group.inv_table[self.index]))

    def is_trivial(self) -> bool:
        return self.index == 0


def _check_same(a: GroupSpec, b: GroupSpec) -> None:
    if a != b:
        raise GroupMismatchError(f"group mismatch: {a.name} vs {b.name}")


def multiply(a: GroupElement, b: GroupElement) -> GroupElement:
    _check_same(a.group, b.group)
    return GroupElement(a.group, int(a.group.mul_table[a.index, b.index]))


def evaluate_character(chi: Character, g: GroupElement) -> complex:
    _check_same(chi.group, g.group)
    return complex(chi.group.character_table[chi.index, g.index])


def orthogonality_sum(chi: Character) -> complex:
    """(1/|G|) sum_g chi(g): 1 for the trivial character, 0 otherwise."""
    return complex(chi.group.character_table[chi.index].mean())


def dual_orthogonality_sum(g: GroupElement) -> complex:
    """(1/|G|) sum_chi chi(g): 1 at the identity, 0 otherwise."""
    return complex(g.group.character_table[:, g.index].mean())
