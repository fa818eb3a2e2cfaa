"""Join semi-lattices, origin-tagged value sets and classification-tree labels.

Labels are stored doubled (``x2``) so every label in the tree is an integer
and threshold tests never touch floating point.
"""
from __future__ import annotations

import random
from dataclasses import dataclass
from functools import reduce
from typing import Any, Iterable, NamedTuple, Protocol


class JoinLattice(Protocol):
    name: str

    def join(self, a: Any, b: Any) -> Any: ...

    def leq(self, a: Any, b: Any) -> bool: ...

    def make_input(self, pid: int, rng: random.Random) -> Any: ...

    def fresh(self, tag: str) -> Any: ...

    def contains(self, x: Any) -> bool: ...


@dataclass(frozen=True)
class SetUnionLattice:
    """Finite sets of opaque byte strings ordered by inclusion."""

    name: str = "set"
    shared_pool: int = 4

    def join(self, a: frozenset, b: frozenset) -> frozenset:
        return a | b

    def leq(self, a: frozenset, b: frozenset) -> bool:
        return a <= b

    def make_input(self, pid: int, rng: random.Random) -> frozenset:
        extra = {b"c%d" % i for i in range(self.shared_pool) if rng.random() < 0.25}
        return frozenset({b"x%d" % pid} | extra)

    def fresh(self, tag: str) -> frozenset:
        return frozenset({b"!" + tag.encode()})

    def contains(self, x: Any) -> bool:
        return isinstance(x, frozenset) and all(isinstance(e, bytes) for e in x)


@dataclass(frozen=True)
class MaxIntLattice:
    """Integers under ``max``; a total order, so outputs are always comparable."""

    name: str = "maxint"

    def join(self, a: int, b: int) -> int:
        return a if a >= b else b

    def leq(self, a: int, b: int) -> bool:
        return a <= b

    def make_input(self, pid: int, rng: random.Random) -> int:
        return rng.randrange(1000)

    def fresh(self, tag: str) -> int:
        return 10**6 + sum(tag.encode())

    def contains(self, x: Any) -> bool:
        return type(x) is int


LATTICES: dict[str, JoinLattice] = {"set": SetUnionLattice(), "maxint": MaxIntLattice()}


def get_lattice(name: str) -> JoinLattice:
    try:
        return LATTICES[name]
    except KeyError:
        raise ValueError(f"unknown lattice {name!r}; choose from {sorted(LATTICES)}") from None


class TaggedValue(NamedTuple):
    origin: int
    element: Any


class OriginConflict(ValueError):
    """Two different values claim the same origin process."""

    def __init__(self, origin: int, a: TaggedValue, b: TaggedValue):
        super().__init__(f"origin {origin} carries two values: {a!r} / {b!r}")
        self.origin = origin


EMPTY: frozenset = frozenset()


def value_set(items: Iterable[TaggedValue] = ()) -> frozenset:
    """Build a value set, asserting at most one value per origin."""
    vs = frozenset(items)
    check_origins(vs)
    return vs


def check_origins(vs: Iterable[TaggedValue]) -> None:
    seen: dict[int, TaggedValue] = {}
    for tv in vs:
        prev = seen.setdefault(tv.origin, tv)
        if prev != tv:
            raise OriginConflict(tv.origin, prev, tv)


def union(a: frozenset, b: frozenset) -> frozenset:
    out = a | b
    check_origins(out)
    return out


def subset(a: frozenset, b: frozenset) -> bool:
    return a <= b


def height(vs: frozenset) -> int:
    return len(vs)


def join_all(lattice: JoinLattice, vs: Iterable[TaggedValue]) -> Any:
    elems = [tv.element for tv in vs]
    if not elems:
        raise ValueError("join over an empty value set (the lattice may have no bottom)")
    return reduce(lattice.join, elems)


class ValueAccumulator:
    """Grow-only value set (ACV and S entries).

    ``add`` never raises; it returns the origins that ended up with two
    values so the caller can report the breach.
    """

    __slots__ = ("items", "_by_origin", "_snap")

    def __init__(self) -> None:
        self.items: set = set()
        self._by_origin: dict[int, TaggedValue] = {}
        self._snap: frozenset | None = EMPTY

    def add(self, vs: Iterable[TaggedValue]) -> list[int]:
        conflicts = []
        items = self.items
        for tv in vs:
            if tv in items:
                continue
            prev = self._by_origin.setdefault(tv.origin, tv)
            if prev != tv:
                conflicts.append(tv.origin)
            items.add(tv)
            self._snap = None
        return conflicts

    def covers(self, vs: frozenset) -> bool:
        return vs <= self.items

    def snapshot(self) -> frozenset:
        if self._snap is None:
            self._snap = frozenset(self.items)
        return self._snap

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True, order=True)
class Label:
    x2: int

    @classmethod
    def of(cls, value: float) -> Label:
        x2 = value * 2
        if x2 != int(x2):
            raise ValueError(f"{value} is not a multiple of 1/2")
        return cls(int(x2))

    def __float__(self) -> float:
        return self.x2 / 2

    def __str__(self) -> str:
        return f"{self.x2 / 2:g}"


VARIANT_BOUND = {"unauth": 5, "auth": 3}

# "strict": f' is the least power of two above f, so n - f > k0 - f'/2 and the
# round-1 window is strict at its lower end like every later one.
# "compact": L = max(1, ceil(log2 f)), f' = 2^L; for f a power of two >= 2 this
# gives f' = f and leaves f + 1 possible heights for f leaf labels.
TREE_RULES = ("strict", "compact")


@dataclass(frozen=True)
class TreeParams:
    n: int
    f: int
    f_pow: int
    rounds: int
    rule: str = "strict"

    @classmethod
    def build(cls, n: int, f: int, variant: str | None = None, rule: str = "strict") -> TreeParams:
        if n < 1 or f < 0:
            raise ValueError(f"bad sizes n={n} f={f}")
        if rule not in TREE_RULES:
            raise ValueError(f"unknown tree rule {rule!r}; choose from {TREE_RULES}")
        if variant is not None:
            bound = VARIANT_BOUND[variant]
            if not bound * f < n:
                raise ValueError(f"{variant} variant needs {bound}f < n (n={n}, f={f})")
        if f == 0:
            return cls(n, 0, 0, 0, rule)
        rounds = tree_rounds(f, rule)
        return cls(n, f, 2**rounds, rounds, rule)

    @classmethod
    def max_f(cls, n: int, variant: str) -> int:
        return (n - 1) // VARIANT_BOUND[variant]

    def delta_x2(self, r: int) -> int:
        """Doubled distance between a round-r label and its children."""
        if not 1 <= r <= self.rounds:
            raise ValueError(f"round {r} outside 1..{self.rounds}")
        return self.f_pow >> r

    def window_x2(self, r: int) -> int:
        """Doubled half-width of the |V| window at the start of round r (f'/2^r)."""
        return (2 * self.f_pow) >> r


def tree_rounds(f: int, rule: str = "strict") -> int:
    if f == 0:
        return 0
    if rule == "compact":
        return max(1, (f - 1).bit_length())  # ceil(log2 f)
    return f.bit_length()  # ceil(log2(f + 1))


def initial_label(p: TreeParams) -> Label:
    return Label(2 * p.n - p.f_pow)


def slave_label(k: Label, r: int, p: TreeParams) -> Label:
    return Label(k.x2 - p.delta_x2(r))


def master_label(k: Label, r: int, p: TreeParams) -> Label:
    return Label(k.x2 + p.delta_x2(r))


def exceeds_threshold(vs: frozenset | int, k: Label) -> bool:
    size = vs if isinstance(vs, int) else len(vs)
    return 2 * size > k.x2


def tree_levels(p: TreeParams) -> list[list[Label]]:
    """Labels by level: index 0 is the root, index L holds the leaves."""
    levels = [[initial_label(p)]]
    for r in range(1, p.rounds + 1):
        nxt = []
        for k in levels[-1]:
            nxt.append(slave_label(k, r, p))
            nxt.append(master_label(k, r, p))
        levels.append(nxt)
    return levels
