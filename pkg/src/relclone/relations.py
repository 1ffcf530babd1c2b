"""Immutable finite relations over small domains, with quantifier kernels.

A relation of arity ``n`` over ``{0,...,d-1}`` is a bit-vector of length
``d**n``: the tuple ``(a1,...,an)`` sits at index ``sum(ai * d**(n-1-i))``,
i.e. position 1 is the most significant digit.  This fixes the text file
format and the in-memory encoding identically.

The max quantifier keeps the outer tuples whose extension count equals the
global maximum over *all* outer tuples.  Consequence worth remembering:
``max_quantify`` of the empty relation is the FULL relation (the maximum
count is 0 and every outer tuple attains it).  This is the literal reading
of the definition and is relied on elsewhere; it is deliberate.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

CELL_CAP = 1 << 24  # hard cap on d**n cells per relation
STRUCT_ARITY_CAP = 16  # structural predicates materialize tuple arrays

MIN_DOMAIN = 2
MAX_DOMAIN = 6


class ResourceLimitError(Exception):
    """An operation would exceed an explicit resource guard."""


class RelationError(ValueError):
    """Malformed relation, substitution, or operation arguments."""


def _check_cells(d: int, arity: int) -> int:
    size = d**arity
    if size > CELL_CAP:
        raise ResourceLimitError(
            f"relation with d={d}, arity={arity} needs {size} cells (cap {CELL_CAP})"
        )
    return size


@dataclass(frozen=True)
class Relation:
    """Finite n-ary relation over {0,...,d-1} as an integer bit-vector."""

    domain_size: int
    arity: int
    bits: int

    def __post_init__(self) -> None:
        if not MIN_DOMAIN <= self.domain_size <= MAX_DOMAIN:
            raise RelationError(f"domain size {self.domain_size} outside [{MIN_DOMAIN},{MAX_DOMAIN}]")
        if self.arity < 0:
            raise RelationError("negative arity")
        size = _check_cells(self.domain_size, self.arity)
        if self.bits < 0 or self.bits >> size:
            raise RelationError("bit-vector does not fit d**n cells")

    # -- basic views ------------------------------------------------------

    @property
    def size(self) -> int:
        return self.domain_size**self.arity

    @property
    def member_count(self) -> int:
        return self.bits.bit_count()

    @property
    def is_empty(self) -> bool:
        return self.bits == 0

    @property
    def is_full(self) -> bool:
        return self.bits == (1 << self.size) - 1

    def index_of(self, tup: Sequence[int]) -> int:
        if len(tup) != self.arity:
            raise RelationError(f"tuple arity {len(tup)} != relation arity {self.arity}")
        idx = 0
        for a in tup:
            if not 0 <= a < self.domain_size:
                raise RelationError(f"entry {a} outside domain of size {self.domain_size}")
            idx = idx * self.domain_size + a
        return idx

    def contains(self, tup: Sequence[int]) -> bool:
        return bool((self.bits >> self.index_of(tup)) & 1)

    def tuples(self) -> Iterator[tuple[int, ...]]:
        """Members in ascending index order (deterministic)."""
        d, n = self.domain_size, self.arity
        bits = self.bits
        idx = 0
        while bits:
            tz = (bits & -bits).bit_length() - 1
            idx += tz
            bits >>= tz + 1
            digits = []
            j = idx
            for _ in range(n):
                digits.append(j % d)
                j //= d
            yield tuple(reversed(digits))
            idx += 1

    def digit_strings(self) -> list[str]:
        return ["".join(str(a) for a in t) for t in self.tuples()]

    def to_bool_array(self) -> np.ndarray:
        """Flat bool array of length d**n (index = tuple index)."""
        size = self.size
        raw = self.bits.to_bytes((size + 7) // 8, "little")
        arr = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little", count=size)
        return arr.astype(bool)

    def tuple_array(self) -> np.ndarray:
        """Members as a (count, arity) uint8 array, ascending index order."""
        if self.arity > STRUCT_ARITY_CAP:
            raise ResourceLimitError(f"tuple_array guarded to arity <= {STRUCT_ARITY_CAP}")
        idx = np.flatnonzero(self.to_bool_array())
        return _digits_of(self.domain_size, self.arity, idx)

    def __repr__(self) -> str:  # compact, test-failure friendly
        if self.arity == 0:
            body = "{()}" if self.bits else "{}"
        elif self.size <= 4096:
            body = "{" + ",".join(self.digit_strings()) + "}"
        else:
            body = f"<{self.member_count} tuples>"
        return f"Relation(d={self.domain_size}, n={self.arity}, {body})"

    # -- constructors ------------------------------------------------------

    @staticmethod
    def empty(d: int, arity: int) -> "Relation":
        return Relation(d, arity, 0)

    @staticmethod
    def full(d: int, arity: int) -> "Relation":
        size = _check_cells(d, arity)
        return Relation(d, arity, (1 << size) - 1)

    @staticmethod
    def from_bool_array(d: int, arity: int, arr: np.ndarray) -> "Relation":
        packed = np.packbits(arr.astype(bool).ravel(), bitorder="little").tobytes()
        return Relation(d, arity, int.from_bytes(packed, "little"))

    # -- small conveniences used by the Boolean classifier ------------------

    def flip_values(self) -> "Relation":
        """0/1-swap every tuple (d = 2 only)."""
        if self.domain_size != 2:
            raise RelationError("flip_values is defined for d = 2 only")
        arr = self.to_bool_array()
        return Relation.from_bool_array(2, self.arity, arr[::-1].copy())

    def contains_constant(self, value: int) -> bool:
        return self.contains((value,) * self.arity)


def make_relation(d: int, arity: int, tuples: Iterable[Sequence[int]]) -> Relation:
    """Build a relation from an explicit tuple list (duplicates collapse)."""
    _check_cells(d, arity)
    bits = 0
    probe = Relation.empty(d, arity)
    for t in tuples:
        bits |= 1 << probe.index_of(t)
    return Relation(d, arity, bits)


def from_predicate(d: int, arity: int, pred: Callable[[tuple[int, ...]], bool]) -> Relation:
    size = _check_cells(d, arity)
    if size > 1 << 20:
        raise ResourceLimitError("from_predicate guarded to 2^20 cells")
    bits = 0
    for idx, t in enumerate(itertools.product(range(d), repeat=arity)):
        if pred(t):
            bits |= 1 << idx
    return Relation(d, arity, bits)


# -- digit helpers ----------------------------------------------------------


def _digits_of(d: int, n: int, idx: np.ndarray) -> np.ndarray:
    """Decode flat indices into (len(idx), n) digit rows, position 1 first."""
    out = np.empty((len(idx), n), dtype=np.uint8)
    j = idx.astype(np.int64)
    for i in range(n - 1, -1, -1):
        out[:, i] = j % d
        j //= d
    return out


@lru_cache(maxsize=256)
def _all_digits(d: int, n: int) -> np.ndarray:
    size = d**n
    if size > 1 << 20:
        raise ResourceLimitError("digit table guarded to 2^20 cells")
    return _digits_of(d, n, np.arange(size))


# -- variable manipulation ---------------------------------------------------


@dataclass(frozen=True)
class VarSubstitution:
    """Position map sigma: [1..n] -> [1..m]; non-surjective maps cylindrify."""

    mapping: tuple[int, ...]
    output_arity: int

    @property
    def input_arity(self) -> int:
        return len(self.mapping)

    def __post_init__(self) -> None:
        if self.output_arity < 0:
            raise RelationError("negative output arity")
        for s in self.mapping:
            if not 1 <= s <= self.output_arity:
                raise RelationError(f"substitution image {s} outside [1..{self.output_arity}]")

    def compose(self, after: "VarSubstitution") -> "VarSubstitution":
        """after o self: apply self first, then after."""
        if after.input_arity != self.output_arity:
            raise RelationError("composition arity mismatch")
        return VarSubstitution(tuple(after.mapping[s - 1] for s in self.mapping), after.output_arity)

    @staticmethod
    def identity(n: int) -> "VarSubstitution":
        return VarSubstitution(tuple(range(1, n + 1)), n)


def substitute(rel: Relation, sub: VarSubstitution) -> Relation:
    """R(x_sigma(1),...,x_sigma(n)) over output positions 1..m."""
    if sub.input_arity != rel.arity:
        raise RelationError(f"substitution input arity {sub.input_arity} != relation arity {rel.arity}")
    d, n, m = rel.domain_size, rel.arity, sub.output_arity
    out_size = _check_cells(d, m)
    src = rel.to_bool_array()
    if n == 0:
        out = np.full(out_size, bool(rel.bits & 1))
        return Relation.from_bool_array(d, m, out)
    ar = np.arange(out_size, dtype=np.int64)
    in_idx = np.zeros(out_size, dtype=np.int64)
    for i, s in enumerate(sub.mapping):
        digit = (ar // d ** (m - s)) % d
        in_idx += digit * d ** (n - 1 - i)
    return Relation.from_bool_array(d, m, src[in_idx])


def conjoin(
    r1: Relation,
    scope1: Sequence[int],
    r2: Relation,
    scope2: Sequence[int],
    arity: int | None = None,
) -> Relation:
    """Conjunction over a common output scope; scopes are 1-based positions."""
    if r1.domain_size != r2.domain_size:
        raise RelationError("conjoin: domain size mismatch")
    if arity is None:
        arity = max([*scope1, *scope2], default=0)
    s1 = substitute(r1, VarSubstitution(tuple(scope1), arity))
    s2 = substitute(r2, VarSubstitution(tuple(scope2), arity))
    return Relation(r1.domain_size, arity, s1.bits & s2.bits)


# -- quantifiers --------------------------------------------------------------


def _axes(rel: Relation, positions: Iterable[int]) -> tuple[int, ...]:
    pos = sorted(set(positions))
    for p in pos:
        if not 1 <= p <= rel.arity:
            raise RelationError(f"position {p} outside [1..{rel.arity}]")
    return tuple(p - 1 for p in pos)


def _cube(rel: Relation) -> np.ndarray:
    return rel.to_bool_array().reshape((rel.domain_size,) * rel.arity)


def exists(rel: Relation, positions: Iterable[int]) -> Relation:
    """Project away the given positions (ordinary existential quantifier)."""
    axes = _axes(rel, positions)
    if not axes:
        return rel
    out = _cube(rel).any(axis=axes)
    return Relation.from_bool_array(rel.domain_size, rel.arity - len(axes), out)


def forall(rel: Relation, position: int) -> Relation:
    """Keep outer tuples whose every extension at `position` is a member."""
    axes = _axes(rel, [position])
    out = _cube(rel).all(axis=axes)
    return Relation.from_bool_array(rel.domain_size, rel.arity - 1, out)


def exists_k(rel: Relation, position: int, k: int) -> Relation:
    """Keep outer tuples with at least k extensions at `position`."""
    if k < 1:
        raise RelationError("exists_k requires k >= 1")
    axes = _axes(rel, [position])
    counts = _cube(rel).sum(axis=axes, dtype=np.int64)
    return Relation.from_bool_array(rel.domain_size, rel.arity - 1, counts >= k)


def extension_counts(rel: Relation, positions: Iterable[int]) -> np.ndarray:
    """Extension counts into `positions`, indexed by flat outer-tuple index."""
    axes = _axes(rel, positions)
    counts = _cube(rel).sum(axis=axes, dtype=np.int64) if axes else _cube(rel).astype(np.int64)
    return counts.reshape(-1)


def max_quantify(rel: Relation, positions: Iterable[int]) -> Relation:
    """Keep outer tuples attaining the maximal extension count.

    The maximum ranges over ALL outer tuples, so the result of quantifying a
    nonempty relation is exactly the set of count-maximizers, and the result
    for the empty relation is the full relation (max count 0, attained
    everywhere).
    """
    axes = _axes(rel, positions)
    if not axes:
        raise RelationError("max_quantify requires a nonempty position set")
    counts = _cube(rel).sum(axis=axes, dtype=np.int64)
    top = counts.max() if counts.size else 0
    return Relation.from_bool_array(rel.domain_size, rel.arity - len(axes), counts == top)


# -- structural predicates (Boolean) ------------------------------------------


@dataclass(frozen=True)
class TrivialWitness:
    zeros: tuple[int, ...]  # positions forced to 0 (1-based)
    ones: tuple[int, ...]  # positions forced to 1
    eq_classes: tuple[tuple[int, ...], ...]  # equality classes of the rest


@dataclass(frozen=True)
class StructuralPredicates:
    is_affine: bool
    is_self_complement: bool
    is_or_closed: bool
    is_and_closed: bool
    is_log_supermodular: bool
    is_trivial: bool
    trivial_witness: TrivialWitness | None


def _member_lookup(rel: Relation) -> np.ndarray:
    return rel.to_bool_array()


def _rows_to_index(rows: np.ndarray, d: int, n: int) -> np.ndarray:
    pows = d ** np.arange(n - 1, -1, -1, dtype=np.int64)
    return rows.astype(np.int64) @ pows


def structural_predicates(rel: Relation) -> StructuralPredicates:
    """Affinity, self-complement, AND/OR closure, log-supermodularity, triviality.

    Affinity is the closure test under a xor b xor c (the empty relation
    passes: it is the solution set of an inconsistent linear system).
    is_log_supermodular is by construction is_and_closed and is_or_closed.
    """
    if rel.domain_size != 2:
        raise RelationError("structural predicates are defined for d = 2 only")
    if rel.arity > STRUCT_ARITY_CAP:
        raise ResourceLimitError(f"structural predicates guarded to arity <= {STRUCT_ARITY_CAP}")
    n = rel.arity
    members = _member_lookup(rel)
    rows = rel.tuple_array()
    k = len(rows)

    if k == 0:
        or_closed = and_closed = self_comp = affine = True
    else:
        a = rows[:, None, :]
        b = rows[None, :, :]
        or_rows = (a | b).reshape(-1, n)
        and_rows = (a & b).reshape(-1, n)
        or_closed = bool(members[_rows_to_index(or_rows, 2, n)].all())
        and_closed = bool(members[_rows_to_index(and_rows, 2, n)].all())
        self_comp = bool(members[_rows_to_index(1 - rows, 2, n)].all())
        # closed under a^b^base with base in R  <=>  coset of a GF(2) subspace
        xor_rows = (a ^ b ^ rows[0]).reshape(-1, n)
        affine = bool(members[_rows_to_index(xor_rows, 2, n)].all())

    trivial, witness = _trivial_check(rel, rows)
    return StructuralPredicates(
        is_affine=affine,
        is_self_complement=self_comp,
        is_or_closed=or_closed,
        is_and_closed=and_closed,
        is_log_supermodular=and_closed and or_closed,
        is_trivial=trivial,
        trivial_witness=witness if trivial else None,
    )


def _column_classes(rows: np.ndarray, n: int) -> list[list[int]]:
    """Partition positions by column equality over the member rows (1-based)."""
    classes: list[list[int]] = []
    seen: dict[bytes, list[int]] = {}
    for i in range(n):
        key = rows[:, i].tobytes()
        if key in seen:
            seen[key].append(i + 1)
        else:
            group = [i + 1]
            seen[key] = group
            classes.append(group)
    return classes


def _trivial_check(rel: Relation, rows: np.ndarray) -> tuple[bool, TrivialWitness]:
    n = rel.arity
    if len(rows) == 0:
        zeros = ones = tuple(range(1, n + 1))
        witness = TrivialWitness(zeros, ones, ())
        return True, witness
    forced0 = [i + 1 for i in range(n) if not rows[:, i].any()]
    forced1 = [i + 1 for i in range(n) if rows[:, i].all()]
    rest = [p for p in range(1, n + 1) if p not in forced0 and p not in forced1]
    rest_rows = rows[:, [p - 1 for p in rest]] if rest else rows[:, :0]
    classes = _column_classes(rest_rows, len(rest))
    classes_pos = tuple(tuple(rest[i - 1] for i in cls) for cls in classes)
    # candidate relation defined by the forced/equality constraints
    expected = 2 ** len(classes_pos)
    trivial = len(rows) == expected
    witness = TrivialWitness(tuple(forced0), tuple(forced1), classes_pos)
    return trivial, witness


# -- filter property (Boolean) -------------------------------------------------


@dataclass(frozen=True)
class FilterAnalysis:
    eq_classes: tuple[tuple[int, ...], ...]  # ~ classes (1-based positions)
    support: tuple[int, ...]  # O_R: positions taking value 1 somewhere
    conforming_count: int
    is_filter: bool
    max_excluded: tuple[tuple[int, ...], ...]  # maximal conforming non-members
    r: int  # max #classes zeroed by a maximal excluded tuple


def filter_property(rel: Relation) -> FilterAnalysis:
    """Upward-closure analysis over the conforming tuples (d = 2 only)."""
    if rel.domain_size != 2:
        raise RelationError("filter_property is defined for d = 2 only")
    if rel.arity > STRUCT_ARITY_CAP:
        raise ResourceLimitError(f"filter_property guarded to arity <= {STRUCT_ARITY_CAP}")
    n = rel.arity
    rows = rel.tuple_array()
    classes_all = _column_classes(rows, n) if len(rows) else [[p for p in range(1, n + 1)]]
    support = tuple(p for p in range(1, n + 1) if len(rows) and rows[:, p - 1].any())
    sup_set = set(support)
    # classes either lie inside the support or miss it entirely
    o_classes = [tuple(c) for c in classes_all if c[0] in sup_set]
    kr = len(o_classes)
    members = _member_lookup(rel)

    def mask_to_index(mask: int) -> int:
        idx = 0
        pows = [2 ** (n - p) for p in range(1, n + 1)]
        for ci, cls in enumerate(o_classes):
            if (mask >> ci) & 1:
                for p in cls:
                    idx += pows[p - 1]
        return idx

    conf_member: dict[int, bool] = {}
    for mask in range(1 << kr):
        conf_member[mask] = bool(members[mask_to_index(mask)])

    is_filter = True
    for mask, inside in conf_member.items():
        if not inside:
            continue
        for ci in range(kr):
            if not (mask >> ci) & 1 and not conf_member[mask | (1 << ci)]:
                is_filter = False
                break
        if not is_filter:
            break

    max_excluded_masks = []
    for mask in range(1 << kr):
        if conf_member[mask]:
            continue
        if all(conf_member[mask | (1 << ci)] for ci in range(kr) if not (mask >> ci) & 1):
            max_excluded_masks.append(mask)
    excluded_tuples = []
    for mask in max_excluded_masks:
        t = [0] * n
        for ci, cls in enumerate(o_classes):
            if (mask >> ci) & 1:
                for p in cls:
                    t[p - 1] = 1
        excluded_tuples.append(tuple(t))
    r = max((kr - mask.bit_count() for mask in max_excluded_masks), default=0)
    return FilterAnalysis(
        eq_classes=tuple(tuple(c) for c in classes_all),
        support=support,
        conforming_count=1 << kr,
        is_filter=is_filter,
        max_excluded=tuple(excluded_tuples),
        r=r,
    )


# -- catalog --------------------------------------------------------------------


def _boolean(tuples: Iterable[Sequence[int]], arity: int) -> Relation:
    return make_relation(2, arity, tuples)


def rel_m_domain_size(m: int) -> int:
    # classes D_1..D_m with |D_i| = i laid out consecutively
    return m * (m + 1) // 2


def rel_m_class_of(m: int, value: int) -> int:
    """1-based class index of a domain value under the rel_m layout."""
    total = 0
    for i in range(1, m + 1):
        total += i
        if value < total:
            return i
    raise RelationError(f"value {value} outside rel_{m} domain")


def catalog(name: str, **params) -> Relation:
    """Named relations: eq, neq, delta0/1, imp/nimp/or/nand (k), compl, affine, relm.

    Boolean unless stated; `eq`/`full`/`empty` take d, `relm` takes m.
    """
    name = name.lower()
    if name == "eq":
        d = params.get("d", 2)
        return make_relation(d, 2, [(a, a) for a in range(d)])
    if name == "full":
        return Relation.full(params.get("d", 2), params["n"])
    if name == "empty":
        return Relation.empty(params.get("d", 2), params["n"])
    if name == "delta0":
        return _boolean([(0,)], 1)
    if name == "delta1":
        return _boolean([(1,)], 1)
    if name == "neq":
        return _boolean([(0, 1), (1, 0)], 2)
    if name == "imp":
        k = params.get("k", 1)
        # not x1 or ... or not xk or y
        return from_predicate(2, k + 1, lambda t: any(a == 0 for a in t[:k]) or t[k] == 1)
    if name == "nimp":
        k = params.get("k", 1)
        return from_predicate(2, k + 1, lambda t: any(a == 1 for a in t[:k]) or t[k] == 0)
    if name == "or":
        k = params.get("k", 2)
        return from_predicate(2, k, lambda t: any(a == 1 for a in t))
    if name == "nand":
        k = params.get("k", 2)
        return from_predicate(2, k, lambda t: any(a == 0 for a in t))
    if name == "compl":
        k, l = params["k"], params["l"]
        if k + l < 1:
            raise RelationError("compl requires k + l >= 1")
        bad1 = (0,) * k + (1,) * l
        bad2 = (1,) * k + (0,) * l
        return from_predicate(2, k + l, lambda t: t != bad1 and t != bad2)
    if name == "affine":
        k, c = params["k"], params.get("c", 0)
        return from_predicate(2, k, lambda t: sum(t) % 2 == c % 2)
    if name == "relm":
        m = params["m"]
        d = rel_m_domain_size(m)
        return from_predicate(d, 2, lambda t: rel_m_class_of(m, t[0]) == rel_m_class_of(m, t[1]))
    raise RelationError(f"unknown catalog relation {name!r}")
