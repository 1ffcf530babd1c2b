"""Total and partial finite functions: preservation, subset surjectivity, Pol/pPol/Inv.

Partial functions are tables over the same big-endian index encoding as
relations; the undefined entry is ``UNDEFINED`` (-1) in the public table and
the sentinel value ``d`` inside the vectorized kernels.

k-subset surjectivity counts only DEFINED outputs toward the image: a
(partial) function is k-subset surjective when for every choice of k-element
subsets A1..An of the domain the set of defined values of f on A1 x...x An
has at least k elements.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .relations import CELL_CAP, Relation, ResourceLimitError

UNDEFINED = -1

_CHUNK_ELEMS = 1 << 23  # cap on elements per vectorized preservation chunk


class FunctionError(ValueError):
    """Malformed partial function or operation arguments."""


@dataclass(frozen=True)
class PartialFunction:
    """n-ary partial operation table over {0,...,d-1}; -1 marks undefined."""

    domain_size: int
    arity: int
    table: tuple[int, ...]

    def __post_init__(self) -> None:
        d, n = self.domain_size, self.arity
        if n < 0:
            raise FunctionError("negative arity")
        if len(self.table) != d**n:
            raise FunctionError(f"table length {len(self.table)} != d**n = {d ** n}")
        for v in self.table:
            if v != UNDEFINED and not 0 <= v < d:
                raise FunctionError(f"table entry {v} outside domain")

    @property
    def is_total(self) -> bool:
        return UNDEFINED not in self.table

    def apply(self, args: Sequence[int]) -> int | None:
        if len(args) != self.arity:
            raise FunctionError("argument count mismatch")
        idx = 0
        for a in args:
            idx = idx * self.domain_size + a
        v = self.table[idx]
        return None if v == UNDEFINED else v

    def sentinel_row(self) -> np.ndarray:
        """Table as int8 with undefined encoded as d (vector-kernel form)."""
        row = np.array(self.table, dtype=np.int8)
        row[row == UNDEFINED] = self.domain_size
        return row

    @staticmethod
    def from_sentinel(d: int, arity: int, row: np.ndarray) -> "PartialFunction":
        table = tuple(UNDEFINED if int(v) == d else int(v) for v in row)
        return PartialFunction(d, arity, table)

    @staticmethod
    def from_callable(d: int, arity: int, fn: Callable[..., int | None]) -> "PartialFunction":
        table = []
        for args in itertools.product(range(d), repeat=arity):
            v = fn(*args)
            table.append(UNDEFINED if v is None else v)
        return PartialFunction(d, arity, tuple(table))

    def __repr__(self) -> str:
        body = "".join("-" if v == UNDEFINED else str(v) for v in self.table)
        return f"PartialFunction(d={self.domain_size}, n={self.arity}, [{body}])"


# -- stock functions used by tests and the Boolean classifier -------------------


def constant_fn(d: int, value: int, arity: int = 1) -> PartialFunction:
    return PartialFunction.from_callable(d, arity, lambda *a: value)


def negation_fn() -> PartialFunction:
    return PartialFunction.from_callable(2, 1, lambda x: 1 - x)


def minority_fn() -> PartialFunction:
    return PartialFunction.from_callable(2, 3, lambda x, y, z: x ^ y ^ z)


def majority_fn() -> PartialFunction:
    return PartialFunction.from_callable(2, 3, lambda x, y, z: (x + y + z) >= 2)


def boolean_or_fn() -> PartialFunction:
    return PartialFunction.from_callable(2, 2, lambda x, y: x | y)


def boolean_and_fn() -> PartialFunction:
    return PartialFunction.from_callable(2, 2, lambda x, y: x & y)


def example4_function(k: int, m: int) -> PartialFunction:
    """The binary total operation on {0..k-1} that misses exactly m-subset surjectivity.

    Rows are the first argument.  On the box {0..m-1}^2 the defined image is
    {0..m-2}, so m-subset surjectivity fails, while every other level holds.
    """
    if not 1 < m <= k:
        raise FunctionError("example4_function requires 1 < m <= k")

    def f(a: int, b: int) -> int:
        if b >= m:
            return b
        if a <= m - 2:
            if b <= m - 2:
                return a
            return (a + 1) % (m - 1)
        if a == m - 1:
            return b if b <= m - 2 else 0
        return b if b <= m - 2 else m - 1

    return PartialFunction.from_callable(k, 2, f)


# -- enumeration ------------------------------------------------------------------


@dataclass
class FunctionSet:
    """Deduplicated per-arity function tables in canonical lexicographic order.

    Tables are int8 arrays of shape (count, d**n) with the sentinel encoding;
    lexicographic order on the table with undefined sorted last is exactly
    ascending order of the sentinel rows, so enumeration order is reproducible
    byte for byte.
    """

    domain_size: int
    max_arity: int
    tables: dict[int, np.ndarray] = field(default_factory=dict)

    def count(self, arity: int | None = None) -> int:
        if arity is not None:
            return len(self.tables.get(arity, ()))
        return sum(len(t) for t in self.tables.values())

    def functions(self, arity: int | None = None) -> Iterator[PartialFunction]:
        arities = [arity] if arity is not None else sorted(self.tables)
        for n in arities:
            for row in self.tables.get(n, ()):
                yield PartialFunction.from_sentinel(self.domain_size, n, row)

    def __iter__(self) -> Iterator[PartialFunction]:
        return self.functions()


def _enumerate_tables(d: int, arity: int, mode: str) -> np.ndarray:
    if mode not in ("total", "partial"):
        raise FunctionError(f"mode must be 'total' or 'partial', got {mode!r}")
    cells = d**arity
    base = d + 1 if mode == "partial" else d
    count = base**cells
    if count > CELL_CAP:
        raise ResourceLimitError(
            f"enumerating {count} {mode} functions (d={d}, n={arity}) exceeds guard {CELL_CAP}"
        )
    idx = np.arange(count, dtype=np.int64)
    out = np.empty((count, cells), dtype=np.int8)
    for i in range(cells - 1, -1, -1):
        out[:, i] = idx % base
        idx //= base
    return out  # in partial mode the digit d is exactly the undefined sentinel


def enumerate_functions(d: int, arity: int, mode: str = "total") -> FunctionSet:
    """All total (d**(d**n)) or partial ((d+1)**(d**n)) functions of one arity."""
    fs = FunctionSet(d, arity)
    fs.tables[arity] = _enumerate_tables(d, arity, mode)
    return fs


# -- vectorized kernels -------------------------------------------------------------


def _preserves_mask(tables: np.ndarray, arity: int, rel: Relation) -> np.ndarray:
    """Boolean mask over table rows: does each function preserve `rel`?"""
    d = rel.domain_size
    rows = rel.tuple_array()
    k = len(rows)
    nf = len(tables)
    if k == 0 or nf == 0:
        return np.ones(nf, dtype=bool)
    member = rel.to_bool_array()
    m = rel.arity
    combos = np.array(list(itertools.product(range(k), repeat=arity)), dtype=np.int64)
    # in_idx[c, j]: table index fed to f at coordinate j for combo c
    sel = rows[combos, :]  # (ncombo, arity, m)
    pows = d ** np.arange(arity - 1, -1, -1, dtype=np.int64)
    in_idx = np.tensordot(sel.astype(np.int64), pows, axes=([1], [0]))  # (ncombo, m)
    ncombo = len(combos)
    ok = np.ones(nf, dtype=bool)
    chunk = max(1, _CHUNK_ELEMS // max(1, ncombo * m))
    out_pows = d ** np.arange(m - 1, -1, -1, dtype=np.int64)
    for lo in range(0, nf, chunk):
        sub = tables[lo : lo + chunk]
        outs = sub[:, in_idx]  # (chunk, ncombo, m)
        undef = (outs == d).any(axis=2)
        out_idx = np.tensordot(np.where(outs == d, 0, outs).astype(np.int64), out_pows, axes=([2], [0]))
        good = undef | member[out_idx]
        ok[lo : lo + chunk] = good.all(axis=1)
    return ok


_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.int8)


def _ksubset_mask(tables: np.ndarray, arity: int, d: int, k: int) -> np.ndarray:
    """Boolean mask over table rows: k-subset surjectivity of each function."""
    if not 1 <= k <= d:
        raise FunctionError(f"k = {k} outside [1..{d}]")
    nf = len(tables)
    if nf == 0:
        return np.ones(0, dtype=bool)
    subsets = list(itertools.combinations(range(d), k))
    value_bit = np.array([1 << v for v in range(d)] + [0], dtype=np.int64)  # sentinel -> no bit
    ok = np.ones(nf, dtype=bool)
    pows = d ** np.arange(arity - 1, -1, -1, dtype=np.int64)
    for box in itertools.product(subsets, repeat=arity):
        cells = np.array(list(itertools.product(*box)), dtype=np.int64)  # (k**arity, arity)
        idx = cells @ pows
        outs = tables[:, idx].astype(np.int64)  # (nf, k**arity)
        mask = np.bitwise_or.reduce(value_bit[outs], axis=1)
        ok &= _POPCOUNT[mask] >= k
        if not ok.any():
            break
    return ok


# -- public predicates ----------------------------------------------------------------


def preserves(fn: PartialFunction, rel: Relation) -> bool:
    """Componentwise image of member tuples is undefined somewhere or a member."""
    if fn.domain_size != rel.domain_size:
        raise FunctionError("domain size mismatch")
    tables = fn.sentinel_row()[None, :]
    return bool(_preserves_mask(tables, fn.arity, rel)[0])


def k_subset_surjective(fn: PartialFunction, k: int) -> bool:
    return bool(_ksubset_mask(fn.sentinel_row()[None, :], fn.arity, fn.domain_size, k)[0])


def subset_surjective(fn: PartialFunction) -> bool:
    return all(k_subset_surjective(fn, k) for k in range(1, fn.domain_size + 1))


# -- filtered enumerations (Pol / pPol / m(K)-pPol / Inv) --------------------------------


def _filtered_set(
    relations: Iterable[Relation],
    arity_cap: int,
    mode: str,
    d: int,
    surjectivity: Iterable[int] = (),
) -> FunctionSet:
    rels = list(relations)
    for r in rels:
        if r.domain_size != d:
            raise FunctionError("relations must share one domain")
    ks = sorted(set(surjectivity))
    fs = FunctionSet(d, arity_cap)
    for n in range(1, arity_cap + 1):
        tables = _enumerate_tables(d, n, mode)
        mask = np.ones(len(tables), dtype=bool)
        for k in ks:
            if k > d:
                mask[:] = False
                break
            mask &= _ksubset_mask(tables, n, d, k)
        for r in rels:
            if not mask.any():
                break
            mask &= _preserves_mask(tables, n, r)
        fs.tables[n] = tables[mask]
    return fs


def pol(relations: Iterable[Relation], arity_cap: int, d: int = 2) -> FunctionSet:
    """Total functions of arity <= cap preserving every relation."""
    return _filtered_set(relations, arity_cap, "total", d)


def ppol(relations: Iterable[Relation], arity_cap: int, d: int = 2) -> FunctionSet:
    """Partial functions of arity <= cap preserving every relation."""
    return _filtered_set(relations, arity_cap, "partial", d)


def mk_ppol(relations: Iterable[Relation], K: Iterable[int], arity_cap: int, d: int = 2) -> FunctionSet:
    """Partial polymorphisms that are k-subset surjective for every k in K."""
    return _filtered_set(relations, arity_cap, "partial", d, surjectivity=K)


def mk_pol(relations: Iterable[Relation], K: Iterable[int], arity_cap: int, d: int = 2) -> FunctionSet:
    """Total polymorphisms that are k-subset surjective for every k in K."""
    return _filtered_set(relations, arity_cap, "total", d, surjectivity=K)


def surjective_polymorphisms(relations: Iterable[Relation], arity_cap: int, d: int = 2) -> FunctionSet:
    """Total polymorphisms whose range is the whole domain."""
    return mk_pol(relations, [d], arity_cap, d)


def inv(functions: Iterable[PartialFunction], arity_cap: int, d: int = 2) -> list[Relation]:
    """All relations of arity <= cap invariant under every given function."""
    if d != 2 or arity_cap > 4:
        raise ResourceLimitError("inv enumerates relations only for d = 2, cap <= 4")
    fns = list(functions)
    out: list[Relation] = []
    for n in range(arity_cap + 1):
        for bits in range(1 << (d**n)):
            r = Relation(d, n, bits)
            if all(preserves(f, r) for f in fns):
                out.append(r)
    return out


# -- Galois desk check --------------------------------------------------------------------


@dataclass
class CandidateCheck:
    relation: Relation
    in_bounded_closure: bool
    in_inv: bool

    @property
    def agree(self) -> bool:
        return self.in_bounded_closure == self.in_inv


@dataclass
class GaloisReport:
    domain_size: int
    K: tuple[int, ...]
    relation_cap: int
    function_cap: int
    closure_size: int
    function_counts: dict[int, int]
    violations: list[tuple[PartialFunction, Relation]]
    candidates: list[CandidateCheck]
    closure_converged: bool

    @property
    def sound(self) -> bool:
        return not self.violations


def galois_check(
    relations: Sequence[Relation],
    K: Iterable[int],
    relation_cap: int,
    function_cap: int,
    candidates: Sequence[Relation] = (),
    frontier_budget: int = 60000,
    iteration_limit: int = 10,
) -> GaloisReport:
    """Desk check of Inv(m(K)pPol(Gamma)) against the bounded K-existential closure.

    (i) every relation in the bounded closure must be preserved by every
    function in mk_ppol(Gamma, K, <=function_cap) -- violations indicate a bug;
    (ii) supplied candidate relations are tested for membership agreement
    between Inv and the bounded closure (bounded, so disagreement where the
    candidate is in Inv but out of closure may mean caps were too small).
    """
    from .closure import ClosureSignature, close

    rels = list(relations)
    if not rels:
        raise FunctionError("galois_check requires a nonempty relation set")
    d = rels[0].domain_size
    ks = tuple(sorted(set(K)))
    sig = ClosureSignature.k_exists(
        ks,
        result_arity_cap=relation_cap,
        intermediate_arity_cap=relation_cap + 1,
        frontier_budget=frontier_budget,
        iteration_limit=iteration_limit,
    )
    result = close(rels, sig, d=d)
    members = result.reported
    fset = mk_ppol(rels, ks, function_cap, d=d)

    violations: list[tuple[PartialFunction, Relation]] = []
    for r in members:
        for n in range(1, function_cap + 1):
            tables = fset.tables.get(n)
            if tables is None or not len(tables):
                continue
            mask = _preserves_mask(tables, n, r)
            if not mask.all():
                bad = np.flatnonzero(~mask)
                for j in bad[:4]:
                    violations.append((PartialFunction.from_sentinel(d, n, tables[j]), r))

    member_set = set(members)
    checks = []
    for cand in candidates:
        in_closure = cand in member_set
        in_inv = True
        for n in range(1, function_cap + 1):
            tables = fset.tables.get(n)
            if tables is None or not len(tables):
                continue
            if not _preserves_mask(tables, n, cand).all():
                in_inv = False
                break
        checks.append(CandidateCheck(cand, in_closure, in_inv))

    return GaloisReport(
        domain_size=d,
        K=ks,
        relation_cap=relation_cap,
        function_cap=function_cap,
        closure_size=len(members),
        function_counts={n: len(t) for n, t in fset.tables.items()},
        violations=violations,
        candidates=checks,
        closure_converged=result.converged,
    )


__all__ = [
    "UNDEFINED",
    "PartialFunction",
    "FunctionSet",
    "FunctionError",
    "enumerate_functions",
    "preserves",
    "k_subset_surjective",
    "subset_surjective",
    "example4_function",
    "constant_fn",
    "negation_fn",
    "minority_fn",
    "majority_fn",
    "boolean_or_fn",
    "boolean_and_fn",
    "pol",
    "ppol",
    "mk_ppol",
    "mk_pol",
    "surjective_polymorphisms",
    "inv",
    "galois_check",
    "GaloisReport",
    "CandidateCheck",
]
