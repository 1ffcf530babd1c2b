"""Conjunctive formula AST with exists / counting / max-block quantifiers.

S-expression surface syntax::

    (atom NAME v1 v2 ...)
    (and f g ...)
    (exists (v ...) f)
    (exists_k K (v) f)
    (mex (v ...) f)

Variable names match [a-z][a-z0-9_]*.  ``evaluate`` is the reference
semantics (innermost-first reduction through the relation kernels) and is
used as the oracle that every flattening transformation is checked against.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .relations import (
    CELL_CAP,
    Relation,
    RelationError,
    ResourceLimitError,
    VarSubstitution,
    exists as rel_exists,
    exists_k as rel_exists_k,
    extension_counts,
    max_quantify,
    substitute,
)

_VAR_RE = re.compile(r"[a-z][a-z0-9_]*\Z")


class FormulaError(ValueError):
    pass


class FlattenVerificationError(RuntimeError):
    """A flattening transform failed its internal evaluator check (a bug)."""


@dataclass(frozen=True)
class Atom:
    relation: str
    variables: tuple[str, ...]

    def free_vars(self) -> tuple[str, ...]:
        seen: list[str] = []
        for v in self.variables:
            if v not in seen:
                seen.append(v)
        return tuple(seen)

    def to_sexpr(self) -> str:
        return f"(atom {self.relation} {' '.join(self.variables)})"


@dataclass(frozen=True)
class And:
    children: tuple["Formula", ...]

    def free_vars(self) -> tuple[str, ...]:
        seen: list[str] = []
        for c in self.children:
            for v in c.free_vars():
                if v not in seen:
                    seen.append(v)
        return tuple(seen)

    def to_sexpr(self) -> str:
        return f"(and {' '.join(c.to_sexpr() for c in self.children)})"


EXISTS = "exists"
EXISTS_K = "exists_k"
MAX_BLOCK = "mex"


@dataclass(frozen=True)
class Quant:
    kind: str
    variables: tuple[str, ...]
    child: "Formula"
    k: int | None = None  # for EXISTS_K

    def __post_init__(self) -> None:
        if self.kind not in (EXISTS, EXISTS_K, MAX_BLOCK):
            raise FormulaError(f"unknown quantifier kind {self.kind!r}")
        if not self.variables:
            raise FormulaError("quantifier needs at least one variable")
        if self.kind == EXISTS_K:
            if self.k is None or self.k < 1:
                raise FormulaError("exists_k needs k >= 1")
            if len(self.variables) != 1:
                raise FormulaError("exists_k binds exactly one variable")
        if len(set(self.variables)) != len(self.variables):
            raise FormulaError("duplicate bound variable in one block")

    def free_vars(self) -> tuple[str, ...]:
        bound = set(self.variables)
        return tuple(v for v in self.child.free_vars() if v not in bound)

    def to_sexpr(self) -> str:
        vs = " ".join(self.variables)
        if self.kind == EXISTS_K:
            return f"(exists_k {self.k} ({vs}) {self.child.to_sexpr()})"
        return f"({self.kind} ({vs}) {self.child.to_sexpr()})"


Formula = Atom | And | Quant


# -- parsing -------------------------------------------------------------------


def _tokenize(text: str) -> list[str]:
    return text.replace("(", " ( ").replace(")", " ) ").split()


def _read(tokens: list[str], pos: int):
    if pos >= len(tokens):
        raise FormulaError("unexpected end of formula")
    tok = tokens[pos]
    if tok == "(":
        items = []
        pos += 1
        while pos < len(tokens) and tokens[pos] != ")":
            item, pos = _read(tokens, pos)
            items.append(item)
        if pos >= len(tokens):
            raise FormulaError("missing ')'")
        return items, pos + 1
    if tok == ")":
        raise FormulaError("unexpected ')'")
    return tok, pos + 1


def _check_var(name) -> str:
    if not isinstance(name, str) or not _VAR_RE.match(name):
        raise FormulaError(f"bad variable name {name!r}")
    return name


def _build(sexp) -> Formula:
    if not isinstance(sexp, list) or not sexp:
        raise FormulaError(f"expected a form, got {sexp!r}")
    head = sexp[0]
    if head == "atom":
        if len(sexp) < 2:
            raise FormulaError("atom needs a relation name")
        return Atom(sexp[1], tuple(_check_var(v) for v in sexp[2:]))
    if head == "and":
        return And(tuple(_build(c) for c in sexp[1:]))
    if head in (EXISTS, MAX_BLOCK):
        if len(sexp) != 3 or not isinstance(sexp[1], list):
            raise FormulaError(f"{head} expects (vars) and one body")
        return Quant(head, tuple(_check_var(v) for v in sexp[1]), _build(sexp[2]))
    if head == EXISTS_K:
        if len(sexp) != 4 or not isinstance(sexp[2], list):
            raise FormulaError("exists_k expects K (v) body")
        try:
            k = int(sexp[1])
        except (TypeError, ValueError):
            raise FormulaError(f"exists_k needs an integer K, got {sexp[1]!r}") from None
        return Quant(EXISTS_K, tuple(_check_var(v) for v in sexp[2]), _build(sexp[3]), k=k)
    raise FormulaError(f"unknown form {head!r}")


def parse_formula(text: str) -> Formula:
    tokens = _tokenize(text)
    sexp, pos = _read(tokens, 0)
    if pos != len(tokens):
        raise FormulaError("trailing tokens after formula")
    return _build(sexp)


# -- evaluation -----------------------------------------------------------------


def _env_domain(env: Mapping[str, Relation]) -> int:
    ds = {r.domain_size for r in env.values()}
    if len(ds) != 1:
        raise FormulaError("relation environment must use a single domain size")
    return ds.pop()


def _eval(node: Formula, env: Mapping[str, Relation], d: int) -> tuple[Relation, tuple[str, ...]]:
    if isinstance(node, Atom):
        rel = env.get(node.relation)
        if rel is None:
            raise FormulaError(f"unbound relation name {node.relation!r}")
        if len(node.variables) != rel.arity:
            raise FormulaError(
                f"atom {node.relation} has {len(node.variables)} variables, relation arity {rel.arity}"
            )
        scope = node.free_vars()
        mapping = tuple(scope.index(v) + 1 for v in node.variables)
        return substitute(rel, VarSubstitution(mapping, len(scope))), scope
    if isinstance(node, And):
        parts = [_eval(c, env, d) for c in node.children]
        scope: list[str] = []
        for _, vs in parts:
            for v in vs:
                if v not in scope:
                    scope.append(v)
        m = len(scope)
        if d**m > CELL_CAP:
            raise ResourceLimitError(f"conjunction scope of {m} variables exceeds the cell cap")
        out = Relation.full(d, m)
        for rel, vs in parts:
            mapping = tuple(scope.index(v) + 1 for v in vs)
            placed = substitute(rel, VarSubstitution(mapping, m))
            out = Relation(d, m, out.bits & placed.bits)
        return out, tuple(scope)
    if isinstance(node, Quant):
        rel, scope = _eval(node.child, env, d)
        missing = [v for v in node.variables if v not in scope]
        if missing:  # vacuous bound variables become cylinder positions
            new_scope = tuple(scope) + tuple(missing)
            mapping = tuple(range(1, len(scope) + 1))
            rel = substitute(rel, VarSubstitution(mapping, len(new_scope)))
            scope = new_scope
        positions = [scope.index(v) + 1 for v in node.variables]
        if node.kind == EXISTS:
            out = rel_exists(rel, positions)
        elif node.kind == EXISTS_K:
            out = rel_exists_k(rel, positions[0], node.k)
        else:
            out = max_quantify(rel, positions)
        rest = tuple(v for v in scope if v not in node.variables)
        return out, rest
    raise FormulaError(f"unknown node {node!r}")


def evaluate(
    formula: Formula,
    env: Mapping[str, Relation],
    order: Sequence[str] | None = None,
    d: int | None = None,
) -> Relation:
    """Relation denoted by the formula, over its free variables in `order`."""
    if d is None:
        if not env:
            raise FormulaError("evaluate needs relations or an explicit domain size")
        d = _env_domain(env)
    rel, scope = _eval(formula, env, d)
    if order is None:
        order = scope
    if set(order) != set(scope) or len(set(order)) != len(order):
        raise FormulaError(f"free-variable order {order!r} does not match free variables {scope!r}")
    mapping = tuple(tuple(order).index(v) + 1 for v in scope)
    return substitute(rel, VarSubstitution(mapping, len(order)))


# -- renaming helpers ---------------------------------------------------------------


def _rename(node: Formula, table: Mapping[str, str]) -> Formula:
    if isinstance(node, Atom):
        return Atom(node.relation, tuple(table.get(v, v) for v in node.variables))
    if isinstance(node, And):
        return And(tuple(_rename(c, table) for c in node.children))
    return Quant(node.kind, tuple(table.get(v, v) for v in node.variables), _rename(node.child, table), k=node.k)


class _NameGen:
    def __init__(self, used: Iterable[str]):
        self.used = set(used)
        self.renames: list[tuple[str, str]] = []

    def fresh(self, base: str) -> str:
        i = 1
        while f"{base}_{i}" in self.used:
            i += 1
        name = f"{base}_{i}"
        self.used.add(name)
        return name

    def claim(self, name: str) -> None:
        self.used.add(name)


def _all_vars(node: Formula) -> set[str]:
    if isinstance(node, Atom):
        return set(node.variables)
    if isinstance(node, And):
        out: set[str] = set()
        for c in node.children:
            out |= _all_vars(c)
        return out
    return set(node.variables) | _all_vars(node.child)


def _make_apart(formula: Formula) -> tuple[Formula, _NameGen]:
    """Rename bound variables so every block is distinct from everything else."""
    gen = _NameGen(_all_vars(formula))
    used = set(formula.free_vars())

    def walk(node: Formula, table: dict[str, str]) -> Formula:
        if isinstance(node, Atom):
            return Atom(node.relation, tuple(table.get(v, v) for v in node.variables))
        if isinstance(node, And):
            return And(tuple(walk(c, table) for c in node.children))
        table = dict(table)
        fresh = []
        for v in node.variables:
            if v in used:
                nv = gen.fresh(v)
                gen.renames.append((v, nv))
                table[v] = nv
                used.add(nv)
                fresh.append(nv)
            else:
                used.add(v)
                table.pop(v, None)
                fresh.append(v)
        return Quant(node.kind, tuple(fresh), walk(node.child, table), k=node.k)

    return walk(formula, {}), gen


# -- prenexing for counting quantifiers -----------------------------------------------


@dataclass
class PrenexResult:
    formula: Formula
    prefix: tuple[tuple[str, int, str], ...]  # (kind, k, variable), outermost first
    matrix: Formula
    renames: tuple[tuple[str, str], ...]


def flatten_counting(formula: Formula) -> PrenexResult:
    """Pull exists / exists_k quantifiers over conjunctions into one prefix.

    Counting quantifiers over disjoint bound-variable sets commute with
    conjunction, so after renaming apart the result is evaluate-equivalent;
    renames performed are reported.
    """
    apart, gen = _make_apart(formula)

    def go(node: Formula) -> tuple[list[tuple[str, int, str]], Formula]:
        if isinstance(node, Atom):
            return [], node
        if isinstance(node, And):
            prefix: list[tuple[str, int, str]] = []
            matrices = []
            for c in node.children:
                p, mtx = go(c)
                prefix.extend(p)
                matrices.append(mtx)
            return prefix, And(tuple(matrices))
        if node.kind == MAX_BLOCK:
            raise FormulaError("flatten_counting does not handle max blocks")
        p_child, mtx = go(node.child)
        entries = [(node.kind, node.k or 1, v) for v in node.variables]
        return entries + p_child, mtx

    prefix, matrix = go(apart)
    out: Formula = matrix
    for kind, k, v in reversed(prefix):
        if kind == EXISTS_K:
            out = Quant(EXISTS_K, (v,), out, k=k)
        else:
            out = Quant(EXISTS, (v,), out)
    return PrenexResult(out, tuple(prefix), matrix, tuple(gen.renames))


# -- max-block flattening ----------------------------------------------------------------


@dataclass(frozen=True)
class FlattenStats:
    """Per-collapse counters for nested max blocks.

    outer_max: most extensions of any outer tuple into the projected inner
    formula; inner_max: most extensions through the inner block; member_max:
    extensions available to tuples of the defined relation (may be smaller
    than outer_max); copies: how many replicas of the inner formula make the
    member advantage strict.
    """

    outer_max: int
    inner_max: int
    member_max: int
    copies: int


class Rule2EmptyError(FormulaError):
    """Conjunction of two max-defined relations is empty; the merge rule needs a
    tuple attaining both maxima simultaneously."""

    def __init__(self, left: Relation, right: Relation):
        super().__init__(
            "cannot merge max blocks: the conjunction of the two max-defined relations is empty"
        )
        self.left = left
        self.right = right


@dataclass
class MaxFlattenResult:
    formula: Formula  # single max block (or bare matrix when no block)
    matrix: Formula
    block: tuple[str, ...]
    stats: tuple[FlattenStats, ...]
    renames: tuple[tuple[str, str], ...]


def _copies_needed(outer_max: int, inner_max: int, member_max: int) -> int:
    """Smallest c >= 1 with outer_max*(inner_max-1)**c strictly below member_max*inner_max**c."""
    if inner_max <= 1:
        return 1
    c = 1
    while outer_max * (inner_max - 1) ** c >= member_max * inner_max**c:
        c += 1
    return c


def flatten_max(
    formula: Formula,
    env: Mapping[str, Relation],
    d: int | None = None,
    verify: bool = True,
) -> MaxFlattenResult:
    """Rewrite nested/conjoined max blocks into one prenex max block.

    Merging conjoined blocks multiplies extension counts; collapsing nested
    blocks replicates the inner variables `copies` times so that auxiliary
    extensions cannot compensate for missing inner-max extensions.  The result
    is checked against the reference evaluator whenever the evaluation fits
    the cell cap; a mismatch raises FlattenVerificationError.
    """
    if d is None:
        d = _env_domain(env)
    apart, gen = _make_apart(formula)
    stats: list[FlattenStats] = []

    def _fits(scope: Sequence[str]) -> bool:
        return d ** len(scope) <= CELL_CAP

    def go(node: Formula) -> tuple[Formula, list[str]]:
        if isinstance(node, Atom):
            return node, []
        if isinstance(node, And):
            matrix: Formula | None = None
            block: list[str] = []
            for child in node.children:
                c_matrix, c_block = go(child)
                if matrix is None:
                    matrix, block = c_matrix, list(c_block)
                    continue
                # merge rule: both sides must attain their maxima on a common tuple
                left = Quant(MAX_BLOCK, tuple(block), matrix) if block else matrix
                right = Quant(MAX_BLOCK, tuple(c_block), c_matrix) if c_block else c_matrix
                combo = And((left, right))
                if _fits(combo.free_vars()):
                    meet = evaluate(combo, env, d=d)
                    if meet.is_empty:
                        raise Rule2EmptyError(
                            evaluate(left, env, d=d), evaluate(right, env, d=d)
                        )
                matrix = And((matrix, c_matrix))
                block = block + list(c_block)
            if matrix is None:
                raise FormulaError("empty conjunction")
            return matrix, block
        if node.kind != MAX_BLOCK:
            raise FormulaError("flatten_max handles max blocks only (no exists/exists_k)")
        c_matrix, c_block = go(node.child)
        outer = list(node.variables)
        if not c_block:
            return c_matrix, outer
        # nested blocks: measure the collapse counters on the evaluated matrix
        free = [v for v in c_matrix.free_vars() if v not in outer and v not in c_block]
        scope = tuple(free) + tuple(outer) + tuple(c_block)
        if not _fits(scope):
            raise ResourceLimitError("nested max collapse needs evaluation within the cell cap")
        rel = evaluate(c_matrix, env, order=scope, d=d)
        z_pos = [scope.index(v) + 1 for v in c_block]
        y_pos_inner = [tuple(free + outer).index(v) + 1 for v in outer]
        projected = rel_exists(rel, z_pos)
        outer_max = int(extension_counts(projected, y_pos_inner).max()) if outer else 1
        inner_counts = extension_counts(rel, z_pos)
        inner_max = int(inner_counts.max())
        inner_best = max_quantify(rel, z_pos)
        member_counts = extension_counts(inner_best, y_pos_inner)
        member_max = int(member_counts.max()) if outer else 1
        copies = _copies_needed(outer_max, inner_max, member_max)
        stats.append(FlattenStats(outer_max, inner_max, member_max, copies))
        matrices = [c_matrix]
        block = outer + list(c_block)
        for _ in range(copies - 1):
            table = {v: gen.fresh(v) for v in c_block}
            for v, nv in table.items():
                gen.renames.append((v, nv))
            matrices.append(_rename(c_matrix, table))
            block.extend(table[v] for v in c_block)
        new_matrix = And(tuple(matrices)) if len(matrices) > 1 else matrices[0]
        return new_matrix, block

    matrix, block = go(apart)
    flat: Formula = Quant(MAX_BLOCK, tuple(block), matrix) if block else matrix
    if verify:
        scope = formula.free_vars()
        total = _all_vars(flat)
        if d ** len(total) <= CELL_CAP:
            want = evaluate(formula, env, order=scope, d=d)
            got = evaluate(flat, env, order=scope, d=d)
            if want != got:
                raise FlattenVerificationError(
                    f"flatten_max produced an inequivalent formula: {want!r} vs {got!r}"
                )
    return MaxFlattenResult(flat, matrix, tuple(block), tuple(stats), tuple(gen.renames))


__all__ = [
    "Atom",
    "And",
    "Quant",
    "Formula",
    "FormulaError",
    "FlattenVerificationError",
    "Rule2EmptyError",
    "EXISTS",
    "EXISTS_K",
    "MAX_BLOCK",
    "parse_formula",
    "evaluate",
    "flatten_counting",
    "flatten_max",
    "PrenexResult",
    "MaxFlattenResult",
    "FlattenStats",
]
