"""Bounded-arity fixpoint closure of relation sets, with derivation witnesses.

A closure run applies a configurable operator signature (variable
manipulation, conjunction, existential / counting / max quantifiers) to a
seed set until fixpoint, an iteration limit, or a frontier budget.  Results
are sound (every element carries a replayable derivation) but complete only
relative to the caps: "not found" is never a non-membership proof.

Operator generation uses elementary substitutions (adjacent transpositions,
identify-last-two, cylindrify-at-end) and suffix-overlap joins; composed over
iterations these realize every variable manipulation and every conjunction
scope alignment within the arity caps.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .relations import (
    Relation,
    RelationError,
    VarSubstitution,
    catalog,
    conjoin,
    exists,
    exists_k,
    max_quantify,
    substitute,
)

DEFAULT_CAPS = {2: (4, 8), 3: (3, 5)}  # d -> (result cap A, intermediate cap B)
FALLBACK_CAPS = (2, 4)


class ClosureError(ValueError):
    pass


@dataclass(frozen=True)
class ClosureSignature:
    """Which derivation operators a closure run may apply, plus its caps."""

    allow_substitution: bool = True
    allow_conjunction: bool = True
    allow_exists: bool = False
    exists_k_set: frozenset[int] = frozenset()
    exists_k_all: bool = False  # counting closure: every k in 1..d
    allow_max_single: bool = False
    allow_max_block: bool = False
    result_arity_cap: int | None = None
    intermediate_arity_cap: int | None = None
    frontier_budget: int = 200_000
    iteration_limit: int = 12
    op_budget: int = 5_000_000  # operator applications per run; exceeding it counts as budget exhaustion
    name: str = "custom"

    def __post_init__(self) -> None:
        if (
            self.result_arity_cap is not None
            and self.intermediate_arity_cap is not None
            and self.intermediate_arity_cap < self.result_arity_cap
        ):
            raise ClosureError("intermediate arity cap must be >= result arity cap")
        for k in self.exists_k_set:
            if k < 1:
                raise ClosureError("exists_k quantifiers need k >= 1")

    # -- presets ------------------------------------------------------------

    @staticmethod
    def partial_coclone(**kw) -> "ClosureSignature":
        return ClosureSignature(name="partial_coclone", **kw)

    @staticmethod
    def coclone(**kw) -> "ClosureSignature":
        return ClosureSignature(allow_exists=True, name="coclone", **kw)

    @staticmethod
    def k_exists(K: Iterable[int], **kw) -> "ClosureSignature":
        return ClosureSignature(exists_k_set=frozenset(K), name="k_exists", **kw)

    @staticmethod
    def counting(**kw) -> "ClosureSignature":
        return ClosureSignature(exists_k_all=True, name="counting", **kw)

    @staticmethod
    def max_single(**kw) -> "ClosureSignature":
        return ClosureSignature(allow_max_single=True, name="max_single", **kw)

    @staticmethod
    def max_block(**kw) -> "ClosureSignature":
        return ClosureSignature(allow_max_block=True, name="max_block", **kw)

    def resolved(self, d: int) -> "ClosureSignature":
        a, b = self.result_arity_cap, self.intermediate_arity_cap
        if a is None or b is None:
            da, db = DEFAULT_CAPS.get(d, FALLBACK_CAPS)
            a = da if a is None else a
            b = max(db if b is None else b, a)
        ks = self.exists_k_set
        if self.exists_k_all:
            ks = frozenset(range(1, d + 1))
        return replace(self, result_arity_cap=a, intermediate_arity_cap=b, exists_k_set=ks, exists_k_all=False)


# -- derivations ----------------------------------------------------------------


@dataclass(frozen=True)
class Derivation:
    """Replayable witness tree for a derived relation."""

    op: str  # seed | subst | conjoin | exists | exists_k | max
    params: tuple
    children: tuple["Derivation", ...] = ()

    def replay(self, seeds: Sequence[Relation]) -> Relation:
        if self.op == "seed":
            return seeds[self.params[0]]
        if self.op == "subst":
            mapping, out_arity = self.params
            return substitute(self.children[0].replay(seeds), VarSubstitution(mapping, out_arity))
        if self.op == "conjoin":
            scope1, scope2, arity = self.params
            return conjoin(
                self.children[0].replay(seeds), scope1, self.children[1].replay(seeds), scope2, arity
            )
        if self.op == "exists":
            return exists(self.children[0].replay(seeds), [self.params[0]])
        if self.op == "exists_k":
            k, pos = self.params
            return exists_k(self.children[0].replay(seeds), pos, k)
        if self.op == "max":
            return max_quantify(self.children[0].replay(seeds), self.params[0])
        raise ClosureError(f"unknown derivation op {self.op!r}")

    def to_sexpr(self) -> str:
        if self.op == "seed":
            return f"(seed {self.params[0]})"
        inner = " ".join(c.to_sexpr() for c in self.children)
        if self.op == "subst":
            mapping, out_arity = self.params
            return f"(subst ({' '.join(map(str, mapping))}) {out_arity} {inner})"
        if self.op == "conjoin":
            s1, s2, arity = self.params
            return (
                f"(conjoin ({' '.join(map(str, s1))}) ({' '.join(map(str, s2))}) {arity} {inner})"
            )
        if self.op == "exists":
            return f"(exists {self.params[0]} {inner})"
        if self.op == "exists_k":
            return f"(exists_k {self.params[0]} {self.params[1]} {inner})"
        if self.op == "max":
            return f"(max ({' '.join(map(str, self.params[0]))}) {inner})"
        raise ClosureError(f"unknown derivation op {self.op!r}")

    @property
    def depth(self) -> int:
        return 1 + max((c.depth for c in self.children), default=0)


@dataclass
class ClosureResult:
    domain_size: int
    signature: ClosureSignature
    seeds: tuple[Relation, ...]
    reported: list[Relation]  # arity <= A, canonical order
    retained: list[Relation]  # arity <= B, canonical order
    derivations: dict[Relation, Derivation]
    converged: bool
    budget_exhausted: bool
    iterations: int

    @property
    def stop_reason(self) -> str:
        if self.converged:
            return "fixpoint"
        if self.budget_exhausted:
            return "budget"
        return "iteration-limit"

    def __contains__(self, rel: Relation) -> bool:
        return rel in self.derivations

    def derivation(self, rel: Relation) -> Derivation:
        return self.derivations[rel]


class _Stop(Exception):
    pass


class _Found(Exception):
    pass


def _rel_key(rel: Relation) -> tuple[int, int]:
    return (rel.arity, rel.bits)


def close(
    relations: Sequence[Relation],
    signature: ClosureSignature,
    d: int | None = None,
    target: Relation | None = None,
) -> ClosureResult:
    """Deterministic bounded fixpoint; the equality relation is always seeded."""
    rels = list(relations)
    if d is None:
        if not rels:
            raise ClosureError("empty seed set needs an explicit domain size")
        d = rels[0].domain_size
    for r in rels:
        if r.domain_size != d:
            raise ClosureError("seed relations must share one domain size")
    sig = signature.resolved(d)
    cap_b = sig.intermediate_arity_cap
    cap_a = sig.result_arity_cap
    ks = sorted(sig.exists_k_set)
    dom = d

    seeds: list[Relation] = []
    for r in [catalog("eq", d=dom), *rels]:
        if r not in seeds:
            seeds.append(r)
    seeds_t = tuple(seeds)

    known: dict[Relation, Derivation] = {}
    order: list[Relation] = []
    arrs: dict[Relation, "object"] = {}  # cached bool arrays for the join fast path
    state = {"budget": False, "hit": None, "ops": 0}

    def emit(rel: Relation, deriv: Derivation, pending: dict) -> None:
        state["ops"] += 1
        if state["ops"] > sig.op_budget:
            state["budget"] = True
            raise _Stop
        if rel in known or rel in pending:
            return
        if len(known) + len(pending) >= sig.frontier_budget:
            state["budget"] = True
            raise _Stop
        pending[rel] = deriv
        if target is not None and rel == target:
            state["hit"] = deriv
            raise _Found

    def merge(pending: dict) -> list[Relation]:
        batch = sorted(pending, key=_rel_key)
        for r in batch:
            known[r] = pending[r]
            order.append(r)
            arrs[r] = r.to_bool_array()
        return batch

    pending: dict[Relation, Derivation] = {}
    try:
        for i, r in enumerate(seeds_t):
            if r.arity <= cap_b:
                emit(r, Derivation("seed", (i,)), pending)
    except (_Stop, _Found):
        pass
    frontier = merge(pending)

    iterations = 0
    converged = False
    while state["hit"] is None and not state["budget"]:
        if not frontier:
            converged = True
            break
        if iterations >= sig.iteration_limit:
            break
        iterations += 1
        pending = {}
        try:
            for r in frontier:
                dv = known[r]
                n = r.arity
                if sig.allow_substitution and n >= 1:
                    for i in range(1, n):  # adjacent transpositions
                        mapping = list(range(1, n + 1))
                        mapping[i - 1], mapping[i] = mapping[i], mapping[i - 1]
                        mp = tuple(mapping)
                        emit(
                            substitute(r, VarSubstitution(mp, n)),
                            Derivation("subst", (mp, n), (dv,)),
                            pending,
                        )
                    if n >= 2:  # identify last two positions
                        mp = tuple(list(range(1, n - 1)) + [n - 1, n - 1])
                        emit(
                            substitute(r, VarSubstitution(mp, n - 1)),
                            Derivation("subst", (mp, n - 1), (dv,)),
                            pending,
                        )
                    if n + 1 <= cap_b:  # cylindrify with a fresh last position
                        mp = tuple(range(1, n + 1))
                        emit(
                            substitute(r, VarSubstitution(mp, n + 1)),
                            Derivation("subst", (mp, n + 1), (dv,)),
                            pending,
                        )
                if sig.allow_exists and n >= 1:
                    for pos in range(1, n + 1):
                        emit(exists(r, [pos]), Derivation("exists", (pos,), (dv,)), pending)
                if ks and n >= 1:
                    for k in ks:
                        for pos in range(1, n + 1):
                            emit(
                                exists_k(r, pos, k),
                                Derivation("exists_k", (k, pos), (dv,)),
                                pending,
                            )
                if sig.allow_max_single and n >= 1:
                    for pos in range(1, n + 1):
                        emit(
                            max_quantify(r, [pos]),
                            Derivation("max", ((pos,),), (dv,)),
                            pending,
                        )
                if sig.allow_max_block and n >= 1:
                    for size in range(1, n + 1):
                        for js in itertools.combinations(range(1, n + 1), size):
                            emit(
                                max_quantify(r, js),
                                Derivation("max", (js,), (dv,)),
                                pending,
                            )
            if sig.allow_conjunction:
                snapshot = list(order)
                for a in frontier:
                    da = known[a]
                    arr_a = arrs[a]
                    for b in snapshot:
                        db = known[b]
                        arr_b = arrs[b]
                        for first, second, fa, sa, d1, d2 in (
                            (a, b, arr_a, arr_b, da, db),
                            (b, a, arr_b, arr_a, db, da),
                        ):
                            n1, n2 = first.arity, second.arity
                            for o in range(0, min(n1, n2) + 1):
                                m = n1 + n2 - o
                                if m > cap_b or m == 0:
                                    continue
                                # suffix-overlap join: first at 1..n1, second at n1-o+1..m
                                out = np.repeat(fa, dom ** (m - n1)) & np.tile(sa, dom ** (m - n2))
                                rel = Relation.from_bool_array(dom, m, out)
                                s1 = tuple(range(1, n1 + 1))
                                s2 = tuple(range(n1 - o + 1, n1 - o + n2 + 1))
                                emit(rel, Derivation("conjoin", (s1, s2, m), (d1, d2)), pending)
        except (_Stop, _Found):
            pass
        frontier = merge(pending)

    retained = sorted(known, key=_rel_key)
    reported = [r for r in retained if r.arity <= cap_a]
    return ClosureResult(
        domain_size=dom,
        signature=sig,
        seeds=seeds_t,
        reported=reported,
        retained=retained,
        derivations=dict(known),
        converged=converged and state["hit"] is None,
        budget_exhausted=state["budget"],
        iterations=iterations,
    )


@dataclass
class MemberResult:
    target: Relation
    derivation: Derivation | None
    status: str  # found | not-found-fixpoint | not-found-budget | not-found-iterations

    @property
    def found(self) -> bool:
        return self.derivation is not None


def member(
    target: Relation,
    relations: Sequence[Relation],
    signature: ClosureSignature,
    d: int | None = None,
) -> MemberResult:
    """Bounded membership search; a miss is NOT a non-membership proof."""
    result = close(relations, signature, d=d, target=target)
    deriv = result.derivations.get(target)
    if deriv is not None:
        return MemberResult(target, deriv, "found")
    suffix = {"fixpoint": "not-found-fixpoint", "budget": "not-found-budget"}.get(
        result.stop_reason, "not-found-iterations"
    )
    return MemberResult(target, None, suffix)


# -- Example-3 oracle ---------------------------------------------------------------


def relm_oracle(m: int, rel: Relation, variant: str = "max", K: Iterable[int] = ()) -> bool:
    """Structural membership test for the closures generated by rel_m.

    Variants: "kexists" (the K-existential partial closure, thresholds
    D_k+...+D_m for k in K), "counting" (all thresholds), "max" (threshold
    D_m only).  The test admits the seeded equality relation (equality
    refinement of the class partition) and the empty relation where a k>=2
    counting quantifier exists to produce it.
    """
    from .relations import from_predicate, rel_m_class_of, rel_m_domain_size

    d = rel_m_domain_size(m)
    if rel.domain_size != d:
        raise RelationError(f"relation domain {rel.domain_size} != rel_{m} domain {d}")
    if variant not in ("kexists", "counting", "max"):
        raise ClosureError(f"unknown relm variant {variant!r}")
    ks = sorted(set(K))
    if variant == "kexists" and not ks:
        raise ClosureError("kexists variant needs a K set")

    if variant == "kexists":
        thresholds = [k for k in ks if k >= 2]
        allow_empty = bool(thresholds) or any(k > m for k in ks)
        thresholds = [k for k in thresholds if k <= m]
    elif variant == "counting":
        thresholds = list(range(2, m + 1))
        allow_empty = True
    else:
        thresholds = [m] if m >= 2 else []
        allow_empty = False

    if rel.is_empty:
        return allow_empty

    n = rel.arity
    if n == 0:
        return True  # the nonempty zero-ary relation is the empty conjunction
    rows = rel.tuple_array()
    classes = [rel_m_class_of(m, v) for v in range(d)]

    eq_pairs = [
        (i, j)
        for i in range(n)
        for j in range(i + 1, n)
        if (rows[:, i] == rows[:, j]).all()
    ]
    rel_pairs = [
        (i, j)
        for i in range(n)
        for j in range(i + 1, n)
        if all(classes[a] == classes[b] for a, b in zip(rows[:, i], rows[:, j]))
    ]
    forced: dict[int, int] = {}  # position -> strongest forced threshold
    for k in thresholds:
        for i in range(n):
            if all(classes[v] >= k for v in rows[:, i]):
                forced[i] = max(forced.get(i, 0), k)

    def pred(t: tuple[int, ...]) -> bool:
        for i, j in eq_pairs:
            if t[i] != t[j]:
                return False
        for i, j in rel_pairs:
            if classes[t[i]] != classes[t[j]]:
                return False
        for i, k in forced.items():
            if classes[t[i]] < k:
                return False
        return True

    return from_predicate(d, n, pred) == rel


# -- separation of block max from single-variable max --------------------------------


@dataclass
class SeparationReport:
    found: bool
    relation: Relation | None
    derivation: Derivation | None
    obstruction: "object | None"  # PartialFunction
    polymorphisms_checked: int
    relations_checked: int
    notes: str


def mange_vs_mang_witness(
    relations: Sequence[Relation],
    signature: ClosureSignature | None = None,
    fn_arity_cap: int = 2,
    d: int = 2,
) -> SeparationReport:
    """Search for R in the bounded block-max closure killed by a surjective polymorphism.

    On a two-element domain single-variable max quantification is equivalent
    to ordinary existential or universal quantification, so the single-max
    closure stays inside the relations invariant under every surjective total
    polymorphism of the generators.  A derived relation NOT preserved by such
    a polymorphism therefore separates the block-max closure from the
    single-max closure.
    """
    from .functions import preserves, surjective_polymorphisms

    if d != 2:
        raise ClosureError("separation witness search is implemented for d = 2")
    if signature is None:
        signature = ClosureSignature.max_block(
            result_arity_cap=2,
            intermediate_arity_cap=4,
            frontier_budget=2000,
            iteration_limit=6,
            op_budget=700_000,
        )
    rels = list(relations)
    if not rels:
        return SeparationReport(False, None, None, None, 0, 0, "empty generator set: closure is equality-generated")
    surj = list(surjective_polymorphisms(rels, fn_arity_cap, d=d))
    result = close(rels, signature, d=d)
    checked = 0
    for rel in result.reported:
        checked += 1
        for fn in surj:
            if not preserves(fn, rel):
                return SeparationReport(
                    True,
                    rel,
                    result.derivations[rel],
                    fn,
                    len(surj),
                    checked,
                    "derived relation not invariant under a surjective polymorphism of the generators; "
                    "single-variable max reduces to exists/forall on a two-element domain, which such "
                    "polymorphisms preserve",
                )
    return SeparationReport(
        False,
        None,
        None,
        None,
        len(surj),
        checked,
        f"no witness found within caps ({result.stop_reason})",
    )


__all__ = [
    "ClosureSignature",
    "ClosureResult",
    "ClosureError",
    "Derivation",
    "MemberResult",
    "close",
    "member",
    "relm_oracle",
    "mange_vs_mang_witness",
    "SeparationReport",
]
