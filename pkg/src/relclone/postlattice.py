"""Classification of Boolean relation sets into the max-closure lattice.

Labels follow the two-constant co-clone naming (IBF, IR*, IM2, IS chains,
ID*, IL*, IN2, II2).  The OR-family chains are the IS*_0 / IS*_02 labels and
the NAND-family chains their 0/1 duals, matching the basis tables; chain
membership is the upward-closure (filter) test with the r bound, constants
discriminated by invariance under the constant-1 (resp. constant-0) function.

The lattice's Hasse diagram is reconstructed from the basis table plus the
inclusion lemmas; chains are truncated at a configurable k and the truncated
chain tops link to II2 in place of the (unreachable) limit labels.
"""

from __future__ import annotations

import enum
import math
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .closure import ClosureResult, ClosureSignature, close
from .formulas import MAX_BLOCK, And, Atom, Quant, evaluate
from .relations import (
    FilterAnalysis,
    Relation,
    RelationError,
    StructuralPredicates,
    catalog,
    filter_property,
    from_predicate,
    structural_predicates,
)

_PLAIN_TAGS = (
    "IBF",
    "IR0",
    "IR1",
    "IR2",
    "IM2",
    "IS0",
    "IS1",
    "IS02",
    "IS12",
    "ID",
    "ID1",
    "IL",
    "IL0",
    "IL1",
    "IL2",
    "IL3",
    "IN2",
    "II2",
)
_CHAIN_TAGS = ("ISk0", "ISk1", "ISk02", "ISk12")
_CHAIN_SUFFIX = {"ISk0": "0", "ISk1": "1", "ISk02": "02", "ISk12": "12"}
_LIMIT_OF_CHAIN = {"ISk0": "IS0", "ISk1": "IS1", "ISk02": "IS02", "ISk12": "IS12"}


class ClassificationError(ValueError):
    pass


@dataclass(frozen=True)
class Label:
    tag: str
    k: int | None = None

    def __post_init__(self) -> None:
        if self.tag in _CHAIN_TAGS:
            if self.k is None or self.k < 2:
                raise ClassificationError(f"chain label {self.tag} needs k >= 2")
        elif self.tag in _PLAIN_TAGS:
            if self.k is not None:
                raise ClassificationError(f"label {self.tag} takes no chain parameter")
        else:
            raise ClassificationError(f"unknown label tag {self.tag!r}")

    def __str__(self) -> str:
        if self.tag in _CHAIN_TAGS:
            return f"IS{self.k}_{_CHAIN_SUFFIX[self.tag]}"
        if self.tag in ("IS0", "IS1", "IS02", "IS12"):
            return f"IS_{self.tag[2:]}"
        return self.tag

    @staticmethod
    def parse(text: str) -> "Label":
        t = text.strip()
        for tag in _PLAIN_TAGS:
            if t == tag or (tag.startswith("IS") and t == f"IS_{tag[2:]}"):
                return Label(tag)
        if t.startswith("IS") and "_" in t:
            num, _, suffix = t[2:].partition("_")
            for tag, suf in _CHAIN_SUFFIX.items():
                if suf == suffix:
                    try:
                        return Label(tag, int(num))
                    except ValueError:
                        break
        raise ClassificationError(f"cannot parse label {text!r}")


class ApClass(enum.Enum):
    FP = "FP"
    BIS_EQUIVALENT = "BIS_EQUIVALENT"
    SAT_EQUIVALENT = "SAT_EQUIVALENT"


# -- structural label membership ------------------------------------------------


def _require_boolean(rel: Relation) -> None:
    if rel.domain_size != 2:
        raise ClassificationError("Boolean classification requires d = 2")


def _pairwise_system_match(rel: Relation, with_constants: bool) -> bool:
    """Is rel exactly the solution set of its forced two-variable parity system
    (plus forced constants when allowed)?  The empty relation passes: parity
    systems can be inconsistent."""
    if rel.is_empty:
        return True
    n = rel.arity
    rows = rel.tuple_array()
    parities = {}
    for i in range(n):
        for j in range(i + 1, n):
            x = rows[:, i] ^ rows[:, j]
            if (x == x[0]).all():
                parities[(i, j)] = int(x[0])
    forced = {}
    if with_constants:
        for i in range(n):
            col = rows[:, i]
            if (col == col[0]).all():
                forced[i] = int(col[0])

    def pred(t):
        for (i, j), c in parities.items():
            if (t[i] ^ t[j]) != c:
                return False
        for i, v in forced.items():
            if t[i] != v:
                return False
        return True

    return from_predicate(2, n, pred) == rel


def _or_side_membership(rel: Relation, r_bound: int | None, need_all_ones: bool) -> bool:
    fa = filter_property(rel)
    if not fa.is_filter:
        return False
    if r_bound is not None and fa.r > r_bound:
        return False
    if need_all_ones:
        return not rel.is_empty and rel.contains_constant(1)
    return True


def label_membership(rel: Relation, label: Label) -> bool:
    """Structural membership test; sound for certifying NON-membership."""
    _require_boolean(rel)
    tag = label.tag
    if tag == "II2":
        return True
    if tag == "IN2":
        return structural_predicates(rel).is_self_complement
    if tag == "IM2":
        sp = structural_predicates(rel)
        return sp.is_and_closed and sp.is_or_closed
    if tag in ("IBF", "IR0", "IR1", "IR2"):
        sp = structural_predicates(rel)
        if not sp.is_trivial:
            return False
        if tag == "IR2":
            return True
        if rel.is_empty:
            return False
        w = sp.trivial_witness
        if tag == "IBF":
            return not w.zeros and not w.ones
        if tag == "IR0":
            return not w.ones
        return not w.zeros
    if tag in ("IL", "IL0", "IL1", "IL2", "IL3"):
        sp = structural_predicates(rel)
        if not sp.is_affine:
            return False
        if tag == "IL2":
            return True
        if tag == "IL3":
            return sp.is_self_complement
        if tag == "IL0":
            return not rel.is_empty and rel.contains_constant(0)
        if tag == "IL1":
            return not rel.is_empty and rel.contains_constant(1)
        return not rel.is_empty and rel.contains_constant(0) and rel.contains_constant(1)
    if tag == "ID":
        sp = structural_predicates(rel)
        return sp.is_affine and _pairwise_system_match(rel, with_constants=False)
    if tag == "ID1":
        sp = structural_predicates(rel)
        return sp.is_affine and _pairwise_system_match(rel, with_constants=True)
    if tag in ("ISk0", "IS0"):
        return _or_side_membership(rel, label.k, need_all_ones=True)
    if tag in ("ISk02", "IS02"):
        return _or_side_membership(rel, label.k, need_all_ones=False)
    if tag in ("ISk1", "IS1"):
        return _or_side_membership(rel.flip_values(), label.k, need_all_ones=True)
    if tag in ("ISk12", "IS12"):
        return _or_side_membership(rel.flip_values(), label.k, need_all_ones=False)
    raise ClassificationError(f"unsupported label {label}")


# -- classification ----------------------------------------------------------------


@dataclass
class ClassificationEvidence:
    branch: str
    predicates: tuple[StructuralPredicates, ...]
    filters: tuple[FilterAnalysis | None, ...]
    chain_r: int | None = None
    notes: str = ""


@dataclass
class ClassificationResult:
    label: Label
    evidence: ClassificationEvidence


_AFFINE_ORDER = ("ID", "IL", "ID1", "IL0", "IL1", "IL3", "IL2")


def classify_max_coclone(relations: Sequence[Relation]) -> ClassificationResult:
    """Smallest lattice label whose max-closure contains the given relations."""
    rels = list(relations)
    if not rels:
        raise ClassificationError("classification needs a nonempty relation set")
    for r in rels:
        _require_boolean(r)
    preds = tuple(structural_predicates(r) for r in rels)
    none_filters: tuple[FilterAnalysis | None, ...] = tuple(None for _ in rels)

    if all(p.is_trivial for p in preds):
        for tag in ("IBF", "IR0", "IR1"):
            if all(label_membership(r, Label(tag)) for r in rels):
                return ClassificationResult(
                    Label(tag), ClassificationEvidence("trivial", preds, none_filters)
                )
        return ClassificationResult(
            Label("IR2"), ClassificationEvidence("trivial", preds, none_filters)
        )

    if all(p.is_affine for p in preds):
        for tag in _AFFINE_ORDER:
            if all(label_membership(r, Label(tag)) for r in rels):
                return ClassificationResult(
                    Label(tag), ClassificationEvidence("affine", preds, none_filters)
                )
        raise ClassificationError("affine sub-classification fell through (bug)")

    if all(p.is_self_complement for p in preds):
        return ClassificationResult(
            Label("IN2"), ClassificationEvidence("self-complement", preds, none_filters)
        )

    if all(p.is_and_closed and p.is_or_closed for p in preds):
        return ClassificationResult(
            Label("IM2"), ClassificationEvidence("log-supermodular", preds, none_filters)
        )

    for side, closed in (("or", lambda p: p.is_or_closed), ("and", lambda p: p.is_and_closed)):
        if not all(closed(p) for p in preds):
            continue
        oriented = rels if side == "or" else [r.flip_values() for r in rels]
        fas = tuple(filter_property(r) for r in oriented)
        if not all(fa.is_filter for fa in fas):
            return ClassificationResult(
                Label("II2"),
                ClassificationEvidence(f"{side}-monotone-nonfilter", preds, fas),
            )
        r_val = max(fa.r for fa in fas)
        assert r_val >= 2, "filter chain with r <= 1 should have classified as trivial"
        ones_ok = all((not r.is_empty) and r.contains_constant(1) for r in oriented)
        if side == "or":
            tag = "ISk0" if ones_ok else "ISk02"
        else:
            tag = "ISk1" if ones_ok else "ISk12"
        return ClassificationResult(
            Label(tag, r_val),
            ClassificationEvidence(f"{side}-monotone-filter", preds, fas, chain_r=r_val),
        )

    return ClassificationResult(
        Label("II2"), ClassificationEvidence("unconstrained", preds, none_filters)
    )


def trichotomy(relations: Sequence[Relation]) -> ApClass:
    """Approximation class: affine => FP; inside IM2 => #BIS; else #SAT."""
    rels = list(relations)
    if not rels:
        raise ClassificationError("trichotomy needs a nonempty relation set")
    for r in rels:
        _require_boolean(r)
    preds = [structural_predicates(r) for r in rels]
    if all(p.is_affine for p in preds):
        return ApClass.FP
    if all(p.is_and_closed and p.is_or_closed for p in preds):
        return ApClass.BIS_EQUIVALENT
    return ApClass.SAT_EQUIVALENT


# -- basis table ----------------------------------------------------------------------


def _parity(k: int, c: int) -> Relation:
    return catalog("affine", k=k, c=c)


def max_basis(label: Label, limit_arity: int = 4) -> tuple[Relation, ...]:
    """Generating set per the basis table; limit labels instantiated to limit_arity."""
    eq = catalog("eq")
    d0, d1 = catalog("delta0"), catalog("delta1")
    tag, k = label.tag, label.k
    if tag == "IBF":
        return (eq,)
    if tag == "IR0":
        return (eq, d0)
    if tag == "IR1":
        return (eq, d1)
    if tag == "IR2":
        return (eq, d0, d1)
    if tag == "IM2":
        return (catalog("imp"),)
    if tag == "ISk0":
        return (eq, catalog("or", k=k))
    if tag == "IS0":
        return (eq, *(catalog("or", k=j) for j in range(1, limit_arity + 1)))
    if tag == "ISk1":
        return (eq, catalog("nand", k=k))
    if tag == "IS1":
        return (eq, *(catalog("nand", k=j) for j in range(1, limit_arity + 1)))
    if tag == "ISk02":
        return (eq, d0, catalog("or", k=k))
    if tag == "IS02":
        return (eq, d0, *(catalog("or", k=j) for j in range(1, limit_arity + 1)))
    if tag == "ISk12":
        return (eq, d1, *(catalog("nand", k=j) for j in range(1, k + 1)))
    if tag == "IS12":
        return (eq, d1, *(catalog("nand", k=j) for j in range(1, limit_arity + 1)))
    if tag == "ID":
        return (eq, catalog("neq"))
    if tag == "ID1":
        return (eq, catalog("neq"), d0, d1)
    if tag == "IL":
        return (_parity(2, 0), _parity(4, 0))
    if tag == "IL0":
        return (_parity(1, 0), _parity(2, 0), _parity(3, 0))
    if tag == "IL1":
        return (_parity(1, 1), _parity(2, 0), _parity(3, 1))
    if tag == "IL2":
        return tuple(_parity(j, c) for j in (1, 2, 3) for c in (0, 1))
    if tag == "IL3":
        return tuple(_parity(j, c) for j in (2, 4) for c in (0, 1))
    if tag == "IN2":
        return (catalog("compl", k=3, l=0),)
    if tag == "II2":
        return (catalog("imp"), catalog("or"))
    raise ClassificationError(f"no basis for label {label}")


def finite_basis_labels(kmax: int = 4) -> list[Label]:
    """The basis-table rows with finite bases, chains instantiated at 2..kmax."""
    out = [Label(t) for t in ("IBF", "IR0", "IR1", "IR2", "IM2", "ID", "ID1", "IL", "IL0", "IL1", "IL2", "IL3", "IN2", "II2")]
    for tag in _CHAIN_TAGS:
        for k in range(2, kmax + 1):
            out.append(Label(tag, k))
    return out


# -- the self-complement generation witness ------------------------------------------


@dataclass
class In2Report:
    k: int
    aux_count: int
    ok: bool
    result: Relation
    expected: Relation
    profile: dict[int, int]  # zeros in the x-assignment -> extension count
    constant: int | None  # the common nonzero extension count
    formula: Quant


def in2_witness(k: int = 2) -> In2Report:
    """Derive the all-but-two-constant-tuples relation of arity 2k from the
    (k+1)-ary one, measuring the auxiliary-extension profile along the way.

    The construction conjoins, over every k-subset I of the 2k main variables,
    one (k+1)-ary constraint on (x_I, u_I) plus disequalities between
    complementary auxiliaries, with a second family forcing y = x_1 off the
    diagonal; the max quantifier over all auxiliaries then yields exactly the
    target, with a flat extension profile off the two constant tuples.
    """
    if k < 2:
        raise ClassificationError("the witness construction needs k >= 2")
    n = 2 * k
    subsets = list(itertools.combinations(range(n), k))
    aux_count = 2 * len(subsets)
    if 2 ** (n + aux_count) > 1 << 24:
        raise ClassificationError(f"witness at k={k} exceeds the evaluation guard")
    compl = catalog("compl", k=k + 1, l=0)

    def q_pred(t):
        head = t[:k]
        if all(a == head[0] for a in head):
            return True
        return t[k] == t[0]

    pin = from_predicate(2, k + 1, q_pred)
    env = {"C": compl, "NEQ": catalog("neq"), "PIN": pin}
    xs = [f"x{i + 1}" for i in range(n)]
    u = {s: f"u{j}" for j, s in enumerate(subsets)}
    w = {s: f"w{j}" for j, s in enumerate(subsets)}
    atoms: list[Atom] = []
    for s in subsets:
        atoms.append(Atom("C", tuple(xs[i] for i in s) + (u[s],)))
    for s in subsets:
        comp = tuple(sorted(set(range(n)) - set(s)))
        if s < comp:
            atoms.append(Atom("NEQ", (u[s], u[comp])))
    for s in subsets:
        atoms.append(Atom("PIN", tuple(xs[i] for i in s) + (w[s],)))
    matrix = And(tuple(atoms))
    aux = [u[s] for s in subsets] + [w[s] for s in subsets]
    formula = Quant(MAX_BLOCK, tuple(aux), matrix)
    result = evaluate(formula, env, order=xs)
    expected = catalog("compl", k=n, l=0)

    from .relations import extension_counts

    rel = evaluate(matrix, env, order=tuple(xs) + tuple(aux))
    counts = extension_counts(rel, [len(xs) + 1 + i for i in range(len(aux))])
    profile: dict[int, int] = {}
    consistent = True
    for idx, c in enumerate(counts):
        zeros = n - bin(idx).count("1")
        if zeros in profile and profile[zeros] != int(c):
            consistent = False
        profile.setdefault(zeros, int(c))
    mids = {profile.get(z) for z in range(1, n)}
    constant = mids.pop() if len(mids) == 1 else None
    ok = (
        result == expected
        and consistent
        and constant is not None
        and constant > 0
        and profile.get(0) == 0
        and profile.get(n) == 0
    )
    return In2Report(k, aux_count, ok, result, expected, profile, constant, formula)


# -- Hasse diagram reconstruction and verification -------------------------------------


def hasse_edges(kmax: int = 4) -> list[tuple[Label, Label]]:
    """Cover edges of the lattice with chains truncated at kmax.

    Chain tops at kmax link to II2 standing in for the limit labels, which are
    excluded as nodes (infinite bases; classification never produces them).
    """
    if kmax < 2:
        raise ClassificationError("kmax must be at least 2")
    L = Label
    edges: list[tuple[Label, Label]] = [
        (L("IBF"), L("IR0")),
        (L("IBF"), L("IR1")),
        (L("IBF"), L("ID")),
        (L("IBF"), L("IL")),
        (L("IR0"), L("IR2")),
        (L("IR0"), L("IL0")),
        (L("IR0"), L("ISk1", 2)),
        (L("IR1"), L("IR2")),
        (L("IR1"), L("IL1")),
        (L("IR1"), L("ISk0", 2)),
        (L("IR2"), L("IM2")),
        (L("IR2"), L("ID1")),
        (L("IR2"), L("ISk02", 2)),
        (L("IR2"), L("ISk12", 2)),
        (L("ID"), L("ID1")),
        (L("ID"), L("IL3")),
        (L("ID1"), L("IL2")),
        (L("IL"), L("IL0")),
        (L("IL"), L("IL1")),
        (L("IL"), L("IL3")),
        (L("IL0"), L("IL2")),
        (L("IL1"), L("IL2")),
        (L("IL3"), L("IL2")),
        (L("IL3"), L("IN2")),
        (L("IL2"), L("II2")),
        (L("IM2"), L("II2")),
        (L("IN2"), L("II2")),
    ]
    for side0, side2 in (("ISk0", "ISk02"), ("ISk1", "ISk12")):
        for k in range(2, kmax):
            edges.append((L(side0, k), L(side0, k + 1)))
            edges.append((L(side2, k), L(side2, k + 1)))
        for k in range(2, kmax + 1):
            edges.append((L(side0, k), L(side2, k)))
        edges.append((L(side2, kmax), L("II2")))
    return edges


@dataclass
class EdgeReport:
    lower: Label
    upper: Label
    basis_in_upper: bool  # every lower-basis relation passes the upper label test
    closure_in_upper: bool  # every bounded-closure element passes the upper label test
    closure_subset: bool | None  # bounded run containment (None when skipped)
    strict: bool  # some upper-basis relation fails the lower label test
    lower_stop: str
    upper_stop: str | None

    @property
    def ok(self) -> bool:
        return self.basis_in_upper and self.closure_in_upper and self.strict


@dataclass
class SpotReport:
    label: Label
    relations_checked: int
    failures: tuple[Relation, ...]
    stop_reason: str

    @property
    def ok(self) -> bool:
        return not self.failures


@dataclass
class LatticeReport:
    kmax: int
    edges: list[EdgeReport]
    spots: list[SpotReport]

    @property
    def ok(self) -> bool:
        return all(e.ok for e in self.edges) and all(s.ok for s in self.spots)


def _limit_label(label: Label) -> Label:
    """The r-unbounded variant used to label-check closure elements."""
    if label.tag in _CHAIN_TAGS:
        return label
    return label


def verify_lattice(
    kmax: int = 4,
    *,
    inclusion_signature: ClosureSignature | None = None,
    spot_labels: Sequence[Label] = (),
    spot_signature: ClosureSignature | None = None,
    jobs: int = 1,
) -> LatticeReport:
    """Edge-by-edge verification of the reconstructed Hasse diagram.

    Inclusion evidence per edge: (a) lower basis passes the upper structural
    test, (b) every element of the bounded lower closure passes the upper
    structural test, (c) bounded-run containment where the upper run is
    available (skipped for II2, whose bounded closure is everything).
    Strictness: an upper-basis generator failing the lower structural test.
    """
    if inclusion_signature is None:
        inclusion_signature = ClosureSignature.max_block(
            result_arity_cap=3,
            intermediate_arity_cap=4,
            frontier_budget=40000,
            iteration_limit=8,
            op_budget=1_500_000,
        )
    if spot_signature is None:
        spot_signature = ClosureSignature.max_block(
            result_arity_cap=3,
            intermediate_arity_cap=7,
            frontier_budget=4000,
            iteration_limit=3,
            op_budget=1_200_000,
        )
    edges = hasse_edges(kmax)
    labels = sorted({l for e in edges for l in e}, key=str)
    runs: dict[Label, ClosureResult] = {}

    def run_closure(label: Label) -> tuple[Label, ClosureResult | None]:
        if label.tag == "II2":
            return label, None
        return label, close(list(max_basis(label)), inclusion_signature, d=2)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            for label, res in ex.map(run_closure, labels):
                if res is not None:
                    runs[label] = res
    else:
        for label in labels:
            _, res = run_closure(label)
            if res is not None:
                runs[label] = res

    def check_edge(edge: tuple[Label, Label]) -> EdgeReport:
        lo, up = edge
        basis_ok = all(label_membership(r, up) for r in max_basis(lo))
        lo_run = runs[lo]
        closure_ok = all(label_membership(r, up) for r in lo_run.retained)
        subset: bool | None = None
        up_stop = None
        if up in runs:
            up_run = runs[up]
            up_stop = up_run.stop_reason
            members = set(up_run.retained)
            subset = all(r in members for r in lo_run.retained)
        strict = any(not label_membership(r, lo) for r in max_basis(up))
        return EdgeReport(
            lo, up, basis_ok, closure_ok, subset, strict, lo_run.stop_reason, up_stop
        )

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            edge_reports = list(ex.map(check_edge, edges))
    else:
        edge_reports = [check_edge(e) for e in edges]

    spots = []
    for label in spot_labels:
        res = close(list(max_basis(label)), spot_signature, d=2)
        bad = tuple(r for r in res.retained if not label_membership(r, _limit_label(label)))
        spots.append(SpotReport(label, len(res.retained), bad, res.stop_reason))

    return LatticeReport(kmax, edge_reports, spots)


def emit_dot(report: LatticeReport) -> str:
    """Graphviz rendering of the verified diagram, edge status as attributes."""
    lines = [
        "digraph max_coclone_lattice {",
        "  rankdir=BT;",
        '  node [shape=box, fontname="Helvetica"];',
    ]
    nodes = sorted({str(l) for e in report.edges for l in (e.lower, e.upper)})
    for n in nodes:
        lines.append(f'  "{n}";')
    for e in report.edges:
        color = "forestgreen" if e.ok else "red"
        parts = []
        parts.append("incl" if (e.basis_in_upper and e.closure_in_upper) else "incl-FAIL")
        parts.append("strict" if e.strict else "strict-FAIL")
        if e.closure_subset is not None:
            parts.append("subset" if e.closure_subset else "subset-miss")
        label = "+".join(parts)
        lines.append(f'  "{e.lower}" -> "{e.upper}" [color={color}, label="{label}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


__all__ = [
    "Label",
    "ApClass",
    "ClassificationError",
    "ClassificationResult",
    "ClassificationEvidence",
    "classify_max_coclone",
    "trichotomy",
    "label_membership",
    "max_basis",
    "finite_basis_labels",
    "in2_witness",
    "In2Report",
    "hasse_edges",
    "verify_lattice",
    "LatticeReport",
    "EdgeReport",
    "SpotReport",
    "emit_dot",
]
