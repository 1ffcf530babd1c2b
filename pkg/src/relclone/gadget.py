"""Max-implementation gadgets and the approximation-preserving reduction.

A max-implementation of a target relation R is a CSP instance over variables
V_x + V_y such that an assignment of V_x lies in R exactly when its number of
extensions to full solutions equals the global maximum M.  The reduction
replaces each R-constraint of an input instance by m fresh copies of the
gadget's V_y part, chosen so that relative error stays below the requested
epsilon; counts and the estimate are exact (big integers / rationals).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .counting import Constraint, CspInstance, InstanceError, count
from .relations import Relation, ResourceLimitError, extension_counts
from .counting import instance_relation

COUNT_WORK_CAP = 1 << 26  # bound on predicted #P2 for exact verification
BASE_VARS_CAP = 1 << 20  # bound on d**|V1|


class GadgetError(ValueError):
    pass


@dataclass(frozen=True)
class MaxImplementation:
    """Verified gadget: target membership == attaining the extension maximum."""

    instance: CspInstance
    x_vars: tuple[str, ...]
    y_vars: tuple[str, ...]
    target: Relation
    extension_max: int

    @staticmethod
    def build(
        inst: CspInstance,
        x_vars: Sequence[str],
        y_vars: Sequence[str],
        target: Relation,
    ) -> "MaxImplementation":
        xs, ys = tuple(x_vars), tuple(y_vars)
        if set(xs) | set(ys) != set(inst.variables) or set(xs) & set(ys):
            raise GadgetError("x_vars and y_vars must partition the instance variables")
        if len(xs) != target.arity:
            raise GadgetError("target arity must match the x-variable count")
        if target.domain_size != inst.domain_size:
            raise GadgetError("target domain mismatch")
        sol = instance_relation(inst)
        pos = {v: i + 1 for i, v in enumerate(inst.variables)}
        y_pos = [pos[v] for v in ys]
        # reorder so the x-part is the outer tuple in target's variable order
        counts = extension_counts(sol, y_pos) if ys else sol.to_bool_array().astype(int)
        outer_vars = [v for v in inst.variables if v not in set(ys)]
        m = int(counts.max()) if counts.size else 0
        d = inst.domain_size
        for idx, c in enumerate(counts.reshape(-1)):
            digits = []
            j = idx
            for _ in range(len(outer_vars)):
                digits.append(j % d)
                j //= d
            digits.reverse()
            by_name = dict(zip(outer_vars, digits))
            x_tuple = tuple(by_name[v] for v in xs)
            in_target = target.contains(x_tuple)
            if in_target != (int(c) == m):
                raise GadgetError(
                    f"not a max-implementation: x={x_tuple} has {int(c)} extensions, max {m}, "
                    f"target membership {in_target}"
                )
        return MaxImplementation(inst, xs, ys, target, m)


@dataclass(frozen=True)
class ApReduction:
    instance: CspInstance  # P2, over the gadget's base language
    m: int
    extension_max: int
    target_constraints: int  # l: number of replaced constraints
    epsilon: Fraction

    @property
    def scale(self) -> int:
        return self.extension_max ** (self.target_constraints * self.m)


def _as_fraction(eps) -> Fraction:
    f = Fraction(str(eps)) if isinstance(eps, float) else Fraction(eps)
    if not 0 < f < 1:
        raise GadgetError(f"epsilon must lie in (0,1), got {f}")
    return f


def replication_count(n_base_vars: int, d: int, extension_max: int, eps) -> int:
    """Smallest m with d**|V1| * ((M-1)/M)**m < eps (exact arithmetic).

    With M = 1 a non-member of the target contributes zero extensions and a
    single copy already makes the reduction exact.
    """
    f = _as_fraction(eps)
    m_ext = extension_max
    if m_ext <= 1:
        return 1
    est = (n_base_vars * math.log(d) - math.log(f)) / (math.log(m_ext) - math.log(m_ext - 1))
    m = max(1, math.floor(est))
    lhs = Fraction(d**n_base_vars)
    while lhs * Fraction(m_ext - 1, m_ext) ** m >= f:
        m += 1
    while m > 1 and lhs * Fraction(m_ext - 1, m_ext) ** (m - 1) < f:
        m -= 1
    return m


def ap_gadget(p1: CspInstance, gadget: MaxImplementation, eps) -> ApReduction:
    """Build P2 from P1 by replacing every target-relation constraint.

    For the i-th replaced constraint (scope s_i) and j in 1..m, a fresh copy
    of the gadget's y-variables is added and every gadget constraint is
    re-scoped with x_vars bound to s_i and y_vars to the j-th copy.
    """
    f = _as_fraction(eps)
    if p1.domain_size != gadget.instance.domain_size:
        raise GadgetError("instance and gadget domain mismatch")
    replaced = [c for c in p1.constraints if c.relation == gadget.target]
    kept = [c for c in p1.constraints if c.relation != gadget.target]
    for c in replaced:
        if len(c.scope) != len(gadget.x_vars):
            raise GadgetError("target constraint scope arity does not match gadget x_vars")
    ell = len(replaced)
    m = replication_count(len(p1.variables), p1.domain_size, gadget.extension_max, f) if ell else 1

    variables = list(p1.variables)
    constraints = list(kept)
    gpos = {v: i for i, v in enumerate(gadget.instance.variables)}
    for i, c in enumerate(replaced, start=1):
        x_map = dict(zip(gadget.x_vars, c.scope))
        for j in range(1, m + 1):
            y_map = {}
            for y in gadget.y_vars:
                name = f"{y}__{i}_{j}"
                y_map[y] = len(variables)
                variables.append(name)
            for gc in gadget.instance.constraints:
                scope = []
                for vi in gc.scope:
                    vname = gadget.instance.variables[vi]
                    scope.append(x_map[vname] if vname in x_map else y_map[vname])
                constraints.append(Constraint(tuple(scope), gc.relation))
    if len(set(variables)) != len(variables):
        raise GadgetError("fresh copy names collide with instance variables")
    p2 = CspInstance(p1.domain_size, tuple(variables), tuple(constraints))
    return ApReduction(p2, m, gadget.extension_max, ell, f)


@dataclass
class ReductionReport:
    reduction: ApReduction
    count1: int
    count2: int
    estimate: Fraction  # raw gadget output #P2 / M**(l m)
    thresholded_estimate: Fraction  # 0 when the raw value cannot be a count
    relative_error: Fraction | None  # None when P1 is unsatisfiable
    epsilon: Fraction
    sandwich_lower_ok: bool
    sandwich_upper_ok: bool
    unsatisfiable_input: bool

    @property
    def sandwich_ok(self) -> bool:
        return self.sandwich_lower_ok and self.sandwich_upper_ok

    @property
    def error_ok(self) -> bool:
        return self.relative_error is None or self.relative_error < self.epsilon


def verify_reduction(p1: CspInstance, gadget: MaxImplementation, eps) -> ReductionReport:
    """Exact end-to-end check of the reduction on one instance.

    Verifies the count sandwich
    M**(l m) #P1 <= #P2 <= M**(l m) #P1 + d**|V1| (M-1)**m M**((l-1) m)
    and the relative error of the exact rational estimate.  The raw estimate
    need not be zero for unsatisfiable input; the report carries the raw and
    the thresholded value (a raw value below 1 cannot be a solution count)
    and flags the case instead of hiding it.
    """
    red = ap_gadget(p1, gadget, eps)
    d = p1.domain_size
    n1 = len(p1.variables)
    m_ext = gadget.extension_max
    ell, m = red.target_constraints, red.m
    if d**n1 > BASE_VARS_CAP:
        raise ResourceLimitError("base instance too large for exact verification")
    predicted = d**n1 * max(1, m_ext) ** (ell * m)
    if predicted > COUNT_WORK_CAP:
        raise ResourceLimitError(
            f"predicted work {predicted} for exact counting exceeds {COUNT_WORK_CAP}"
        )
    c1 = count(p1)
    c2 = count(red.instance)
    scale = red.scale
    estimate = Fraction(c2, scale)
    slack = d**n1 * max(0, m_ext - 1) ** m * m_ext ** ((ell - 1) * m) if ell else 0
    lower_ok = scale * c1 <= c2
    upper_ok = c2 <= scale * c1 + slack
    rel_err = None if c1 == 0 else abs(estimate - c1) / c1
    return ReductionReport(
        reduction=red,
        count1=c1,
        count2=c2,
        estimate=estimate,
        thresholded_estimate=estimate if estimate >= 1 else Fraction(0),
        relative_error=rel_err,
        epsilon=red.epsilon,
        sandwich_lower_ok=lower_ok,
        sandwich_upper_ok=upper_ok,
        unsatisfiable_input=c1 == 0,
    )


# -- stock gadgets -----------------------------------------------------------------


def delta0_via_imp() -> MaxImplementation:
    """delta0(x) as the max-implementation by a single IMP(x,y) constraint."""
    from .relations import catalog

    inst = CspInstance(2, ("x", "y"), (Constraint((0, 1), catalog("imp")),))
    return MaxImplementation.build(inst, ("x",), ("y",), catalog("delta0"))


def neq_via_or_imp() -> MaxImplementation:
    """NEQ(x,y) by OR(x,y) & IMP(x,z) & IMP(y,t) with auxiliaries z,t."""
    from .relations import catalog

    imp = catalog("imp")
    inst = CspInstance(
        2,
        ("x", "y", "z", "t"),
        (
            Constraint((0, 1), catalog("or")),
            Constraint((0, 2), imp),
            Constraint((1, 3), imp),
        ),
    )
    return MaxImplementation.build(inst, ("x", "y"), ("z", "t"), catalog("neq"))


def gadget_from_formula(formula, env, target: Relation | None = None) -> MaxImplementation:
    """Flatten a max formula and package its matrix as a max-implementation."""
    from .formulas import Atom, And, evaluate, flatten_max

    flat = flatten_max(formula, env)
    matrix, block = flat.matrix, flat.block
    free = [v for v in matrix.free_vars() if v not in block]
    if target is None:
        target = evaluate(formula, env)
    atoms: list[Atom] = []

    def collect(node):
        if isinstance(node, Atom):
            atoms.append(node)
        elif isinstance(node, And):
            for c in node.children:
                collect(c)
        else:
            raise GadgetError("matrix must be quantifier-free")

    collect(matrix)
    variables = tuple(free) + tuple(block)
    idx = {v: i for i, v in enumerate(variables)}
    cons = tuple(Constraint(tuple(idx[v] for v in a.variables), env[a.relation]) for a in atoms)
    inst = CspInstance(target.domain_size, variables, cons)
    return MaxImplementation.build(inst, tuple(free), tuple(block), target)


__all__ = [
    "MaxImplementation",
    "ApReduction",
    "ReductionReport",
    "GadgetError",
    "ap_gadget",
    "replication_count",
    "verify_reduction",
    "delta0_via_imp",
    "neq_via_or_imp",
    "gadget_from_formula",
]
