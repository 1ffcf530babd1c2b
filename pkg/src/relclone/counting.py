"""#CSP instance model and exact solution counting.

``count`` is a plain backtracking counter: variables in declaration order, a
branch pruned as soon as some constraint's scope is fully assigned and
violated.  Counts are exact Python integers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .relations import CELL_CAP, Relation, ResourceLimitError, VarSubstitution, substitute


class InstanceError(ValueError):
    pass


@dataclass(frozen=True)
class Constraint:
    scope: tuple[int, ...]  # 0-based variable indices, repetitions allowed
    relation: Relation

    def __post_init__(self) -> None:
        if len(self.scope) != self.relation.arity:
            raise InstanceError(
                f"scope length {len(self.scope)} != relation arity {self.relation.arity}"
            )


@dataclass(frozen=True)
class CspInstance:
    domain_size: int
    variables: tuple[str, ...]
    constraints: tuple[Constraint, ...]

    def __post_init__(self) -> None:
        if len(set(self.variables)) != len(self.variables):
            raise InstanceError("duplicate variable names")
        for c in self.constraints:
            if c.relation.domain_size != self.domain_size:
                raise InstanceError("constraint relation domain mismatch")
            for v in c.scope:
                if not 0 <= v < len(self.variables):
                    raise InstanceError(f"scope index {v} out of range")

    def var_index(self, name: str) -> int:
        try:
            return self.variables.index(name)
        except ValueError:
            raise InstanceError(f"unknown variable {name!r}") from None


def instance(d: int, variables: Sequence[str], constraints: Iterable[tuple[Sequence[str], Relation]]) -> CspInstance:
    """Convenience constructor taking variable-name scopes."""
    vs = tuple(variables)
    idx = {v: i for i, v in enumerate(vs)}
    cons = []
    for scope, rel in constraints:
        try:
            cons.append(Constraint(tuple(idx[v] for v in scope), rel))
        except KeyError as e:
            raise InstanceError(f"unknown variable {e.args[0]!r} in scope") from None
    return CspInstance(d, vs, tuple(cons))


def count(inst: CspInstance) -> int:
    """Exact number of solutions by pruned backtracking in declaration order."""
    nvars = len(inst.variables)
    d = inst.domain_size
    # constraints become checkable once their last (max) scope variable is set
    triggers: list[list[tuple[tuple[int, ...], int, Relation]]] = [[] for _ in range(nvars)]
    sat_by_empty = 1
    for c in inst.constraints:
        if not c.scope:
            if not c.relation.bits & 1:
                sat_by_empty = 0
            continue
        pows = [d ** (len(c.scope) - 1 - i) for i in range(len(c.scope))]
        packed = tuple(zip(c.scope, pows))
        triggers[max(c.scope)].append((packed, len(c.scope), c.relation))
    if sat_by_empty == 0:
        return 0
    if nvars == 0:
        return 1

    assignment = [0] * nvars
    total = 0
    level = 0
    value = [0] * nvars
    while level >= 0:
        if value[level] >= d:
            value[level] = 0
            level -= 1
            if level >= 0:
                value[level] += 1
            continue
        assignment[level] = value[level]
        ok = True
        for packed, _, rel in triggers[level]:
            idx = 0
            for var, pw in packed:
                idx += assignment[var] * pw
            if not (rel.bits >> idx) & 1:
                ok = False
                break
        if not ok:
            value[level] += 1
            continue
        if level == nvars - 1:
            total += 1
            value[level] += 1
            continue
        level += 1
        value[level] = 0
    return total


def instance_relation(inst: CspInstance) -> Relation:
    """The instance's solution set as a relation over its variables (guarded)."""
    d, n = inst.domain_size, len(inst.variables)
    if d**n > CELL_CAP:
        raise ResourceLimitError(f"instance relation would need {d ** n} cells")
    out = Relation.full(d, n)
    for c in inst.constraints:
        placed = substitute(c.relation, VarSubstitution(tuple(v + 1 for v in c.scope), n))
        out = Relation(d, n, out.bits & placed.bits)
    return out


__all__ = ["CspInstance", "Constraint", "InstanceError", "instance", "count", "instance_relation"]
