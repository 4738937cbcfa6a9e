"""Generalized quorum systems: representation, validation, per-pattern
termination components, and a search for a quorum system over a given
fail-prone system.

A generalized quorum system pairs a fail-prone system with read and write
quorum families such that every read quorum meets every write quorum
(Consistency) and, for each failure pattern, some write quorum is available
(correct and strongly connected in the residual graph) and reachable from
some read quorum (Availability). Classical quorum systems are the special
case with no channel failures.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

from .model import (
    FailProneSystem,
    FailurePattern,
    ModelError,
    NetworkGraph,
    is_f_available,
    is_f_reachable,
    reachable_set,
    residual_graph,
    strongly_connected_components,
)


def quorum_family(quorums) -> tuple:
    """Normalize a quorum family: tuple of non-empty frozensets, duplicate-free."""
    fam = tuple(frozenset(int(p) for p in q) for q in quorums)
    if not fam:
        raise ModelError("quorum family must be non-empty")
    if any(not q for q in fam):
        raise ModelError("quorums must be non-empty")
    if len(set(fam)) != len(fam):
        raise ModelError("duplicate quorums in family")
    return fam


def _sorted_family(fam):
    # Witness determinism: quorums ordered by sorted member tuple, then
    # original family position.
    return sorted(range(len(fam)), key=lambda i: (tuple(sorted(fam[i])), i))


@dataclass(frozen=True)
class GeneralizedQuorumSystem:
    system: FailProneSystem
    reads: tuple
    writes: tuple


@dataclass
class GqsVerdict:
    consistent: bool
    violating_pair: Optional[tuple]  # (read quorum, write quorum) if inconsistent
    availability: dict               # pattern -> (W, R) witness or None
    u_components: dict               # pattern -> frozenset, available patterns only

    @property
    def ok(self) -> bool:
        return self.consistent and all(w is not None for w in self.availability.values())


def validate_gqs(system: FailProneSystem, reads, writes, g: NetworkGraph) -> GqsVerdict:
    """Check Consistency and per-pattern Availability; on success also
    report each pattern's termination component."""
    reads = quorum_family(reads)
    writes = quorum_family(writes)
    for q in reads + writes:
        if not q <= g.vertices:
            raise ModelError(f"quorum {sorted(q)} references unknown processes")

    consistent, violating = True, None
    for ri in _sorted_family(reads):
        for wi in _sorted_family(writes):
            if not reads[ri] & writes[wi]:
                consistent, violating = False, (reads[ri], writes[wi])
                break
        if not consistent:
            break

    availability = {}
    u_components = {}
    for f in system.patterns:
        witness = None
        for wi in _sorted_family(writes):
            if not is_f_available(writes[wi], f, g):
                continue
            for ri in _sorted_family(reads):
                if is_f_reachable(writes[wi], reads[ri], f, g):
                    witness = (writes[wi], reads[ri])
                    break
            if witness:
                break
        availability[f] = witness
        if witness and consistent:
            # The union of qualifying write quorums lies in one component
            # only when Consistency holds, so U_f is reported only then.
            u_components[f] = _termination_component(f, reads, writes, g)

    return GqsVerdict(consistent, violating, availability, u_components)


def _termination_component(f, reads, writes, g) -> frozenset:
    union = set()
    for w in writes:
        if not is_f_available(w, f, g):
            continue
        if any(is_f_reachable(w, r, f, g) for r in reads):
            union |= w
    if not union:
        raise ModelError(f"availability does not hold for pattern {f}")
    rg = residual_graph(g, f)
    for comp in strongly_connected_components(rg):
        if union <= comp:
            return comp
    # Only reachable when Consistency is broken; qualifying write quorums of
    # a consistent system always share one component.
    raise ModelError("qualifying write quorums span multiple components")


def compute_termination_component(f: FailurePattern, gqs: GeneralizedQuorumSystem,
                                  g: NetworkGraph) -> frozenset:
    """The strongly connected component of the residual graph containing the
    union of all write quorums that are f-available and f-reachable from
    some read quorum. Requires Availability to hold for f."""
    return _termination_component(f, gqs.reads, gqs.writes, g)


def find_gqs(system: FailProneSystem, g: NetworkGraph) -> Optional[GeneralizedQuorumSystem]:
    """Search for a generalized quorum system over the given fail-prone
    system, or return None if none exists.

    Per pattern f the write-quorum candidates are the strongly connected
    components of the residual graph (each is f-available by construction)
    and the matching read quorum is the maximal one: every correct process
    that can reach the chosen component. Taking the reach set maximal only
    enlarges intersections, and any witness quorums of an arbitrary valid
    system embed into the component containing them and its reach set, so
    restricting the search this way loses no solutions. Backtracking over
    the per-pattern component choices tests pairwise intersection; worst
    case exponential in the number of patterns, which is fine at the scale
    this lab targets.
    """
    candidates = []
    for f in system.patterns:
        rg = residual_graph(g, f)
        cands = []
        for comp in strongly_connected_components(rg):
            reach = frozenset(v for v in rg.vertices if reachable_set(rg, v) & comp)
            cands.append((comp, reach))
        if not cands:
            return None  # every process may crash under f
        candidates.append(cands)

    chosen = []

    def backtrack(i):
        if i == len(candidates):
            return True
        for (w, r) in candidates[i]:
            ok = all(w & pr and pw & r for (pw, pr) in chosen)
            if not ok:
                continue
            chosen.append((w, r))
            if backtrack(i + 1):
                return True
            chosen.pop()
        return False

    if not backtrack(0):
        return None

    writes, reads = [], []
    for (w, r) in chosen:
        if w not in writes:
            writes.append(w)
        if r not in reads:
            reads.append(r)
    return GeneralizedQuorumSystem(system, tuple(reads), tuple(writes))


def is_classical_qs(system: FailProneSystem, reads, writes) -> bool:
    """True iff no pattern allows channel failures, Consistency holds, and
    each pattern admits a fully correct read/write quorum pair."""
    reads = quorum_family(reads)
    writes = quorum_family(writes)
    if any(f.drop_set for f in system.patterns):
        return False
    for r, w in itertools.product(reads, writes):
        if not r & w:
            return False
    for f in system.patterns:
        if not any(
            not ((r | w) & f.crash_set)
            for r, w in itertools.product(reads, writes)
        ):
            return False
    return True
