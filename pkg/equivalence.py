"""
Bisimulation checking, minimisation, scheduling and exact probability analysis
over probabilistic transition systems.
"""
import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import networkx as nx

from paver_errors import AnalysisError, InternalError
from process_term import ActionLabel, ActionPattern, matches_any
from semantics import N_STATE, P_STATE, PTS, Distribution

logger = logging.getLogger(__name__)

STRONG = "strong"
BRANCHING = "branching"
ROOTED_BRANCHING = "rooted-branching"
MODES = (STRONG, BRANCHING, ROOTED_BRANCHING)

Option = Tuple[ActionLabel, int]


@dataclass(frozen=True)
class Partition:
    """Equivalence on states, block ids numbered by first occurrence."""
    block_of: Tuple[int, ...]

    @property
    def count(self) -> int:
        return len(set(self.block_of))

    def blocks(self) -> List[List[int]]:
        grouped: Dict[int, List[int]] = {}
        for state, block in enumerate(self.block_of):
            grouped.setdefault(block, []).append(state)
        return [grouped[b] for b in sorted(grouped)]

    def same_block(self, a: int, b: int) -> bool:
        return self.block_of[a] == self.block_of[b]


@dataclass(frozen=True)
class BisimResult:
    equivalent: bool
    witness: Partition
    mode: str
    divergent: bool = False
    reason: Optional[str] = None
    left_states: int = 0
    right_states: int = 0


def lift(d1: Distribution, d2: Distribution, partition: Partition) -> bool:
    """Two distributions are related iff they put equal mass on every block."""
    return d1.mass_by(partition.block_of) == d2.mass_by(partition.block_of)


def disjoint_union(left: PTS, right: PTS) -> Tuple[PTS, int]:
    """Both systems side by side; returns the union and the offset of `right`."""
    offset = left.num_states
    shifted_edges = tuple(tuple((a, t + offset) for a, t in out) for out in right.edges)
    shifted_dists = tuple(
        None if d is None else Distribution(tuple((t + offset, p) for t, p in d)) for d in right.dists
    )
    union = PTS(
        kinds=left.kinds + right.kinds,
        init=left.init,
        edges=left.edges + shifted_edges,
        dists=left.dists + shifted_dists,
        terminating=left.terminating + right.terminating,
    )
    return union, offset


# -- signatures ---------------------------------------------------------------

Signature = Tuple[str, FrozenSet]


def _probabilistic_signature(pts: PTS, state: int, block_of: Sequence[int]) -> Signature:
    return (P_STATE, frozenset(pts.dists[state].mass_by(block_of).items()))


def _strong_signature(pts: PTS, state: int, block_of: Sequence[int]) -> Signature:
    if pts.kinds[state] == P_STATE:
        return _probabilistic_signature(pts, state, block_of)
    return (N_STATE, frozenset((label, block_of[t]) for label, t in pts.edges[state]))


def _is_inert(label: ActionLabel, source: int, target: int, block_of: Sequence[int]) -> bool:
    return label.is_silent and block_of[source] == block_of[target]


def _inert_closure(pts: PTS, state: int, block_of: Sequence[int]) -> List[int]:
    seen = {state}
    stack = [state]
    while stack:
        s = stack.pop()
        for label, t in pts.edges[s]:
            if t not in seen and _is_inert(label, s, t, block_of):
                seen.add(t)
                stack.append(t)
    return sorted(seen)


def _branching_signature(pts: PTS, state: int, block_of: Sequence[int]) -> Signature:
    if pts.kinds[state] == P_STATE:
        return _probabilistic_signature(pts, state, block_of)
    observations = set()
    for s in _inert_closure(pts, state, block_of):
        for label, t in pts.edges[s]:
            if not _is_inert(label, s, t, block_of):
                observations.add((label, block_of[t]))
    return (N_STATE, frozenset(observations))


_SIGNATURES = {STRONG: _strong_signature, BRANCHING: _branching_signature, ROOTED_BRANCHING: _branching_signature}


def _describe_split(sig1: Signature, sig2: Signature) -> str:
    if sig1[0] == P_STATE:
        masses1, masses2 = dict(sig1[1]), dict(sig2[1])
        for block in sorted(set(masses1) | set(masses2)):
            m1, m2 = masses1.get(block, Fraction(0)), masses2.get(block, Fraction(0))
            if m1 != m2:
                return f"probability of reaching class {block} differs: {m1} vs {m2}"
        return "distributions differ"
    only_left = sorted(sig1[1] - sig2[1], key=lambda o: (str(o[0]), o[1]))
    if only_left:
        label, block = only_left[0]
        return f"left side can do {label} into class {block}, which the right side cannot match"
    label, block = sorted(sig2[1] - sig1[1], key=lambda o: (str(o[0]), o[1]))[0]
    return f"right side can do {label} into class {block}, which the left side cannot match"


def _initial_partition(pts: PTS) -> List[int]:
    ids: Dict[Tuple[str, bool], int] = {}
    return [ids.setdefault((pts.kinds[s], pts.terminating[s]), len(ids)) for s in range(pts.num_states)]


def _refine(pts: PTS, signature: Callable, watch: Optional[Tuple[int, int]] = None) -> Tuple[Partition, Optional[str]]:
    """
    Split blocks by signature until stable.

    Each round recomputes every state's signature against the previous block
    map and numbers the refined blocks by first occurrence in state order, so
    the result does not depend on set iteration order. There is no splitter
    worklist; a round that creates no new block ends the loop.

    Args:
        pts: System to partition
        signature: Per-state observation under the current block map
        watch: Optional pair of states whose first separation is explained

    Returns:
        The coarsest stable partition and, for a separated watch pair, the reason.
    """
    block_of = _initial_partition(pts)
    reason = None
    if watch is not None:
        a, b = watch
        if pts.kinds[a] != pts.kinds[b]:
            reason = f"initial states differ in kind ({pts.kinds[a]} vs {pts.kinds[b]})"
        elif pts.terminating[a] != pts.terminating[b]:
            reason = "only one of the initial states can terminate successfully"
    rounds = 0
    while True:
        signatures = [signature(pts, s, block_of) for s in range(pts.num_states)]
        ids: Dict[Tuple[int, Signature], int] = {}
        refined = [ids.setdefault((block_of[s], signatures[s]), len(ids)) for s in range(pts.num_states)]
        rounds += 1
        if watch is not None and reason is None:
            a, b = watch
            if block_of[a] == block_of[b] and refined[a] != refined[b]:
                reason = _describe_split(signatures[a], signatures[b])
        if len(ids) == len(set(block_of)):
            break
        block_of = refined
    logger.debug(f"Partition refinement stable after {rounds} rounds with {len(set(block_of))} blocks")
    return Partition(tuple(block_of)), reason


def coarsest_partition(pts: PTS, mode: str = STRONG) -> Partition:
    if mode not in _SIGNATURES:
        raise ValueError(f"unknown equivalence mode {mode}")
    return _refine(pts, _SIGNATURES[mode])[0]


def has_divergence(pts: PTS, partition: Partition) -> bool:
    """Whether some class contains a cycle of inert tau-steps."""
    graph = nx.DiGraph()
    for s, label, t in pts.atrans():
        if _is_inert(label, s, t, partition.block_of):
            graph.add_edge(s, t)
    return any(
        len(component) > 1 or graph.has_edge(next(iter(component)), next(iter(component)))
        for component in nx.strongly_connected_components(graph)
    )


def strong_bisim(left: PTS, right: PTS) -> BisimResult:
    union, offset = disjoint_union(left, right)
    roots = (left.init, right.init + offset)
    partition, reason = _refine(union, _strong_signature, roots)
    equivalent = partition.same_block(*roots)
    logger.info(f"Strong bisimulation: {'equivalent' if equivalent else 'not equivalent'} "
                f"({partition.count} classes over {union.num_states} states)")
    return BisimResult(equivalent, partition, STRONG, False, None if equivalent else reason,
                       left.num_states, right.num_states)


def _root_mismatch(pts: PTS, r1: int, r2: int, partition: Partition) -> Optional[str]:
    """Rootedness: the first steps must be matched one-for-one, tau included."""
    if pts.kinds[r1] == P_STATE:
        for a, b, side in ((r1, r2, "left"), (r2, r1, "right")):
            for u in pts.dists[a].targets():
                if pts.kinds[u] != N_STATE:
                    continue
                if not any(partition.same_block(u, v) and _root_mismatch(pts, u, v, partition) is None
                           for v in pts.dists[b].targets()):
                    return f"an outcome of the {side} initial distribution has no rooted match"
        return None
    for a, b, side in ((r1, r2, "left"), (r2, r1, "right")):
        for label, t in pts.edges[a]:
            if not any(l2 == label and partition.same_block(t, t2) for l2, t2 in pts.edges[b]):
                return f"initial step {label} of the {side} side is not matched by a single step"
    return None


def branching_bisim(left: PTS, right: PTS, rooted: bool = False) -> BisimResult:
    """
    Branching bisimilarity of two systems, optionally rooted.

    Returns:
        BisimResult; `divergent` flags a cycle of inert tau-steps in some class.
    """
    union, offset = disjoint_union(left, right)
    roots = (left.init, right.init + offset)
    partition, reason = _refine(union, _branching_signature, roots)
    equivalent = partition.same_block(*roots)
    if equivalent and rooted:
        mismatch = _root_mismatch(union, roots[0], roots[1], partition)
        if mismatch is not None:
            equivalent, reason = False, mismatch
    divergent = has_divergence(union, partition)
    mode = ROOTED_BRANCHING if rooted else BRANCHING
    logger.info(f"{mode} bisimulation: {'equivalent' if equivalent else 'not equivalent'}"
                f"{', divergent' if divergent else ''} ({partition.count} classes)")
    return BisimResult(equivalent, partition, mode, divergent, None if equivalent else reason,
                       left.num_states, right.num_states)


def check_equivalence(left: PTS, right: PTS, mode: str) -> BisimResult:
    if mode == STRONG:
        return strong_bisim(left, right)
    if mode == BRANCHING:
        return branching_bisim(left, right)
    if mode == ROOTED_BRANCHING:
        return branching_bisim(left, right, rooted=True)
    raise ValueError(f"unknown equivalence mode {mode}")


def minimize(pts: PTS, mode: str = STRONG) -> PTS:
    """Quotient by the coarsest bisimulation of the given mode."""
    partition = coarsest_partition(pts, mode)
    block_of = partition.block_of
    members = partition.blocks()
    kinds, edges, dists, terminating = [], [], [], []
    for block, states in enumerate(members):
        rep = states[0]
        kinds.append(pts.kinds[rep])
        terminating.append(pts.terminating[rep])
        if pts.kinds[rep] == P_STATE:
            edges.append(())
            dists.append(Distribution.of(pts.dists[rep].mass_by(block_of)))
            continue
        sources = [rep] if mode == STRONG else states
        out: List[Option] = []
        for s in sources:
            for label, t in pts.edges[s]:
                step = (label, block_of[t])
                if mode != STRONG and _is_inert(label, s, t, block_of):
                    continue
                if step not in out:
                    out.append(step)
        edges.append(tuple(out))
        dists.append(None)
    quotient = PTS(tuple(kinds), block_of[pts.init], tuple(edges), tuple(dists), tuple(terminating))
    result = quotient.restrict_reachable()
    logger.info(f"Minimised {pts.num_states} states to {result.num_states} ({mode})")
    return result


# -- exact probabilities --------------------------------------------------------

ROUND = "round"
EVENTUAL = "eventual"


@dataclass(frozen=True)
class ProbQuery:
    """
    success: patterns of the actions that count as success
    horizon: ROUND stops a run when it re-enters the source; EVENTUAL does not
    source: start state, the initial state when None
    """
    success: FrozenSet[ActionPattern]
    horizon: str = ROUND
    source: Optional[int] = None


def _solve_exact(rows: Dict[int, Dict[int, Fraction]], constants: Dict[int, Fraction]) -> Dict[int, Fraction]:
    """Gauss-Jordan elimination over the rationals for x = c + A x."""
    order = sorted(rows)
    position = {s: i for i, s in enumerate(order)}
    size = len(order)
    matrix = [[Fraction(0)] * size for _ in range(size)]
    rhs = [constants.get(s, Fraction(0)) for s in order]
    for s in order:
        i = position[s]
        matrix[i][i] += 1
        for t, coefficient in rows[s].items():
            matrix[i][position[t]] -= coefficient
    for col in range(size):
        pivot = next((r for r in range(col, size) if matrix[r][col] != 0), None)
        if pivot is None:
            raise InternalError("singular reachability system")
        matrix[col], matrix[pivot] = matrix[pivot], matrix[col]
        rhs[col], rhs[pivot] = rhs[pivot], rhs[col]
        scale = matrix[col][col]
        if scale != 1:
            matrix[col] = [v / scale for v in matrix[col]]
            rhs[col] /= scale
        for r in range(size):
            factor = matrix[r][col]
            if r != col and factor != 0:
                matrix[r] = [v - factor * w for v, w in zip(matrix[r], matrix[col])]
                rhs[r] -= factor * rhs[col]
    return {s: rhs[position[s]] for s in order}


def success_probability(pts: PTS, query: ProbQuery) -> Fraction:
    """
    Exact probability that a success-labelled transition fires.

    Every reachable N-state must offer at most one transition; schedule first
    otherwise.
    """
    source = pts.init if query.source is None else query.source
    constants: Dict[int, Fraction] = {}
    rows: Dict[int, Dict[int, Fraction]] = {}
    stack = [source]
    seen = {source}

    def follow(s: int, t: int, weight: Fraction):
        if query.horizon == ROUND and t == source:
            return
        rows[s][t] = rows[s].get(t, Fraction(0)) + weight
        if t not in seen:
            seen.add(t)
            stack.append(t)

    while stack:
        s = stack.pop()
        rows[s] = {}
        if pts.kinds[s] == P_STATE:
            for t, p in pts.dists[s]:
                follow(s, t, p)
            continue
        out = pts.edges[s]
        if len(out) > 1:
            raise AnalysisError(
                f"state {s} offers {len(out)} transitions; resolve the nondeterminism with a scheduler first"
            )
        if not out:
            continue
        label, t = out[0]
        if matches_any(query.success, label):
            constants[s] = Fraction(1)
        else:
            follow(s, t, Fraction(1))

    graph = nx.DiGraph()
    graph.add_nodes_from(rows)
    for s, row in rows.items():
        graph.add_edges_from((s, t) for t in row)
    winners = [s for s, c in constants.items() if c > 0]
    relevant = set(winners)
    for w in winners:
        relevant |= nx.ancestors(graph, w)
    if source not in relevant:
        return Fraction(0)

    system = {s: {t: c for t, c in rows[s].items() if t in relevant} for s in relevant}
    subgraph = graph.subgraph(relevant)
    if nx.is_directed_acyclic_graph(subgraph):
        values: Dict[int, Fraction] = {}
        for s in reversed(list(nx.topological_sort(subgraph))):
            values[s] = constants.get(s, Fraction(0)) + sum(
                (c * values[t] for t, c in system[s].items()), Fraction(0)
            )
        method = "back-substitution"
    else:
        values = _solve_exact(system, constants)
        method = "exact elimination"
    logger.info(f"Success probability from state {source} over {len(relevant)} states by {method}: {values[source]}")
    return values[source]


# -- schedulers -----------------------------------------------------------------

class SchedulingPolicy:
    """Decides how a state with several options is resolved."""

    def weights(self, position: int, state: int, options: Sequence[Option]) -> Optional[List[Fraction]]:
        """Weights per option; None leaves the state nondeterministic."""
        raise NotImplementedError


class UniformPolicy(SchedulingPolicy):
    def weights(self, position, state, options):
        return [Fraction(1, len(options))] * len(options)


class ScriptedPolicy(SchedulingPolicy):
    """The i-th nondeterministic state (ascending index) takes option choices[i]."""

    def __init__(self, choices: Sequence[int]):
        self.choices = list(choices)

    def weights(self, position, state, options):
        if position >= len(self.choices):
            return None
        choice = self.choices[position]
        if not 0 <= choice < len(options):
            raise AnalysisError(f"script picks option {choice} at state {state}, which has {len(options)} options")
        return [Fraction(int(i == choice)) for i in range(len(options))]


class WeightedPolicy(SchedulingPolicy):
    """Options matching `patterns` share mass q, the remaining options share 1 - q."""

    def __init__(self, patterns: Iterable[ActionPattern], q):
        self.patterns = frozenset(patterns)
        self.q = Fraction(q)
        if not Fraction(0) <= self.q <= Fraction(1):
            raise AnalysisError(f"weight {self.q} outside [0,1]")

    def weights(self, position, state, options):
        marked = [matches_any(self.patterns, label) for label, _ in options]
        hits = sum(marked)
        if hits in (0, len(options)):
            return UniformPolicy().weights(position, state, options)
        return [self.q / hits if m else (1 - self.q) / (len(options) - hits) for m in marked]


def schedule(pts: PTS, policy: SchedulingPolicy) -> PTS:
    """
    Resolve nondeterministic choices: a state keeping several options becomes a
    P-state over fresh single-option N-states.
    """
    kinds = list(pts.kinds)
    edges = list(pts.edges)
    dists = list(pts.dists)
    terminating = list(pts.terminating)
    terms = list(pts.terms) if pts.terms else [None] * pts.num_states
    position = 0
    changed = False
    for s in range(pts.num_states):
        if kinds[s] != N_STATE or len(edges[s]) <= 1:
            continue
        weights = policy.weights(position, s, pts.edges[s])
        position += 1
        if weights is None:
            continue
        kept = [(option, w) for option, w in zip(pts.edges[s], weights) if w > 0]
        changed = True
        if len(kept) == 1:
            edges[s] = (kept[0][0],)
            continue
        support = {}
        for option, w in kept:
            support[len(kinds)] = w
            kinds.append(N_STATE)
            edges.append((option,))
            dists.append(None)
            terminating.append(pts.terminating[s])
            terms.append(None)
        kinds[s] = P_STATE
        edges[s] = ()
        dists[s] = Distribution.of(support)
        terminating[s] = False
    if not changed:
        return pts
    logger.info(f"Scheduled {position} nondeterministic states with {type(policy).__name__}")
    return PTS(tuple(kinds), pts.init, tuple(edges), tuple(dists), tuple(terminating), tuple(terms)).restrict_reachable()
