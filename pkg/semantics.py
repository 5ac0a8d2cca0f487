"""
Operational semantics: turns a ProcessSpec into a probabilistic transition system.

States alternate between nondeterministic states (N, action transitions) and
probabilistic states (P, one distribution over N-states). An N-state is
identified by its canonical term, a P-state by its canonical distribution, so
re-encountered configurations are shared.
"""
import logging
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, FrozenSet, Iterable, Iterator, List, Mapping, Optional, Set, Tuple

import networkx as nx

from config_local import config
from paver_errors import InternalError, ResourceError
from process_term import (
    Alt, ActionLabel, ActionPattern, CommMerge, Deadlock, Encap, Hide, Merge, PChoice, Parallel,
    Prefix, ProcessSpec, Shadow, Skip, Sum, TAU, Term, Var, alt, matches_any, substitute, term_key,
    DELTA,
)

logger = logging.getLogger(__name__)

N_STATE = "N"
P_STATE = "P"

Step = Tuple[ActionLabel, Term]


@dataclass(frozen=True)
class Distribution:
    """Finite distribution over state indices, kept sorted by index."""
    support: Tuple[Tuple[int, Fraction], ...]

    @classmethod
    def of(cls, weights: Mapping[int, Fraction]) -> "Distribution":
        merged: Dict[int, Fraction] = {}
        for state, prob in weights.items():
            merged[state] = merged.get(state, Fraction(0)) + Fraction(prob)
        return cls(tuple(sorted((s, p) for s, p in merged.items() if p > 0)))

    @classmethod
    def point(cls, state: int) -> "Distribution":
        return cls(((state, Fraction(1)),))

    def __iter__(self) -> Iterator[Tuple[int, Fraction]]:
        return iter(self.support)

    def __len__(self) -> int:
        return len(self.support)

    def targets(self) -> List[int]:
        return [s for s, _ in self.support]

    def total(self) -> Fraction:
        return sum((p for _, p in self.support), Fraction(0))

    def mass_by(self, block_of: Mapping[int, int]) -> Dict[int, Fraction]:
        """Probability mass per block under a state → block map."""
        masses: Dict[int, Fraction] = {}
        for state, prob in self.support:
            block = block_of[state]
            masses[block] = masses.get(block, Fraction(0)) + prob
        return masses

    def __str__(self) -> str:
        return " ".join(f"{s}:{p.numerator}/{p.denominator}" for s, p in self.support)


@dataclass(frozen=True)
class PTS:
    """
    Alternating probabilistic transition system.

    edges[s] lists the (label, target) action transitions of an N-state;
    dists[s] is the distribution of a P-state (None for N-states).
    """
    kinds: Tuple[str, ...]
    init: int
    edges: Tuple[Tuple[Tuple[ActionLabel, int], ...], ...]
    dists: Tuple[Optional[Distribution], ...]
    terminating: Tuple[bool, ...]
    terms: Tuple[Optional[Term], ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        n = len(self.kinds)
        if not (len(self.edges) == len(self.dists) == len(self.terminating) == n):
            raise InternalError("PTS tables disagree on the number of states")
        if not 0 <= self.init < n:
            raise InternalError(f"initial state {self.init} out of range")
        for s in range(n):
            if self.kinds[s] == N_STATE:
                if self.dists[s] is not None:
                    raise InternalError(f"N-state {s} carries a distribution")
                for _, t in self.edges[s]:
                    if not 0 <= t < n:
                        raise InternalError(f"transition from {s} to unknown state {t}")
            elif self.kinds[s] == P_STATE:
                dist = self.dists[s]
                if self.edges[s] or dist is None or not len(dist):
                    raise InternalError(f"P-state {s} must have exactly one non-empty distribution")
                if dist.total() != 1:
                    raise InternalError(f"distribution of state {s} sums to {dist.total()}")
                if any(not 0 <= t < n for t in dist.targets()):
                    raise InternalError(f"distribution of state {s} leaves the state space")
            else:
                raise InternalError(f"unknown state kind {self.kinds[s]!r}")

    @property
    def num_states(self) -> int:
        return len(self.kinds)

    def is_probabilistic(self, state: int) -> bool:
        return self.kinds[state] == P_STATE

    def atrans(self) -> Iterator[Tuple[int, ActionLabel, int]]:
        for s, out in enumerate(self.edges):
            for label, t in out:
                yield s, label, t

    def ptrans(self) -> Iterator[Tuple[int, Distribution]]:
        for s, dist in enumerate(self.dists):
            if dist is not None:
                yield s, dist

    def successors(self, state: int) -> List[int]:
        if self.kinds[state] == P_STATE:
            return self.dists[state].targets()
        return [t for _, t in self.edges[state]]

    def restrict_reachable(self) -> "PTS":
        """Drop unreachable states and renumber in breadth-first order."""
        order = [self.init]
        index = {self.init: 0}
        queue = deque([self.init])
        while queue:
            s = queue.popleft()
            for t in self.successors(s):
                if t not in index:
                    index[t] = len(order)
                    order.append(t)
                    queue.append(t)
        return PTS(
            kinds=tuple(self.kinds[s] for s in order),
            init=0,
            edges=tuple(tuple((a, index[t]) for a, t in self.edges[s]) for s in order),
            dists=tuple(
                None if self.dists[s] is None
                else Distribution.of({index[t]: p for t, p in self.dists[s]})
                for s in order
            ),
            terminating=tuple(self.terminating[s] for s in order),
            terms=tuple(self.terms[s] for s in order) if self.terms else (),
        )

    def to_text(self) -> str:
        """Line-oriented `.pts` rendering."""
        lines = [f"pts {self.num_states} {self.init}"]
        for s in range(self.num_states):
            flag = "term" if self.terminating[s] else "noterm"
            lines.append(f"state {s} {self.kinds[s]} {flag}")
        for s, label, t in self.atrans():
            lines.append(f"a {s} {label} {t}")
        for s, dist in self.ptrans():
            lines.append(f"p {s} {dist}")
        return "\n".join(lines) + "\n"

    def to_dot(self) -> str:
        lines = ["digraph pts {", "  rankdir=LR;", '  start [shape=none, label=""];']
        for s in range(self.num_states):
            if self.kinds[s] == P_STATE:
                shape = "point"
            else:
                shape = "doublecircle" if self.terminating[s] else "circle"
            lines.append(f'  s{s} [shape={shape}, label="{s}"];')
        lines.append(f"  start -> s{self.init};")
        for s, label, t in self.atrans():
            lines.append(f'  s{s} -> s{t} [label="{label}"];')
        for s, dist in self.ptrans():
            for t, p in dist:
                lines.append(f'  s{s} -> s{t} [label="{p.numerator}/{p.denominator}", style=dashed];')
        lines.append("}")
        return "\n".join(lines) + "\n"

    def to_graph(self) -> nx.MultiDiGraph:
        graph = nx.MultiDiGraph()
        for s in range(self.num_states):
            graph.add_node(s, kind=self.kinds[s], terminating=self.terminating[s])
        for s, label, t in self.atrans():
            graph.add_edge(s, t, label=label)
        for s, dist in self.ptrans():
            for t, p in dist:
                graph.add_edge(s, t, prob=p)
        return graph

    def describe(self, state: int) -> str:
        """Pretty-printed term behind a state, when the PTS was expanded from a spec."""
        from spec_parser import pretty_print
        if not self.terms or self.terms[state] is None:
            return f"state {state}"
        return pretty_print(self.terms[state])


def reachable_actions(pts: PTS) -> FrozenSet[ActionLabel]:
    return frozenset(label for _, label, _ in pts.atrans())


def abstract(pts: PTS, patterns: Iterable[ActionPattern]) -> PTS:
    """Relabel the matching action transitions to tau."""
    patterns = frozenset(patterns)
    edges = []
    for out in pts.edges:
        relabelled = []
        for label, t in out:
            step = (TAU if matches_any(patterns, label) else label, t)
            if step not in relabelled:
                relabelled.append(step)
        edges.append(tuple(relabelled))
    return PTS(pts.kinds, pts.init, tuple(edges), pts.dists, pts.terminating, pts.terms)


def _flatten_alt(term: Term, out: List[Term]):
    if isinstance(term, Alt):
        _flatten_alt(term.left, out)
        _flatten_alt(term.right, out)
    else:
        out.append(term)


def make_alt(operands: Iterable[Term]) -> Term:
    """Canonical alternative: flattened, deduplicated, sorted, deadlock absorbed."""
    leaves: List[Term] = []
    for operand in operands:
        _flatten_alt(operand, leaves)
    unique = {leaf: None for leaf in leaves}
    if len(unique) > 1:
        unique.pop(DELTA, None)
    return alt(*sorted(unique, key=term_key)) if unique else DELTA


def make_composition(cls, left: Term, right: Term) -> Term:
    if cls is not CommMerge:
        if isinstance(left, Skip):
            return right
        if isinstance(right, Skip):
            return left
    if term_key(right) < term_key(left):
        left, right = right, left
    return cls(left, right)


def make_encap(blocked: FrozenSet[ActionPattern], body: Term) -> Term:
    if not blocked or isinstance(body, (Deadlock, Skip)):
        return body
    if isinstance(body, Encap):
        return Encap(blocked | body.blocked, body.body)
    return Encap(blocked, body)


def make_hide(hidden: FrozenSet[ActionPattern], body: Term) -> Term:
    if not hidden or isinstance(body, (Deadlock, Skip)):
        return body
    if isinstance(body, Hide):
        return Hide(hidden | body.hidden, body.body)
    return Hide(hidden, body)


_COMPOSITIONS = (Merge, Parallel, CommMerge)


class Expander:
    """
    Computes normal forms, steps and the reachable PTS of one specification.

    All intermediate results are memoised per instance, so one Expander can
    answer many distribution/step queries cheaply.
    """

    def __init__(self, spec: ProcessSpec, limit: Optional[int] = None):
        self.spec = spec
        self.limit = int(limit if limit is not None else config.get("expansion.state_limit", 100000))
        self._canonical: Dict[Term, Term] = {}
        self._distribution: Dict[Term, Dict[Term, Fraction]] = {}
        self._probabilistic: Dict[Term, bool] = {}
        self._unfolded: Dict[Var, Term] = {}
        self._steps: Dict[Term, List[Step]] = {}
        self._shadows: Dict[Term, List[Step]] = {}
        self._in_progress: Set[Var] = set()

    # -- normal forms --------------------------------------------------------

    def canonical(self, term: Term) -> Term:
        cached = self._canonical.get(term)
        if cached is None:
            cached = self._canonicalize(term)
            self._canonical[term] = cached
        return cached

    def _canonicalize(self, term: Term) -> Term:
        if isinstance(term, (Prefix, Shadow)):
            return type(term)(term.action, self.canonical(term.rest))
        if isinstance(term, Alt):
            return make_alt([self.canonical(term.left), self.canonical(term.right)])
        if isinstance(term, PChoice):
            return PChoice(term.prob, self.canonical(term.left), self.canonical(term.right))
        if isinstance(term, _COMPOSITIONS):
            return make_composition(type(term), self.canonical(term.left), self.canonical(term.right))
        if isinstance(term, Encap):
            return make_encap(term.blocked, self.canonical(term.body))
        if isinstance(term, Hide):
            return make_hide(term.hidden, self.canonical(term.body))
        if isinstance(term, Sum):
            members = self.spec.domain(term.domain)
            return make_alt([self.canonical(substitute(term.body, {term.binder: c})) for c in members])
        return term

    def _unfold(self, var: Var) -> Term:
        body = self._unfolded.get(var)
        if body is None:
            body = self.canonical(self.spec.unfold(var))
            self._unfolded[var] = body
        return body

    def _enter(self, var: Var):
        if var in self._in_progress:
            raise InternalError(f"unguarded recursion through {var.name} during expansion")
        self._in_progress.add(var)

    def is_probabilistic(self, term: Term) -> bool:
        """Whether a canonical term's next step is a probabilistic choice."""
        cached = self._probabilistic.get(term)
        if cached is not None:
            return cached
        if isinstance(term, PChoice):
            result = True
        elif isinstance(term, (Alt,) + _COMPOSITIONS):
            result = self.is_probabilistic(term.left) or self.is_probabilistic(term.right)
        elif isinstance(term, (Encap, Hide)):
            result = self.is_probabilistic(term.body)
        elif isinstance(term, Var):
            self._enter(term)
            try:
                result = self.is_probabilistic(self._unfold(term))
            finally:
                self._in_progress.discard(term)
        else:
            result = False
        self._probabilistic[term] = result
        return result

    def distribution(self, term: Term) -> Dict[Term, Fraction]:
        """Distribution over N-normal terms that `term` resolves to."""
        return self._resolve(self.canonical(term))

    def _resolve(self, term: Term) -> Dict[Term, Fraction]:
        cached = self._distribution.get(term)
        if cached is not None:
            return cached
        if isinstance(term, PChoice):
            result: Dict[Term, Fraction] = {}
            for part, weight in ((term.left, term.prob), (term.right, 1 - term.prob)):
                for n, p in self._resolve(part).items():
                    result[n] = result.get(n, Fraction(0)) + weight * p
        elif isinstance(term, Alt):
            result = self._product(term.left, term.right, lambda x, y: make_alt([x, y]))
        elif isinstance(term, _COMPOSITIONS):
            cls = type(term)
            result = self._product(term.left, term.right, lambda x, y: make_composition(cls, x, y))
        elif isinstance(term, Encap):
            result = self._mapped(term.body, lambda x: make_encap(term.blocked, x))
        elif isinstance(term, Hide):
            result = self._mapped(term.body, lambda x: make_hide(term.hidden, x))
        elif isinstance(term, Var):
            self._enter(term)
            try:
                result = self._resolve(self._unfold(term))
            finally:
                self._in_progress.discard(term)
        else:
            result = {term: Fraction(1)}
        self._distribution[term] = result
        return result

    def _product(self, left: Term, right: Term, combine) -> Dict[Term, Fraction]:
        result: Dict[Term, Fraction] = {}
        for x, p in self._resolve(left).items():
            for y, q in self._resolve(right).items():
                n = combine(x, y)
                result[n] = result.get(n, Fraction(0)) + p * q
        return result

    def _mapped(self, body: Term, wrap) -> Dict[Term, Fraction]:
        result: Dict[Term, Fraction] = {}
        for x, p in self._resolve(body).items():
            n = wrap(x)
            result[n] = result.get(n, Fraction(0)) + p
        return result

    # -- steps ---------------------------------------------------------------

    def steps(self, term: Term) -> List[Step]:
        """Action steps of an N-normal term, shadow synchronisation applied."""
        cached = self._steps.get(term)
        if cached is None:
            cached = self._dedupe(self._compute_steps(term))
            self._steps[term] = cached
        return cached

    def _dedupe(self, steps: Iterable[Step]) -> List[Step]:
        seen: Dict[Tuple[ActionLabel, Term], None] = {}
        for label, cont in steps:
            seen.setdefault((label, self.canonical(cont)), None)
        return list(seen)

    def _compute_steps(self, term: Term) -> List[Step]:
        if isinstance(term, Prefix):
            return [(term.action, term.rest)]
        if isinstance(term, Alt):
            return self.steps(term.left) + self.steps(term.right)
        if isinstance(term, Parallel):
            return self._interleavings(term.left, term.right)
        if isinstance(term, CommMerge):
            return self._communications(term.left, term.right)
        if isinstance(term, Merge):
            return self._interleavings(term.left, term.right) + self._communications(term.left, term.right)
        if isinstance(term, Encap):
            return [(a, make_encap(term.blocked, c)) for a, c in self.steps(term.body)
                    if not matches_any(term.blocked, a)]
        if isinstance(term, Hide):
            return [(TAU if matches_any(term.hidden, a) else a, make_hide(term.hidden, c))
                    for a, c in self.steps(term.body)]
        if isinstance(term, (Deadlock, Skip, Shadow)):
            return []
        raise InternalError(f"steps requested for a term that is not N-normal: {type(term).__name__}")

    def _interleavings(self, left: Term, right: Term) -> List[Step]:
        result: List[Step] = []
        for mover, partner, put in ((left, right, lambda c, o: (c, o)), (right, left, lambda c, o: (o, c))):
            partner_shadows = self.shadows(partner)
            claimed = {a for a, _ in partner_shadows}
            for label, cont in self.steps(mover):
                if label in claimed:
                    # the partner's shadow must move along with the real action
                    for shadow_label, shadow_cont in partner_shadows:
                        if shadow_label == label:
                            result.append((label, make_composition(Merge, *put(cont, shadow_cont))))
                else:
                    result.append((label, make_composition(Merge, *put(cont, partner))))
        return result

    def _communications(self, left: Term, right: Term) -> List[Step]:
        result: List[Step] = []
        for a, x in self.steps(left):
            for b, y in self.steps(right):
                c = self.spec.communicate(a, b)
                if c is not None:
                    result.append((c, make_composition(Merge, x, y)))
        return result

    def shadows(self, term: Term) -> List[Step]:
        """Shadow offers of an N-normal term."""
        cached = self._shadows.get(term)
        if cached is not None:
            return cached
        if isinstance(term, Shadow):
            result = [(term.action, term.rest)]
        elif isinstance(term, Alt):
            result = self.shadows(term.left) + self.shadows(term.right)
        elif isinstance(term, (Merge, Parallel)):
            result = [(a, make_composition(Merge, c, term.right)) for a, c in self.shadows(term.left)]
            result += [(a, make_composition(Merge, term.left, c)) for a, c in self.shadows(term.right)]
        elif isinstance(term, Encap):
            result = [(a, make_encap(term.blocked, c)) for a, c in self.shadows(term.body)]
        elif isinstance(term, Hide):
            result = [(a, make_hide(term.hidden, c)) for a, c in self.shadows(term.body)]
        else:
            result = []
        self._shadows[term] = result
        return result

    def terminates(self, term: Term) -> bool:
        if isinstance(term, Skip):
            return True
        if isinstance(term, Alt):
            return self.terminates(term.left) or self.terminates(term.right)
        if isinstance(term, _COMPOSITIONS):
            return self.terminates(term.left) and self.terminates(term.right)
        if isinstance(term, (Encap, Hide)):
            return self.terminates(term.body)
        return False

    # -- state space ---------------------------------------------------------

    def expand(self, init: Optional[Term] = None) -> PTS:
        """
        Breadth-first expansion of the reachable state space.

        Args:
            init: Start term; defaults to the spec's init

        Returns:
            The PTS, states numbered in discovery order with the initial state 0.
        """
        kinds: List[str] = []
        terms: List[Term] = []
        supports: List[Optional[Dict[Term, Fraction]]] = []
        index: Dict[object, int] = {}
        queue: deque = deque()

        def register(key, kind: str, term: Term, support) -> int:
            found = index.get(key)
            if found is not None:
                return found
            if len(kinds) >= self.limit:
                raise ResourceError(self.limit, len(queue))
            index[key] = len(kinds)
            kinds.append(kind)
            terms.append(term)
            supports.append(support)
            queue.append(index[key])
            return index[key]

        def state_for(term: Term) -> int:
            term = self.canonical(term)
            dist = self.distribution(term)
            if self.is_probabilistic(term):
                return register((P_STATE, frozenset(dist.items())), P_STATE, term, dist)
            if len(dist) != 1:
                raise InternalError("a non-probabilistic term resolved to several normal forms")
            (normal,) = dist
            return register((N_STATE, normal), N_STATE, normal, None)

        state_for(init if init is not None else self.spec.init)
        edges: Dict[int, Tuple[Tuple[ActionLabel, int], ...]] = {}
        dists: Dict[int, Distribution] = {}
        while queue:
            s = queue.popleft()
            if kinds[s] == P_STATE:
                weights = {}
                for normal in sorted(supports[s], key=term_key):
                    target = register((N_STATE, normal), N_STATE, normal, None)
                    weights[target] = supports[s][normal]
                dists[s] = Distribution.of(weights)
            else:
                out: List[Tuple[ActionLabel, int]] = []
                for label, cont in self.steps(terms[s]):
                    step = (label, state_for(cont))
                    if step not in out:
                        out.append(step)
                edges[s] = tuple(out)

        n = len(kinds)
        pts = PTS(
            kinds=tuple(kinds),
            init=0,
            edges=tuple(edges.get(s, ()) for s in range(n)),
            dists=tuple(dists.get(s) for s in range(n)),
            terminating=tuple(kinds[s] == N_STATE and self.terminates(terms[s]) for s in range(n)),
            terms=tuple(terms),
        )
        logger.info(
            f"Expanded {n} states ({sum(k == P_STATE for k in kinds)} probabilistic, "
            f"{sum(len(e) for e in pts.edges)} action transitions)"
        )
        return pts


def expand(spec: ProcessSpec, limit: Optional[int] = None) -> PTS:
    return Expander(spec, limit).expand()
