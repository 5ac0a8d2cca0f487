"""
Process terms of the probabilistic algebra with imperfect actions.

Terms are immutable frozen dataclasses, so structural equality and hashing come
for free and terms can serve directly as state identities during expansion.
"""
import logging
from dataclasses import dataclass, field, fields, is_dataclass, replace
from fractions import Fraction
from functools import lru_cache
from typing import Dict, FrozenSet, Iterable, Iterator, List, Mapping, Optional, Set, Tuple, Union

import networkx as nx

from paver_errors import SpecificationError

logger = logging.getLogger(__name__)

BOT = "bot"
BITS = ("0", "1")
WILDCARD = "_"


@dataclass(frozen=True)
class DataVar:
    """A data variable, bound by a sum, a definition parameter or a pattern."""
    name: str

    def __str__(self) -> str:
        return self.name


Data = Union[str, DataVar]


def _format_args(args: Tuple[Data, ...]) -> str:
    return "(" + ",".join(str(a) for a in args) + ")"


@dataclass(frozen=True)
class ActionLabel:
    """A visible action `name(args)` or the silent action (name None)."""
    name: Optional[str]
    args: Tuple[Data, ...] = ()

    @property
    def is_silent(self) -> bool:
        return self.name is None

    def is_closed(self) -> bool:
        return not any(isinstance(a, DataVar) for a in self.args)

    def __str__(self) -> str:
        if self.name is None:
            return "tau"
        return self.name + (_format_args(self.args) if self.args else "")


TAU = ActionLabel(None)


def action(name: str, *args: Data) -> ActionLabel:
    """Shorthand for a visible action label."""
    return ActionLabel(name, tuple(args))


@dataclass(frozen=True)
class ActionPattern:
    """
    Matches action labels by name and, optionally, by arguments.

    Arguments are constants or pattern variables (DataVar). A repeated variable
    must match the same value everywhere; `_` matches anything independently.
    With args None the pattern matches every label of that name.
    """
    name: str
    args: Optional[Tuple[Data, ...]] = None

    def match(self, label: ActionLabel, bindings: Optional[Mapping[str, Data]] = None) -> Optional[Dict[str, Data]]:
        """Unify the pattern with a label, returning the extended bindings or None."""
        if label.name != self.name:
            return None
        env = dict(bindings or {})
        if self.args is None:
            return env
        if len(self.args) != len(label.args):
            return None
        for pat, value in zip(self.args, label.args):
            if isinstance(pat, DataVar):
                if pat.name == WILDCARD:
                    continue
                bound = env.get(pat.name)
                if bound is None:
                    env[pat.name] = value
                elif bound != value:
                    return None
            elif pat != value:
                return None
        return env

    def matches(self, label: ActionLabel) -> bool:
        return self.match(label) is not None

    def instantiate(self, bindings: Mapping[str, Data]) -> ActionLabel:
        args = []
        for pat in self.args or ():
            if isinstance(pat, DataVar):
                if pat.name not in bindings:
                    raise SpecificationError(f"variable {pat.name} of {self} is not bound by the rule")
                args.append(bindings[pat.name])
            else:
                args.append(pat)
        return ActionLabel(self.name, tuple(args))

    def __str__(self) -> str:
        return self.name + (_format_args(self.args) if self.args else "")


def matches_any(patterns: Iterable[ActionPattern], label: ActionLabel) -> bool:
    return not label.is_silent and any(p.matches(label) for p in patterns)


@dataclass(frozen=True)
class CommRule:
    """A communication rule `left | right -> result`, usable in either orientation."""
    left: ActionPattern
    right: ActionPattern
    result: ActionPattern

    def apply(self, a: ActionLabel, b: ActionLabel) -> Optional[ActionLabel]:
        for x, y in ((a, b), (b, a)):
            env = self.left.match(x)
            if env is None:
                continue
            env = self.right.match(y, env)
            if env is not None:
                return self.result.instantiate(env)
        return None

    def __str__(self) -> str:
        return f"{self.left} | {self.right} -> {self.result}"


def communicate(a: ActionLabel, b: ActionLabel, rules: Iterable[CommRule]) -> Optional[ActionLabel]:
    """Result of the communication function on (a, b), or None when undefined."""
    if a.is_silent or b.is_silent:
        return None
    for rule in rules:
        result = rule.apply(a, b)
        if result is not None:
            return result
    return None


class Term:
    """Base class of all process terms."""
    __slots__ = ()


@dataclass(frozen=True)
class Deadlock(Term):
    pass


@dataclass(frozen=True)
class Skip(Term):
    """Successful termination."""


@dataclass(frozen=True)
class Prefix(Term):
    action: ActionLabel
    rest: Term


@dataclass(frozen=True)
class Shadow(Term):
    """Passive copy of an action: it only moves together with a real occurrence."""
    action: ActionLabel
    rest: Term

    def __post_init__(self):
        if self.action.is_silent:
            raise SpecificationError("the silent action has no shadow")


@dataclass(frozen=True)
class Alt(Term):
    left: Term
    right: Term


@dataclass(frozen=True)
class PChoice(Term):
    """`left` with probability prob, otherwise `right`. Use pchoice() to build."""
    prob: Fraction
    left: Term
    right: Term

    def __post_init__(self):
        if not Fraction(0) < self.prob < Fraction(1):
            raise SpecificationError(f"probability {self.prob} outside (0,1)")


@dataclass(frozen=True)
class Merge(Term):
    left: Term
    right: Term


@dataclass(frozen=True)
class Parallel(Term):
    left: Term
    right: Term


@dataclass(frozen=True)
class CommMerge(Term):
    left: Term
    right: Term


@dataclass(frozen=True)
class Encap(Term):
    blocked: FrozenSet[ActionPattern]
    body: Term


@dataclass(frozen=True)
class Hide(Term):
    hidden: FrozenSet[ActionPattern]
    body: Term


@dataclass(frozen=True)
class Var(Term):
    """Reference to a recursive definition."""
    name: str
    args: Tuple[Data, ...] = ()


@dataclass(frozen=True)
class Sum(Term):
    """Alternative composition of `body` over every constant of a domain."""
    binder: str
    domain: str
    body: Term


DELTA = Deadlock()
SKIP = Skip()

BINARY_OPERATORS = (Alt, Merge, Parallel, CommMerge)

_TERM_FIELDS = {
    Prefix: ("rest",),
    Shadow: ("rest",),
    Alt: ("left", "right"),
    PChoice: ("left", "right"),
    Merge: ("left", "right"),
    Parallel: ("left", "right"),
    CommMerge: ("left", "right"),
    Encap: ("body",),
    Hide: ("body",),
    Sum: ("body",),
}


def subterms(term: Term) -> Tuple[Term, ...]:
    return tuple(getattr(term, name) for name in _TERM_FIELDS.get(type(term), ()))


def map_subterms(term: Term, fn) -> Term:
    """Rebuild a term with fn applied to each immediate subterm."""
    names = _TERM_FIELDS.get(type(term))
    if not names:
        return term
    return replace(term, **{name: fn(getattr(term, name)) for name in names})


def pchoice(prob, left: Term, right: Term) -> Term:
    """Probabilistic choice with the p=1 / p=0 normalisation applied."""
    prob = Fraction(prob)
    if prob == 1:
        return left
    if prob == 0:
        return right
    if not Fraction(0) < prob < Fraction(1):
        raise SpecificationError(f"probability {prob} outside [0,1]")
    return PChoice(prob, left, right)


def alt(*terms: Term) -> Term:
    """Left-nested alternative composition; no operands gives deadlock."""
    if not terms:
        return DELTA
    result = terms[0]
    for t in terms[1:]:
        result = Alt(result, t)
    return result


def _render(value) -> str:
    if isinstance(value, frozenset):
        return "{" + ",".join(sorted(_render(v) for v in value)) + "}"
    if isinstance(value, tuple):
        return "(" + ",".join(_render(v) for v in value) + ")"
    if is_dataclass(value):
        inner = ",".join(_render(getattr(value, f.name)) for f in fields(value))
        return f"{type(value).__name__}({inner})"
    return repr(value)


TERM_KEY_CACHE_SIZE = 1 << 16


@lru_cache(maxsize=TERM_KEY_CACHE_SIZE)
def term_key(term: Term) -> str:
    """Total structural order on terms, independent of hash seeds."""
    return _render(term)


@dataclass(frozen=True)
class Definition:
    name: str
    params: Tuple[str, ...]
    body: Term


@dataclass(frozen=True)
class ProcessSpec:
    """A complete specification. Treat every field as immutable."""
    domains: Dict[str, Tuple[str, ...]]
    comm: Tuple[CommRule, ...]
    defs: Dict[str, Definition]
    init: Term
    params: Dict[str, Fraction] = field(default_factory=dict, compare=False)

    def constants(self) -> FrozenSet[str]:
        values: Set[str] = set(BITS) | {BOT}
        for members in self.domains.values():
            values.update(members)
        return frozenset(values)

    def domain(self, name: str) -> Tuple[str, ...]:
        try:
            return self.domains[name]
        except KeyError:
            raise SpecificationError(f"unknown domain {name}") from None

    def unfold(self, var: Var) -> Term:
        """Body of the referenced definition with its parameters instantiated."""
        definition = self.defs.get(var.name)
        if definition is None:
            raise SpecificationError(f"unknown process {var.name}")
        if len(definition.params) != len(var.args):
            raise SpecificationError(
                f"{var.name} expects {len(definition.params)} arguments, got {len(var.args)}"
            )
        if not definition.params:
            return definition.body
        return substitute(definition.body, dict(zip(definition.params, var.args)))

    def communicate(self, a: ActionLabel, b: ActionLabel) -> Optional[ActionLabel]:
        return communicate(a, b, self.comm)

    def with_init(self, init: Term) -> "ProcessSpec":
        return replace(self, init=init)


def substitute(term: Term, binding: Mapping[str, Data], constants: Optional[Iterable[str]] = None) -> Term:
    """
    Replace free data variables by values.

    Args:
        term: Term to instantiate
        binding: Variable name to constant (or variable) mapping
        constants: When given, every bound value must be one of these

    Returns:
        The instantiated term; sums rebinding a variable shadow it.
    """
    if constants is not None:
        known = set(constants)
        for name, value in binding.items():
            if isinstance(value, str) and value not in known:
                raise SpecificationError(f"unbound domain constant {value} for {name}")
    if not binding:
        return term
    return _substitute(term, dict(binding))


def _substitute_data(value: Data, env: Mapping[str, Data]) -> Data:
    if isinstance(value, DataVar):
        return env.get(value.name, value)
    return value


def _substitute_label(label: ActionLabel, env: Mapping[str, Data]) -> ActionLabel:
    if label.is_closed():
        return label
    return ActionLabel(label.name, tuple(_substitute_data(a, env) for a in label.args))


def _substitute(term: Term, env: Dict[str, Data]) -> Term:
    if isinstance(term, (Prefix, Shadow)):
        return type(term)(_substitute_label(term.action, env), _substitute(term.rest, env))
    if isinstance(term, Var):
        return Var(term.name, tuple(_substitute_data(a, env) for a in term.args))
    if isinstance(term, Sum):
        inner = {k: v for k, v in env.items() if k != term.binder}
        if not inner:
            return term
        return Sum(term.binder, term.domain, _substitute(term.body, inner))
    return map_subterms(term, lambda t: _substitute(t, env))


def iter_labels(term: Term) -> Iterator[ActionLabel]:
    """Every action label written in a term, shadows included."""
    if isinstance(term, (Prefix, Shadow)):
        yield term.action
    for sub in subterms(term):
        yield from iter_labels(sub)


def free_data_vars(term: Term) -> Set[str]:
    if isinstance(term, (Prefix, Shadow)):
        names = {a.name for a in term.action.args if isinstance(a, DataVar)}
        return names | free_data_vars(term.rest)
    if isinstance(term, Var):
        return {a.name for a in term.args if isinstance(a, DataVar)}
    if isinstance(term, Sum):
        return free_data_vars(term.body) - {term.binder}
    names: Set[str] = set()
    for sub in subterms(term):
        names |= free_data_vars(sub)
    return names


def _unguarded_references(term: Term) -> Set[str]:
    if isinstance(term, (Prefix, Shadow)):
        return set()
    if isinstance(term, Var):
        return {term.name}
    names: Set[str] = set()
    for sub in subterms(term):
        names |= _unguarded_references(sub)
    return names


def check_guarded(spec: ProcessSpec) -> List[str]:
    """
    Find definitions that recurse without passing an action prefix.

    Returns:
        Sorted names of the offending definitions; empty means guarded.
    """
    graph = nx.DiGraph()
    graph.add_nodes_from(spec.defs)
    for name, definition in spec.defs.items():
        for target in _unguarded_references(definition.body):
            if target in spec.defs:
                graph.add_edge(name, target)

    offending: Set[str] = set()
    for component in nx.strongly_connected_components(graph):
        if len(component) > 1:
            offending |= component
        else:
            (node,) = component
            if graph.has_edge(node, node):
                offending.add(node)
    if offending:
        logger.debug(f"Unguarded recursion through {sorted(offending)}")
    return sorted(offending)


class ImperfectionMap:
    """Assigns success probabilities to the actions that may fail."""

    def __init__(self, entries: Mapping[ActionPattern, Fraction]):
        self.entries: Dict[ActionPattern, Fraction] = {}
        for pattern, prob in entries.items():
            prob = Fraction(prob)
            if not Fraction(0) < prob <= Fraction(1):
                raise SpecificationError(f"success probability {prob} of {pattern} outside (0,1]")
            self.entries[pattern] = prob

    def lookup(self, label: ActionLabel) -> Optional[Fraction]:
        if label.is_silent:
            return None
        hits = [(pattern, prob) for pattern, prob in self.entries.items() if pattern.matches(label)]
        if len(hits) > 1:
            names = sorted(str(pattern) for pattern, _ in hits)
            raise SpecificationError(f"ambiguous imperfection patterns for {label}: {names}")
        return hits[0][1] if hits else None

    def __len__(self) -> int:
        return len(self.entries)


def imperfect_transform(term: Term, imap: ImperfectionMap) -> Term:
    """Make every listed action fallible: `a.x` becomes `a.x +{pi} delta`."""
    if isinstance(term, Prefix):
        step = Prefix(term.action, imperfect_transform(term.rest, imap))
        prob = imap.lookup(term.action)
        return step if prob is None else pchoice(prob, step, DELTA)
    return map_subterms(term, lambda t: imperfect_transform(t, imap))


def imperfect_transform_spec(spec: ProcessSpec, imap: ImperfectionMap) -> ProcessSpec:
    defs = {
        name: replace(definition, body=imperfect_transform(definition.body, imap))
        for name, definition in spec.defs.items()
    }
    return replace(spec, defs=defs, init=imperfect_transform(spec.init, imap))
