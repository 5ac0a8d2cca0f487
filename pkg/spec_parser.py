"""
Parser and pretty-printer for the `.paver` specification language.

The grammar is handled by lark (LALR with positions); name resolution,
probability checks and guardedness are done over the resulting tree so that
every problem is reported as a Diagnostic with its source span.
"""
import logging
from fractions import Fraction
from typing import Dict, Iterable, List, Mapping, Optional, Set, Tuple

from lark import Lark, Token, Tree
from lark.exceptions import UnexpectedCharacters, UnexpectedInput, UnexpectedToken

from paver_errors import Diagnostic, ParseError, SourceSpan, SpecificationError
from process_term import (
    Alt, ActionLabel, ActionPattern, BITS, BOT, CommMerge, CommRule, DELTA, DataVar, Deadlock,
    Definition, Encap, Hide, Merge, PChoice, Parallel, Prefix, ProcessSpec, SKIP, Shadow, Skip,
    Sum, TAU, Term, Var, check_guarded, pchoice,
)

logger = logging.getLogger(__name__)

GRAMMAR = r"""
start: _decl*

_decl: domain_decl | param_decl | comm_decl | proc_decl | init_decl

domain_decl: "domain" ID "=" "{" ID ("," ID)* "}"
param_decl: "param" ID "=" prob
comm_decl: "comm" action "|" action "->" action
proc_decl: "proc" ID formals? "=" term
formals: "(" ID ("," ID)* ")"
init_decl: "init" term

?term: pch ("+" pch)*
?pch: seq ("+{" prob "}" seq)*
?seq: atom
    | atom "." seq                          -> prefix
    | "sum" ID ":" ID "." seq               -> sum

?atom: "delta"                              -> delta
     | "skip"                               -> skip
     | "tau"                                -> tau
     | "shadow" "(" action ")"              -> shadow
     | "encap" "(" patset "," term ")"      -> encap
     | "hide" "(" patset "," term ")"       -> hide
     | "par" "(" term "," term ")"          -> par
     | "interleave" "(" term "," term ")"   -> interleave
     | "communicate" "(" term "," term ")"  -> communicate
     | call
     | "(" term ")"

patset: "{" action ("," action)* "}"
call: ID args?
action: ID args?
args: "(" arg ("," arg)* ")"
?arg: ID
    | NUMBER
    | "bot"                                 -> bot

prob: NUMBER "/" NUMBER                     -> frac
    | NUMBER                                -> number
    | ID                                    -> param_ref

ID: /[A-Za-z_][A-Za-z0-9_]*/
NUMBER: /[0-9]+(\.[0-9]+)?/
COMMENT: /%[^\n]*/

%import common.WS
%ignore WS
%ignore COMMENT
"""

RESERVED = {"domain", "param", "comm", "proc", "init", "sum", "delta", "skip", "tau", "shadow",
            "encap", "hide", "par", "interleave", "communicate", "bot"}

_COMPOSITIONS = {"par": Merge, "interleave": Parallel, "communicate": CommMerge}


class _SpecBuilder:
    """Turns one lark tree into terms, collecting diagnostics on the way."""

    def __init__(self, text: str, overrides: Optional[Mapping[str, Fraction]] = None):
        self.text = text
        self.overrides = dict(overrides or {})
        self.diagnostics: List[Diagnostic] = []
        self.domains: Dict[str, Tuple[str, ...]] = {}
        self.constants: Set[str] = set()
        self.params: Dict[str, Fraction] = {}
        self.procs: Dict[str, Tuple[str, ...]] = {}
        self.arities: Dict[str, int] = {}

    @classmethod
    def from_spec(cls, text: str, spec: ProcessSpec) -> "_SpecBuilder":
        builder = cls(text)
        builder.domains = dict(spec.domains)
        for members in spec.domains.values():
            builder.constants.update(members)
        builder.params = dict(spec.params)
        builder.procs = {name: d.params for name, d in spec.defs.items()}
        return builder

    # -- diagnostics ---------------------------------------------------------

    def span(self, node) -> SourceSpan:
        if isinstance(node, Token):
            start, end, line, column = node.start_pos, node.end_pos, node.line, node.column
        elif isinstance(node, Tree) and not node.meta.empty:
            meta = node.meta
            start, end, line, column = meta.start_pos, meta.end_pos, meta.line, meta.column
        else:
            start, end, line, column = 0, 0, 1, 1
        return self.span_at(start or 0, end or start or 0, line or 1, column or 1)

    def span_at(self, start: int, end: int, line: int, column: int) -> SourceSpan:
        to_bytes = lambda pos: len(self.text[:max(pos, 0)].encode("utf-8"))
        return SourceSpan(to_bytes(start), to_bytes(end), max(line, 1), max(column, 1))

    def error(self, node, message: str, kind: str = "error"):
        self.diagnostics.append(Diagnostic(self.span(node), message, kind))

    # -- declarations --------------------------------------------------------

    def collect_declarations(self, tree: Tree):
        """First pass: domains, params and process signatures."""
        for decl in tree.children:
            if decl.data == "domain_decl":
                self._declare_domain(decl)
            elif decl.data == "param_decl":
                name = decl.children[0]
                if name in self.params:
                    self.error(name, f"parameter {name} declared twice")
                value = self.probability(decl.children[1], allow_params=False, allow_one=True)
                self.params[str(name)] = value
            elif decl.data == "proc_decl":
                name = decl.children[0]
                formals = decl.children[1] if len(decl.children) == 3 else None
                names = tuple(str(t) for t in formals.children) if formals is not None else ()
                if name in self.procs:
                    self.error(name, f"process {name} declared twice")
                if len(set(names)) != len(names):
                    self.error(formals, f"repeated parameter in {name}")
                self.procs[str(name)] = names
        self._apply_overrides()

    def _declare_domain(self, decl: Tree):
        name, *members = decl.children
        if name in self.domains:
            self.error(name, f"domain {name} declared twice")
        for member in members:
            if member in RESERVED or member in BITS:
                self.error(member, f"{member} is reserved and cannot be a domain constant")
            elif member in self.constants:
                self.error(member, f"constant {member} declared twice")
            self.constants.add(str(member))
        self.domains[str(name)] = tuple(str(m) for m in members)

    def _apply_overrides(self):
        if "all" in self.overrides:
            for name in self.params:
                self.params[name] = self.overrides["all"]
        for name, value in self.overrides.items():
            if name == "all":
                continue
            if name not in self.params:
                self.diagnostics.append(Diagnostic(self.span_at(0, 0, 1, 1), f"unknown parameter {name}"))
                continue
            self.params[name] = value
        for name, value in self.params.items():
            if not Fraction(0) < value <= Fraction(1):
                self.diagnostics.append(
                    Diagnostic(self.span_at(0, 0, 1, 1), f"parameter {name} = {value} outside (0,1]")
                )

    def build(self, tree: Tree) -> ProcessSpec:
        """Second pass: communication rules, process bodies and init."""
        comm: List[CommRule] = []
        defs: Dict[str, Definition] = {}
        init: Optional[Term] = None
        proc_nodes = {}
        for decl in tree.children:
            if decl.data == "comm_decl":
                left, right, result = (self.pattern(n) for n in decl.children)
                bound = set(self._pattern_vars(left)) | set(self._pattern_vars(right))
                unbound = set(self._pattern_vars(result)) - bound
                if unbound:
                    self.error(decl.children[2], f"result uses unbound variables {sorted(unbound)}")
                comm.append(CommRule(left, right, result))
            elif decl.data == "proc_decl":
                name = str(decl.children[0])
                if name in defs:
                    continue
                params = self.procs[name]
                body = self.term(decl.children[-1], frozenset(params))
                defs[name] = Definition(name, params, body)
                proc_nodes[name] = decl
            elif decl.data == "init_decl":
                if init is not None:
                    self.error(decl, "init declared twice")
                init = self.term(decl.children[0], frozenset())
        if init is None:
            end = len(self.text)
            line = self.text.count("\n") + 1
            self.diagnostics.append(Diagnostic(self.span_at(end, end, line, 1), "missing init declaration"))
            init = DELTA

        spec = ProcessSpec(dict(self.domains), tuple(comm), defs, init, dict(self.params))
        for name in check_guarded(spec):
            self.error(proc_nodes[name], f"unguarded recursion in {name}")
        return spec

    # -- terms ---------------------------------------------------------------

    def term(self, node, scope: frozenset) -> Term:
        kind = node.data
        if kind == "term":
            result = self.term(node.children[0], scope)
            for operand in node.children[1:]:
                result = Alt(result, self.term(operand, scope))
            return result
        if kind == "pch":
            result = self.term(node.children[0], scope)
            rest = node.children[1:]
            for prob_node, operand in zip(rest[0::2], rest[1::2]):
                prob = self.probability(prob_node)
                result = pchoice(prob, result, self.term(operand, scope))
            return result
        if kind == "prefix":
            head, tail = node.children
            label, shadowed = self._prefix_head(head, scope)
            rest = self.term(tail, scope)
            if label is None:
                return rest
            return Shadow(label, rest) if shadowed else Prefix(label, rest)
        if kind == "sum":
            binder, domain, body = node.children
            if domain not in self.domains:
                self.error(domain, f"unknown identifier {domain}")
            return Sum(str(binder), str(domain), self.term(body, scope | {str(binder)}))
        if kind == "delta":
            return DELTA
        if kind == "skip":
            return SKIP
        if kind == "tau":
            return Prefix(TAU, SKIP)
        if kind == "shadow":
            return Shadow(self.label(node.children[0], scope), SKIP)
        if kind in ("encap", "hide"):
            patset, body = node.children
            patterns = frozenset(self.pattern(p) for p in patset.children)
            inner = self.term(body, scope)
            return Encap(patterns, inner) if kind == "encap" else Hide(patterns, inner)
        if kind in _COMPOSITIONS:
            left, right = node.children
            return _COMPOSITIONS[kind](self.term(left, scope), self.term(right, scope))
        if kind == "call":
            return self._call(node, scope)
        raise SpecificationError(f"unexpected syntax node {kind}")

    def _prefix_head(self, head, scope) -> Tuple[Optional[ActionLabel], bool]:
        if head.data == "tau":
            return TAU, False
        if head.data == "shadow":
            return self.label(head.children[0], scope), True
        if head.data == "call" and head.children[0] not in self.procs:
            return self.label(head, scope), False
        self.error(head, "only actions can prefix a process")
        return None, False

    def _call(self, node: Tree, scope) -> Term:
        name = str(node.children[0])
        if name in self.procs:
            args = self._args(node, scope)
            expected = len(self.procs[name])
            if len(args) != expected:
                self.error(node, f"{name} expects {expected} arguments, got {len(args)}")
            return Var(name, args)
        return Prefix(self.label(node, scope), SKIP)

    def _args(self, node: Tree, scope) -> tuple:
        if len(node.children) < 2:
            return ()
        return tuple(self.argument(a, scope) for a in node.children[1].children)

    def label(self, node: Tree, scope) -> ActionLabel:
        name = str(node.children[0])
        if name in RESERVED:
            self.error(node, f"{name} is reserved")
        args = self._args(node, scope)
        self._check_arity(node, name, len(args))
        return ActionLabel(name, args)

    def _check_arity(self, node, name: str, arity: int):
        known = self.arities.setdefault(name, arity)
        if known != arity:
            self.error(node, f"action {name} used with {arity} arguments, elsewhere with {known}")

    def argument(self, node, scope):
        if isinstance(node, Tree):
            return BOT
        if node.type == "NUMBER":
            if node not in BITS:
                self.error(node, f"bit literal must be 0 or 1, got {node}")
            return str(node)
        if node in scope:
            return DataVar(str(node))
        if node in self.constants:
            return str(node)
        self.error(node, f"unknown identifier {node}")
        return DataVar(str(node))

    def pattern(self, node: Tree) -> ActionPattern:
        """Action pattern: identifiers that are not constants become pattern variables."""
        name = str(node.children[0])
        if len(node.children) < 2:
            return ActionPattern(name)
        args = []
        for arg in node.children[1].children:
            if isinstance(arg, Tree):
                args.append(BOT)
            elif arg.type == "NUMBER":
                if arg not in BITS:
                    self.error(arg, f"bit literal must be 0 or 1, got {arg}")
                args.append(str(arg))
            elif arg in self.constants:
                args.append(str(arg))
            else:
                args.append(DataVar(str(arg)))
        self._check_arity(node, name, len(args))
        return ActionPattern(name, tuple(args))

    @staticmethod
    def _pattern_vars(pattern: ActionPattern) -> List[str]:
        return [a.name for a in pattern.args or () if isinstance(a, DataVar) and a.name != "_"]

    def probability(self, node: Tree, allow_params: bool = True, allow_one: bool = False) -> Fraction:
        """Exact value of a probability literal or parameter reference."""
        if node.data == "param_ref":
            name = node.children[0]
            if not allow_params or name not in self.params:
                self.error(name, f"unknown identifier {name}")
                return Fraction(1, 2)
            return self.params[str(name)]
        if node.data == "frac":
            num, den = node.children
            if "." in num or "." in den:
                self.error(node, "fraction parts must be integers")
                return Fraction(1, 2)
            if int(den) == 0:
                self.error(den, "division by zero in probability")
                return Fraction(1, 2)
            value = Fraction(int(num), int(den))
        else:
            value = Fraction(str(node.children[0]))
        upper_ok = value <= 1 if allow_one else value < 1
        if not (value > 0 and upper_ok):
            self.error(node, f"probability literal {value} outside (0,1)")
            return Fraction(1, 2)
        return value


class SpecParser:
    """Reusable parser; the lark tables are built once per instance."""

    def __init__(self):
        self._lark = Lark(GRAMMAR, parser="lalr", propagate_positions=True, start=["start", "term"])

    def _tree(self, text: str, start: str) -> Tree:
        try:
            return self._lark.parse(text, start=start)
        except UnexpectedInput as e:
            raise ParseError([self._syntax_diagnostic(text, e)]) from None

    @staticmethod
    def _syntax_diagnostic(text: str, error: UnexpectedInput) -> Diagnostic:
        builder = _SpecBuilder(text)
        if isinstance(error, UnexpectedCharacters):
            pos = error.pos_in_stream or 0
            span = builder.span_at(pos, pos + 1, error.line, error.column)
            return Diagnostic(span, f"unexpected character {text[pos:pos + 1]!r}", "lexical")
        if isinstance(error, UnexpectedToken) and error.token is not None:
            token = error.token
            if token.type == "$END":
                pos = len(text)
                line = text.count("\n") + 1
                column = pos - text.rfind("\n")
                return Diagnostic(builder.span_at(pos, pos, line, column), "unexpected end of input", "syntax")
            expected = ", ".join(sorted(error.expected))
            span = builder.span_at(token.start_pos or 0, token.end_pos or 0, token.line or 1, token.column or 1)
            return Diagnostic(span, f"unexpected {str(token)!r}; expected one of {expected}", "syntax")
        pos = len(text)
        return Diagnostic(builder.span_at(pos, pos, getattr(error, "line", 1), getattr(error, "column", 1)),
                          "unexpected end of input", "syntax")

    def parse(self, text: str, params: Optional[Mapping[str, Fraction]] = None) -> ProcessSpec:
        """
        Parse a complete specification.

        Args:
            text: Source of a `.paver` file
            params: Overrides for declared `param` values; key `all` sets every one

        Returns:
            The ProcessSpec; raises ParseError with every diagnostic otherwise.
        """
        tree = self._tree(text, "start")
        builder = _SpecBuilder(text, params)
        builder.collect_declarations(tree)
        spec = builder.build(tree)
        if builder.diagnostics:
            raise ParseError(sorted(builder.diagnostics, key=lambda d: d.span.start))
        logger.debug(f"Parsed {len(spec.defs)} definitions over {len(spec.domains)} domains")
        return spec

    def parse_term(self, text: str, spec: ProcessSpec) -> Term:
        """Parse a single term against the declarations of an existing spec."""
        tree = self._tree(text, "term")
        builder = _SpecBuilder.from_spec(text, spec)
        term = builder.term(tree, frozenset())
        if builder.diagnostics:
            raise ParseError(builder.diagnostics)
        return term

    def declared_params(self, text: str) -> List[str]:
        tree = self._tree(text, "start")
        return [str(d.children[0]) for d in tree.children if d.data == "param_decl"]


_parser: Optional[SpecParser] = None


def get_parser() -> SpecParser:
    global _parser
    if _parser is None:
        _parser = SpecParser()
    return _parser


def parse_spec(text: str, params: Optional[Mapping[str, Fraction]] = None) -> ProcessSpec:
    return get_parser().parse(text, params)


def parse_term(text: str, spec: ProcessSpec) -> Term:
    return get_parser().parse_term(text, spec)


def declared_params(text: str) -> List[str]:
    return get_parser().declared_params(text)


def parse_probability(text: str) -> Fraction:
    """Probability given on a command line: `1/2`, `0.25` or `1`."""
    try:
        value = Fraction(text.strip())
    except (ValueError, ZeroDivisionError):
        raise SpecificationError(f"not a probability: {text}") from None
    if not Fraction(0) <= value <= Fraction(1):
        raise SpecificationError(f"probability {value} outside [0,1]")
    return value


def parse_pattern(text: str, constants: Iterable[str] = ()) -> ActionPattern:
    """Action pattern given on a command line, e.g. `s_C` or `c_B(bot,bot)`."""
    text = text.strip()
    if "(" not in text:
        return ActionPattern(text)
    if not text.endswith(")"):
        raise SpecificationError(f"malformed action pattern {text}")
    name, inner = text[:-1].split("(", 1)
    known = set(constants) | set(BITS) | {BOT}
    args = tuple(a if a in known else DataVar(a) for a in (part.strip() for part in inner.split(",")))
    return ActionPattern(name.strip(), args)


# -- printing ----------------------------------------------------------------

ALT_LEVEL, PCH_LEVEL, SEQ_LEVEL, ATOM_LEVEL = range(4)


def format_probability(prob: Fraction) -> str:
    return f"{prob.numerator}/{prob.denominator}"


def _format_patterns(patterns) -> str:
    return "{" + ", ".join(sorted(str(p) for p in patterns)) + "}"


def _printed(term: Term) -> Tuple[str, int]:
    if isinstance(term, Deadlock):
        return "delta", ATOM_LEVEL
    if isinstance(term, Skip):
        return "skip", ATOM_LEVEL
    if isinstance(term, Prefix):
        if isinstance(term.rest, Skip):
            return str(term.action), ATOM_LEVEL
        return f"{term.action} . {_wrapped(term.rest, SEQ_LEVEL)}", SEQ_LEVEL
    if isinstance(term, Shadow):
        head = f"shadow({term.action})"
        if isinstance(term.rest, Skip):
            return head, ATOM_LEVEL
        return f"{head} . {_wrapped(term.rest, SEQ_LEVEL)}", SEQ_LEVEL
    if isinstance(term, Sum):
        return f"sum {term.binder} : {term.domain} . {_wrapped(term.body, SEQ_LEVEL)}", SEQ_LEVEL
    if isinstance(term, Alt):
        return f"{_wrapped(term.left, ALT_LEVEL)} + {_wrapped(term.right, PCH_LEVEL)}", ALT_LEVEL
    if isinstance(term, PChoice):
        prob = format_probability(term.prob)
        return f"{_wrapped(term.left, PCH_LEVEL)} +{{{prob}}} {_wrapped(term.right, SEQ_LEVEL)}", PCH_LEVEL
    if isinstance(term, Encap):
        return f"encap({_format_patterns(term.blocked)}, {pretty_print(term.body)})", ATOM_LEVEL
    if isinstance(term, Hide):
        return f"hide({_format_patterns(term.hidden)}, {pretty_print(term.body)})", ATOM_LEVEL
    for keyword, cls in _COMPOSITIONS.items():
        if type(term) is cls:
            return f"{keyword}({pretty_print(term.left)}, {pretty_print(term.right)})", ATOM_LEVEL
    if isinstance(term, Var):
        if not term.args:
            return term.name, ATOM_LEVEL
        return f"{term.name}({', '.join(str(a) for a in term.args)})", ATOM_LEVEL
    raise SpecificationError(f"cannot print {type(term).__name__}")


def _wrapped(term: Term, level: int) -> str:
    text, own = _printed(term)
    return text if own >= level else f"({text})"


def pretty_print(term: Term) -> str:
    """Concrete syntax with the fewest parentheses that still parse back to `term`."""
    return _printed(term)[0]


def format_spec(spec: ProcessSpec) -> str:
    """Render a whole specification as `.paver` source."""
    lines: List[str] = []
    for name, members in spec.domains.items():
        lines.append(f"domain {name} = {{{', '.join(members)}}}")
    if spec.comm:
        lines.append("")
        lines.extend(f"comm {rule}" for rule in spec.comm)
    lines.append("")
    for name, definition in spec.defs.items():
        head = name if not definition.params else f"{name}({', '.join(definition.params)})"
        lines.append(f"proc {head} = {pretty_print(definition.body)}")
    lines.append("")
    lines.append(f"init {pretty_print(spec.init)}")
    return "\n".join(lines) + "\n"
