"""
Case-study protocols built programmatically.

build_ucp/build_abp produce exactly the specifications that parsing the bundled
`ucp.paver` / `abp.paver` yields for the same parameter values.
"""
import logging
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import FrozenSet, List, Mapping, Optional, Tuple

from paver_errors import SpecificationError
from process_term import (
    ActionPattern, BOT, CommRule, DELTA, DataVar, Definition, Encap, Hide, Merge, Prefix,
    ProcessSpec, Shadow, Sum, Term, Var, action, alt, pchoice,
)
from spec_parser import RESERVED, parse_spec

logger = logging.getLogger(__name__)

BUNDLED_DIR = Path(__file__).resolve().parent
DOMAIN = "D"

UCP_BLOCKED = frozenset({ActionPattern("s_B"), ActionPattern("r_B")})
UCP_HIDDEN = frozenset({ActionPattern("c_B")})
ABP_BLOCKED = frozenset({ActionPattern(n) for n in ("s_B", "r_B", "s_D", "r_D")})
ABP_HIDDEN = frozenset({ActionPattern("c_B"), ActionPattern("c_D")})
CORRUPTION_PATTERNS = frozenset({ActionPattern("c_B", (BOT, BOT)), ActionPattern("c_D", (BOT,))})


def data_domain(size: int) -> Tuple[str, ...]:
    if size < 1:
        raise SpecificationError("the data domain needs at least one element")
    return tuple(f"d{i}" for i in range(1, size + 1))


def _check_probabilities(names: List[str], values) -> None:
    for name, value in zip(names, values):
        if not Fraction(0) < Fraction(value) <= Fraction(1):
            raise SpecificationError(f"{name} = {value} outside (0,1]")


def _check_delta(delta: Tuple[str, ...]) -> None:
    if not delta or len(set(delta)) != len(delta):
        raise SpecificationError("data domain must be non-empty and without repeats")
    bad = [d for d in delta if d in RESERVED or d in ("0", "1")]
    if bad:
        raise SpecificationError(f"reserved names in data domain: {bad}")


@dataclass(frozen=True)
class UcpParams:
    """Success probabilities of read, send, receive and deliver."""
    pi1: Fraction = Fraction(1, 2)
    pi2: Fraction = Fraction(1, 2)
    pi3: Fraction = Fraction(1, 2)
    pi4: Fraction = Fraction(1, 2)
    delta: Tuple[str, ...] = ("d1",)

    def __post_init__(self):
        _check_probabilities(self.names(), self.values())
        _check_delta(self.delta)

    @staticmethod
    def names() -> List[str]:
        return ["pi1", "pi2", "pi3", "pi4"]

    def values(self) -> List[Fraction]:
        return [Fraction(getattr(self, n)) for n in self.names()]

    def round_success(self) -> Fraction:
        """Closed form of the one-round delivery probability."""
        return self.pi1 * self.pi2 * self.pi3 * self.pi4


@dataclass(frozen=True)
class AbpParams:
    """pis[i] is the success probability pi(i+1); q weights corrupted transfers when scheduling."""
    pis: Tuple[Fraction, ...] = (Fraction(1),) * 12
    delta: Tuple[str, ...] = ("d1",)
    q: Fraction = Fraction(0)

    def __post_init__(self):
        if len(self.pis) != 12:
            raise SpecificationError(f"the alternating bit protocol takes 12 probabilities, got {len(self.pis)}")
        _check_probabilities(self.names(), self.pis)
        _check_delta(self.delta)
        if not Fraction(0) <= Fraction(self.q) <= Fraction(1):
            raise SpecificationError(f"q = {self.q} outside [0,1]")

    @staticmethod
    def names() -> List[str]:
        return [f"pi{i}" for i in range(1, 13)]

    def values(self) -> List[Fraction]:
        return [Fraction(p) for p in self.pis]

    def pi(self, i: int) -> Fraction:
        return Fraction(self.pis[i - 1])


def make_params(protocol: str, overrides: Optional[Mapping[str, Fraction]] = None, delta_size: int = 1, q=0):
    """
    Parameter object for a protocol from name=value overrides.

    Args:
        protocol: "ucp" or "abp"
        overrides: pi name to value; "all" sets every probability
        delta_size: Number of data values d1..dn
        q: Corruption weight (ABP only)
    """
    overrides = dict(overrides or {})
    if protocol == "ucp":
        names, values = UcpParams.names(), UcpParams().values()
    elif protocol == "abp":
        names, values = AbpParams.names(), AbpParams().values()
    else:
        raise SpecificationError(f"unknown protocol {protocol}")
    chosen = dict(zip(names, values))
    if "all" in overrides:
        chosen = {n: Fraction(overrides["all"]) for n in names}
    for name, value in overrides.items():
        if name == "all":
            continue
        if name not in chosen:
            raise SpecificationError(f"unknown parameter {name} for {protocol}")
        chosen[name] = Fraction(value)
    delta = data_domain(delta_size)
    if protocol == "ucp":
        return UcpParams(**chosen, delta=delta)
    return AbpParams(tuple(chosen[n] for n in names), delta, Fraction(q))


def _failable(prob: Fraction, label, rest: Term) -> Term:
    return pchoice(prob, Prefix(label, rest), DELTA)


def build_ucp(params: Optional[UcpParams] = None) -> ProcessSpec:
    p = params or UcpParams()
    d = DataVar("d")
    definitions = [
        Definition("A", (), Sum("d", DOMAIN, _failable(p.pi1, action("r_A", d), Var("A1", (d,))))),
        Definition("A1", ("d",), _failable(p.pi2, action("s_B", d), Var("A2", (d,)))),
        Definition("A2", ("d",), Shadow(action("s_C", d), Var("A"))),
        Definition("B", (), Sum("d", DOMAIN, Shadow(action("r_A", d), Var("B1")))),
        Definition("B1", (), Sum("d", DOMAIN, _failable(p.pi3, action("r_B", d), Var("B2", (d,))))),
        Definition("B2", ("d",), _failable(p.pi4, action("s_C", d), Var("B"))),
    ]
    comm = (CommRule(ActionPattern("r_B", (d,)), ActionPattern("s_B", (d,)), ActionPattern("c_B", (d,))),)
    init = Hide(UCP_HIDDEN, Encap(UCP_BLOCKED, Merge(Var("A"), Var("B"))))
    return ProcessSpec(
        {DOMAIN: tuple(p.delta)}, comm, {x.name: x for x in definitions}, init,
        dict(zip(UcpParams.names(), p.values())),
    )


def _abp_sender(b: int, p: AbpParams) -> List[Definition]:
    bit, other = str(b), str(1 - b)
    d = DataVar("d")
    T, U, V, W = (Var(f"{name}{b}", (d,)) for name in "TUVW")
    corrupt = action("s_B", BOT, BOT)
    return [
        Definition(f"S{b}", (), Sum("d", DOMAIN, _failable(p.pi(1), action("r_A", d), T))),
        Definition(f"T{b}", ("d",), alt(
            _failable(p.pi(2), action("s_B", d, bit), Shadow(action("s_C", d), U)),
            _failable(p.pi(3), corrupt, V),
        )),
        Definition(f"U{b}", ("d",), alt(
            _failable(p.pi(4), action("r_D", bit), Var(f"S{1 - b}")),
            _failable(p.pi(5), action("r_D", other), W),
            _failable(p.pi(6), action("r_D", BOT), W),
        )),
        Definition(f"V{b}", ("d",), alt(
            _failable(p.pi(5), action("r_D", other), T),
            _failable(p.pi(6), action("r_D", BOT), T),
        )),
        Definition(f"W{b}", ("d",), alt(
            _failable(p.pi(2), action("s_B", d, bit), U),
            _failable(p.pi(3), corrupt, U),
        )),
    ]


def _abp_receiver(b: int, p: AbpParams) -> List[Definition]:
    bit, other = str(b), str(1 - b)
    d, e = DataVar("d"), DataVar("e")
    R, Z, Rp, Q, Qp = (Var(f"{name}{b}") for name in ("R", "Z", "Rp", "Q", "Qp"))
    corrupt = action("r_B", BOT, BOT)

    def acknowledge(value: str, target: Term) -> Term:
        return alt(
            _failable(p.pi(11), action("s_D", value), target),
            _failable(p.pi(12), action("s_D", BOT), target),
        )

    return [
        Definition(f"R{b}", (), alt(
            Sum("d", DOMAIN, Shadow(action("r_A", d), Rp)),
            Sum("e", DOMAIN, _failable(p.pi(9), action("r_B", e, other), Z)),
            _failable(p.pi(10), corrupt, Z),
        )),
        Definition(f"Z{b}", (), acknowledge(other, R)),
        Definition(f"Rp{b}", (), alt(
            Sum("e", DOMAIN, alt(
                _failable(p.pi(7), action("r_B", e, bit), _failable(p.pi(8), action("s_C", e), Q)),
                _failable(p.pi(9), action("r_B", e, other), Qp),
            )),
            _failable(p.pi(10), corrupt, Qp),
        )),
        Definition(f"Q{b}", (), acknowledge(bit, Var(f"R{1 - b}"))),
        Definition(f"Qp{b}", (), acknowledge(other, Rp)),
    ]


def build_abp(params: Optional[AbpParams] = None) -> ProcessSpec:
    p = params or AbpParams()
    x, y = DataVar("x"), DataVar("y")
    comm = (
        CommRule(ActionPattern("s_B", (x, y)), ActionPattern("r_B", (x, y)), ActionPattern("c_B", (x, y))),
        CommRule(ActionPattern("s_B", (BOT, BOT)), ActionPattern("r_B", (BOT, BOT)), ActionPattern("c_B", (BOT, BOT))),
        CommRule(ActionPattern("s_D", (y,)), ActionPattern("r_D", (y,)), ActionPattern("c_D", (y,))),
        CommRule(ActionPattern("s_D", (BOT,)), ActionPattern("r_D", (BOT,)), ActionPattern("c_D", (BOT,))),
    )
    definitions = _abp_sender(0, p) + _abp_sender(1, p) + _abp_receiver(0, p) + _abp_receiver(1, p)
    init = Hide(ABP_HIDDEN, Encap(ABP_BLOCKED, Merge(Var("R0"), Var("S0"))))
    return ProcessSpec(
        {DOMAIN: tuple(p.delta)}, comm, {x.name: x for x in definitions}, init,
        dict(zip(AbpParams.names(), p.values())),
    )


def desired_behavior(protocol: str, delta: Tuple[str, ...] = ("d1",)) -> ProcessSpec:
    """Read a datum, deliver the same datum, repeat."""
    if protocol not in ("ucp", "abp"):
        raise SpecificationError(f"unknown protocol {protocol}")
    _check_delta(tuple(delta))
    body = alt(*(Prefix(action("r_A", c), Prefix(action("s_C", c), Var("Spec"))) for c in delta))
    return ProcessSpec({DOMAIN: tuple(delta)}, (), {"Spec": Definition("Spec", (), body)}, Var("Spec"))


def split_hiding(spec: ProcessSpec) -> Tuple[ProcessSpec, FrozenSet[ActionPattern]]:
    """Strip an outermost hide from init, returning the patterns it hid."""
    if isinstance(spec.init, Hide):
        return spec.with_init(spec.init.body), spec.init.hidden
    return spec, frozenset()


def bundled_path(name: str) -> Path:
    return BUNDLED_DIR / f"{name}.paver"


def load_bundled(name: str, params: Optional[Mapping[str, Fraction]] = None) -> ProcessSpec:
    """Parse one of the bundled specifications (ucp, abp, ucp-spec)."""
    path = bundled_path(name)
    logger.debug(f"Loading bundled specification {path}")
    return parse_spec(path.read_text(encoding="utf-8"), params)


def ucp_derivation_pairs() -> List[Tuple[str, str, str]]:
    """
    Equalities of the step-by-step UCP derivation as (name, left, right) term
    sources, to be parsed against the bundled UCP declarations.
    """
    return [
        ("merge", "par(A, B)", "sum d : D . (r_A(d) . par(A1(d), B1) +{pi1} delta)"),
        ("encapsulated merge",
         "encap({r_B, s_B}, par(A, B))",
         "sum d : D . (r_A(d) . encap({r_B, s_B}, par(A1(d), B1)) +{pi1} delta)"),
        ("unencapsulated handover",
         "par(A1(d1), B1)",
         "((s_B(d1) . par(A2(d1), r_B(d1) . B2(d1))"
         " + r_B(d1) . par(s_B(d1) . A2(d1), B2(d1))"
         " + c_B(d1) . par(A2(d1), B2(d1))) +{pi3} s_B(d1) . par(A2(d1), delta))"
         " +{pi2} (r_B(d1) . par(delta, B2(d1)) +{pi3} delta)"),
        ("handover",
         "encap({r_B, s_B}, par(A1(d1), B1))",
         "(c_B(d1) . encap({r_B, s_B}, par(A2(d1), B2(d1))) +{pi2} delta) +{pi3} delta"),
        ("delivery", "par(A2(d1), B2(d1))", "s_C(d1) . par(A, B) +{pi4} delta"),
        ("encapsulated delivery",
         "encap({r_B, s_B}, par(A2(d1), B2(d1)))",
         "s_C(d1) . encap({r_B, s_B}, par(A, B)) +{pi4} delta"),
    ]


def ucp_linear_form() -> str:
    """The encapsulated UCP as a linear recursive specification."""
    return "\n".join([
        "proc X1 = r_A(d1) . X2 +{pi1} delta",
        "proc X2 = (c_B(d1) . X3 +{pi2} delta) +{pi3} delta",
        "proc X3 = s_C(d1) . X1 +{pi4} delta",
    ])
