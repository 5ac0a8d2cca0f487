import random
from fractions import Fraction

import pytest

from equivalence import (
    BRANCHING, EVENTUAL, ROOTED_BRANCHING, STRONG, ProbQuery, UniformPolicy, WeightedPolicy, check_equivalence,
    schedule, strong_bisim, success_probability,
)
from paver_errors import SpecificationError
from process_term import BOT, ActionPattern, action, matches_any
from protocols import (
    CORRUPTION_PATTERNS, AbpParams, UcpParams, build_abp, build_ucp, bundled_path, data_domain, desired_behavior,
    load_bundled, make_params, split_hiding, ucp_derivation_pairs, ucp_linear_form,
)
from semantics import P_STATE, abstract, expand, reachable_actions
from spec_parser import parse_spec

SUCCESS = frozenset({ActionPattern("s_C")})
GENERIC = {"pi1": Fraction(1, 3), "pi2": Fraction(2, 5), "pi3": Fraction(3, 7), "pi4": Fraction(4, 9)}


def _round_by_enumeration(pts, state=None, seen=()):
    """Sum of path probabilities up to the first s_C, cut at a revisit."""
    state = pts.init if state is None else state
    if state in seen:
        return Fraction(0)
    seen = seen + (state,)
    if pts.kinds[state] == P_STATE:
        return sum((p * _round_by_enumeration(pts, t, seen) for t, p in pts.dists[state]), Fraction(0))
    out = pts.edges[state]
    if not out:
        return Fraction(0)
    label, target = out[0]
    if matches_any(SUCCESS, label):
        return Fraction(1)
    return _round_by_enumeration(pts, target, seen)


class TestBuilders:
    def test_ucp_matches_the_bundled_file(self):
        assert build_ucp() == load_bundled("ucp")

    def test_abp_matches_the_bundled_file(self):
        assert build_abp() == load_bundled("abp")

    def test_ucp_overrides(self):
        params = make_params("ucp", GENERIC)
        assert build_ucp(params) == load_bundled("ucp", GENERIC)
        assert build_ucp(params).params == GENERIC

    def test_abp_overrides(self):
        overrides = {"all": Fraction(1, 2), "pi7": Fraction(1, 3)}
        assert build_abp(make_params("abp", overrides)) == load_bundled("abp", overrides)

    def test_larger_data_domain(self):
        text = bundled_path("ucp").read_text().replace("domain D = {d1}", "domain D = {d1, d2}")
        assert build_ucp(make_params("ucp", delta_size=2)) == parse_spec(text)

    def test_data_domain(self):
        assert data_domain(3) == ("d1", "d2", "d3")
        with pytest.raises(SpecificationError):
            data_domain(0)

    def test_unknown_protocol(self):
        with pytest.raises(SpecificationError):
            make_params("tcp")

    def test_unknown_parameter(self):
        with pytest.raises(SpecificationError):
            make_params("ucp", {"pi5": Fraction(1, 2)})

    @pytest.mark.parametrize("value", [Fraction(0), Fraction(3, 2)])
    def test_probability_range(self, value):
        with pytest.raises(SpecificationError):
            UcpParams(pi1=value)

    def test_abp_takes_twelve_probabilities(self):
        with pytest.raises(SpecificationError):
            AbpParams(pis=(Fraction(1),) * 11)

    def test_reserved_data_names(self):
        with pytest.raises(SpecificationError):
            UcpParams(delta=("bot",))

    def test_desired_behaviour_matches_the_bundled_file(self):
        assert desired_behavior("ucp") == load_bundled("ucp-spec")

    def test_desired_behaviour_needs_a_known_protocol(self):
        with pytest.raises(SpecificationError):
            desired_behavior("tcp")

    def test_split_hiding(self):
        encapsulated, hidden = split_hiding(build_abp())
        assert hidden == frozenset({ActionPattern("c_B"), ActionPattern("c_D")})
        assert split_hiding(encapsulated) == (encapsulated, frozenset())


class TestCorruptionPatterns:
    @pytest.mark.parametrize("label,corrupted", [
        (action("c_B", BOT, BOT), True),
        (action("c_D", BOT), True),
        (action("c_B", "d1", "0"), False),
        (action("c_D", "1"), False),
        (action("s_C", "d1"), False),
    ])
    def test_matching(self, label, corrupted):
        assert matches_any(CORRUPTION_PATTERNS, label) == corrupted


class TestUtopianDerivation:
    @pytest.fixture
    def generic_ucp(self):
        return load_bundled("ucp", GENERIC)

    @pytest.mark.parametrize("name,left,right", ucp_derivation_pairs(), ids=[p[0] for p in ucp_derivation_pairs()])
    def test_step_holds_for_generic_probabilities(self, term_pts, generic_ucp, name, left, right):
        result = strong_bisim(term_pts(left, generic_ucp), term_pts(right, generic_ucp))
        assert result.equivalent, f"{name}: {result.reason}"

    def test_merge_keeps_interleavings_until_encapsulation(self, term_pts, ucp_perfect):
        merged = term_pts("par(A1(d1), B1)", ucp_perfect)
        assert sorted(str(label) for label, _ in merged.edges[merged.init]) == ["c_B(d1)", "r_B(d1)", "s_B(d1)"]
        blocked = term_pts("encap({r_B, s_B}, par(A1(d1), B1))", ucp_perfect)
        assert [str(label) for label, _ in blocked.edges[blocked.init]] == ["c_B(d1)"]

    def test_linear_form(self):
        header = "domain D = {d1}\n" + "".join(f"param {n} = {v}\n" for n, v in GENERIC.items())
        linear = parse_spec(header + ucp_linear_form() + "\ninit X1")
        encapsulated, _ = split_hiding(load_bundled("ucp", GENERIC))
        assert strong_bisim(expand(linear), expand(encapsulated)).equivalent

    @pytest.mark.parametrize("overrides", [{}, GENERIC, {"all": Fraction(9, 10)}])
    def test_round_success_closed_form(self, overrides):
        params = make_params("ucp", overrides)
        pts = expand(build_ucp(params))
        assert success_probability(pts, ProbQuery(SUCCESS)) == params.round_success()

    def test_round_success_for_random_parameters(self):
        rng = random.Random(16)
        for _ in range(20):
            overrides = {n: Fraction(rng.randint(1, 9), 10) for n in UcpParams.names()}
            params = make_params("ucp", overrides)
            pts = expand(build_ucp(params))
            exact = success_probability(pts, ProbQuery(SUCCESS))
            assert exact == params.round_success() == _round_by_enumeration(pts)

    def test_hidden_linear_form(self):
        header = "domain D = {d1}\n" + "".join(f"param {n} = {v}\n" for n, v in GENERIC.items())
        linear = parse_spec(header + ucp_linear_form() + "\ninit hide({c_B}, X1)")
        assert strong_bisim(expand(linear), expand(load_bundled("ucp", GENERIC))).equivalent

    def test_failures_are_permanent(self):
        # a failed action deadlocks the protocol for good
        pts = expand(build_ucp())
        assert success_probability(pts, ProbQuery(SUCCESS, EVENTUAL)) == Fraction(1, 16)


class TestAlternatingBit:
    @pytest.fixture(scope="class")
    def desired(self):
        return expand(desired_behavior("abp"))

    @pytest.fixture(scope="class")
    def perfect(self):
        return expand(build_abp())

    def test_meets_the_desired_behaviour_with_divergence(self, perfect, desired):
        result = check_equivalence(perfect, desired, ROOTED_BRANCHING)
        assert result.equivalent
        assert result.divergent

    def test_not_strongly_equivalent(self, perfect, desired):
        assert not check_equivalence(perfect, desired, STRONG).equivalent

    def test_excluding_corruption_removes_divergence(self, desired):
        encapsulated, hidden = split_hiding(build_abp())
        clean = abstract(schedule(expand(encapsulated), WeightedPolicy(CORRUPTION_PATTERNS, 0)), hidden)
        result = check_equivalence(clean, desired, ROOTED_BRANCHING)
        assert result.equivalent
        assert not result.divergent

    def test_blocked_and_hidden_actions_do_not_survive(self, perfect):
        encapsulated, _ = split_hiding(build_abp())
        handovers = {str(label) for label in reachable_actions(expand(encapsulated))}
        assert not any(label.startswith(("s_B", "r_B", "s_D", "r_D")) for label in handovers)
        assert "c_B(bot,bot)" in handovers and "c_D(bot)" in handovers
        visible = {str(label) for label in reachable_actions(perfect)}
        assert visible == {"r_A(d1)", "s_C(d1)", "tau"}

    def test_uniform_scheduling_delivers_eventually(self, perfect):
        fair = schedule(perfect, UniformPolicy())
        assert success_probability(fair, ProbQuery(SUCCESS, EVENTUAL)) == 1

    def test_weighted_scheduling_delivers_eventually(self):
        encapsulated, _ = split_hiding(build_abp())
        pts = schedule(expand(encapsulated), WeightedPolicy(CORRUPTION_PATTERNS, Fraction(1, 2)))
        assert success_probability(pts, ProbQuery(SUCCESS, EVENTUAL)) == 1

    def test_imperfect_actions_break_the_equivalence(self, desired):
        lossy = expand(build_abp(make_params("abp", {"pi2": Fraction(1, 2)})))
        assert not check_equivalence(lossy, desired, BRANCHING).equivalent
