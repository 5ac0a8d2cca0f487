import random
from fractions import Fraction
from itertools import combinations

import pytest

from equivalence import (
    BRANCHING, EVENTUAL, ROOTED_BRANCHING, ROUND, STRONG, Partition, ProbQuery, ScriptedPolicy, UniformPolicy,
    WeightedPolicy, branching_bisim, check_equivalence, coarsest_partition, lift, minimize, schedule, strong_bisim,
    success_probability,
)
from paver_errors import AnalysisError
from process_term import DELTA, ActionPattern, Alt, PChoice, TAU, action, pchoice
from semantics import N_STATE, P_STATE, PTS, Distribution, Expander, expand
from spec_parser import pretty_print
from tests.generators import PROBABILITIES, random_pts, random_term, set_partitions

SUCCESS = frozenset({ActionPattern("s")})


def _observations(pts, s, block_of):
    return {(label, block_of[t]) for label, t in pts.edges[s]}


def _is_strong_bisimulation(pts, block_of):
    for s, t in combinations(range(pts.num_states), 2):
        if block_of[s] != block_of[t]:
            continue
        if pts.kinds[s] != pts.kinds[t] or pts.terminating[s] != pts.terminating[t]:
            return False
        if pts.kinds[s] == P_STATE:
            if pts.dists[s].mass_by(block_of) != pts.dists[t].mass_by(block_of):
                return False
        elif _observations(pts, s, block_of) != _observations(pts, t, block_of):
            return False
    return True


def _inert_reach(pts, s, block_of):
    seen, stack = {s}, [s]
    while stack:
        u = stack.pop()
        for label, v in pts.edges[u]:
            if label == TAU and block_of[v] == block_of[s] and v not in seen:
                seen.add(v)
                stack.append(v)
    return seen


def _matches(pts, s, t, block_of):
    """Every non-inert step of s is answered from t after inert tau-steps."""
    answers = set()
    for u in _inert_reach(pts, t, block_of):
        answers |= {(label, block_of[v]) for label, v in pts.edges[u]}
    for label, v in pts.edges[s]:
        if label == TAU and block_of[v] == block_of[s]:
            continue
        if (label, block_of[v]) not in answers:
            return False
    return True


def _is_branching_bisimulation(pts, block_of):
    for s, t in combinations(range(pts.num_states), 2):
        if block_of[s] != block_of[t]:
            continue
        if pts.kinds[s] != pts.kinds[t] or pts.terminating[s] != pts.terminating[t]:
            return False
        if pts.kinds[s] == P_STATE:
            if pts.dists[s].mass_by(block_of) != pts.dists[t].mass_by(block_of):
                return False
        elif not (_matches(pts, s, t, block_of) and _matches(pts, t, s, block_of)):
            return False
    return True


def _coarsest_by_enumeration(pts, is_bisimulation):
    candidates = [p for p in set_partitions(pts.num_states) if is_bisimulation(pts, p)]
    return min(candidates, key=lambda p: len(set(p)))


def _same_relation(block_of, other):
    n = len(block_of)
    return all((block_of[s] == block_of[t]) == (other[s] == other[t]) for s in range(n) for t in range(n))


class TestPartitionRefinementOracle:
    @pytest.mark.parametrize("seed", range(40))
    def test_strong_matches_enumeration(self, seed):
        rng = random.Random(seed)
        pts = random_pts(rng, rng.randint(1, 6))
        expected = _coarsest_by_enumeration(pts, _is_strong_bisimulation)
        assert _same_relation(coarsest_partition(pts, STRONG).block_of, expected)

    @pytest.mark.parametrize("seed", range(40))
    def test_branching_matches_enumeration(self, seed):
        rng = random.Random(1000 + seed)
        pts = random_pts(rng, rng.randint(1, 6), labels=("a", "tau", "tau"))
        expected = _coarsest_by_enumeration(pts, _is_branching_bisimulation)
        assert _same_relation(coarsest_partition(pts, BRANCHING).block_of, expected)

    @pytest.mark.slow
    @pytest.mark.parametrize("seed", range(40, 500))
    def test_strong_matches_enumeration_at_scale(self, seed):
        rng = random.Random(seed)
        pts = random_pts(rng, rng.randint(1, 6))
        expected = _coarsest_by_enumeration(pts, _is_strong_bisimulation)
        assert _same_relation(coarsest_partition(pts, STRONG).block_of, expected)

    @pytest.mark.slow
    @pytest.mark.parametrize("seed", range(40, 500))
    def test_branching_matches_enumeration_up_to_eight_states(self, seed):
        rng = random.Random(1000 + seed)
        pts = random_pts(rng, rng.randint(1, 8), labels=("a", "tau", "tau"))
        expected = _coarsest_by_enumeration(pts, _is_branching_bisimulation)
        assert _same_relation(coarsest_partition(pts, BRANCHING).block_of, expected)

    @pytest.mark.parametrize("seed", range(20))
    def test_strong_refines_branching(self, seed):
        rng = random.Random(2000 + seed)
        pts = random_pts(rng, 7)
        strong = coarsest_partition(pts, STRONG)
        branching = coarsest_partition(pts, BRANCHING)
        for s in range(pts.num_states):
            for t in range(pts.num_states):
                if strong.same_block(s, t):
                    assert branching.same_block(s, t)


class TestMinimisationOnRandomSystems:
    @pytest.mark.parametrize("seed", range(30))
    def test_quotient_is_strongly_equivalent(self, seed):
        rng = random.Random(3000 + seed)
        pts = random_pts(rng, rng.randint(1, 9))
        reduced = minimize(pts, STRONG)
        assert reduced.num_states <= pts.num_states
        assert strong_bisim(pts, reduced).equivalent

    @pytest.mark.parametrize("seed", range(30))
    def test_quotient_keeps_the_success_probability(self, seed):
        rng = random.Random(4000 + seed)
        pts = schedule(random_pts(rng, rng.randint(1, 9)), UniformPolicy())
        query = ProbQuery(frozenset({ActionPattern("a")}), EVENTUAL)
        assert success_probability(minimize(pts, STRONG), query) == success_probability(pts, query)


class TestAxiomsOnRandomTerms:
    COUNT = 200

    @pytest.fixture
    def bisimilar(self, spec_of):
        expander_spec = spec_of("delta")

        def check(left, right):
            return strong_bisim(Expander(expander_spec).expand(left), Expander(expander_spec).expand(right)).equivalent
        return check

    @pytest.fixture
    def terms(self):
        rng = random.Random(77)
        return rng, [random_term(rng, rng.randint(0, 3)) for _ in range(self.COUNT)]

    def test_deadlock_is_neutral_for_alternative(self, bisimilar, terms):
        _, xs = terms
        for x in xs:
            assert bisimilar(Alt(x, DELTA), x), pretty_print(x)

    def test_probabilistic_choice_is_symmetric(self, bisimilar, terms):
        rng, xs = terms
        for x in xs:
            y = random_term(rng, 2)
            p = rng.choice(PROBABILITIES)
            assert bisimilar(PChoice(p, x, y), PChoice(1 - p, y, x)), pretty_print(x)

    def test_alternative_commutes_and_associates(self, bisimilar, terms):
        rng, xs = terms
        for x in xs:
            y, z = random_term(rng, 2), random_term(rng, 2)
            assert bisimilar(Alt(x, y), Alt(y, x)), pretty_print(x)
            assert bisimilar(Alt(Alt(x, y), z), Alt(x, Alt(y, z))), pretty_print(x)

    def test_certain_action_never_fails(self, bisimilar, terms):
        _, xs = terms
        for x in xs:
            assert bisimilar(pchoice(1, x, DELTA), x)


class TestAxioms:
    @pytest.mark.parametrize("left,right", [
        ("proc X = a . X\ninit X", "proc Y = a . a . Y\ninit Y"),
        ("a . b + a . b", "a . b"),
        ("a + delta", "a"),
        ("a + b", "b + a"),
        ("a +{1/3} b", "b +{2/3} a"),
        ("par(a, b)", "a . b + b . a"),
    ])
    def test_strong_laws(self, pts_of, left, right):
        assert strong_bisim(pts_of(left), pts_of(right)).equivalent

    def test_different_alphabets(self, pts_of):
        result = strong_bisim(pts_of("a"), pts_of("b"))
        assert not result.equivalent
        assert "a" in result.reason

    def test_probabilities_distinguish(self, pts_of):
        result = strong_bisim(pts_of("a +{1/3} b"), pts_of("a +{1/2} b"))
        assert not result.equivalent
        assert "probability" in result.reason

    def test_tau_absorbed_after_an_action(self, pts_of):
        left, right = pts_of("a . tau . b"), pts_of("a . b")
        assert check_equivalence(left, right, ROOTED_BRANCHING).equivalent
        assert not check_equivalence(left, right, STRONG).equivalent

    def test_initial_tau_needs_the_root_condition(self, pts_of):
        left, right = pts_of("tau . a"), pts_of("a")
        assert check_equivalence(left, right, BRANCHING).equivalent
        result = check_equivalence(left, right, ROOTED_BRANCHING)
        assert not result.equivalent
        assert "not matched by a single step" in result.reason

    def test_branching_keeps_choices_apart(self, pts_of):
        assert not branching_bisim(pts_of("a . (tau . b + c)"), pts_of("a . (b + c)")).equivalent

    def test_tau_into_a_probabilistic_state_is_observable(self, pts_of):
        left, right = pts_of("a . tau . (b +{1/2} c)"), pts_of("a . (b +{1/2} c)")
        assert not check_equivalence(left, right, ROOTED_BRANCHING).equivalent
        assert not branching_bisim(left, right).equivalent

    def test_inert_tau_loop_is_divergent(self, pts_of):
        result = branching_bisim(pts_of("proc X = tau . X + b\ninit a . X"), pts_of("a . b"))
        assert result.equivalent
        assert result.divergent

    def test_termination_is_observed(self, pts_of):
        assert not strong_bisim(pts_of("a . skip"), pts_of("a . delta")).equivalent

    def test_kinds_are_observed(self, pts_of):
        result = strong_bisim(pts_of("a +{1/2} a"), pts_of("a"))
        assert not result.equivalent
        assert "kind" in result.reason

    def test_unknown_mode(self, pts_of):
        with pytest.raises(ValueError):
            check_equivalence(pts_of("a"), pts_of("a"), "weak")


class TestUtopianProtocol:
    def test_perfect_protocol_meets_its_specification(self, ucp_perfect, desired_pts):
        result = check_equivalence(expand(ucp_perfect), desired_pts, ROOTED_BRANCHING)
        assert result.equivalent
        assert not result.divergent

    def test_perfect_protocol_is_not_strongly_equivalent(self, ucp_perfect, desired_pts):
        assert not check_equivalence(expand(ucp_perfect), desired_pts, STRONG).equivalent

    def test_imperfect_protocol_differs(self, ucp_spec, desired_pts):
        assert not check_equivalence(expand(ucp_spec), desired_pts, ROOTED_BRANCHING).equivalent

    @pytest.mark.parametrize("mode", [STRONG, BRANCHING])
    def test_minimisation(self, ucp_spec, mode):
        reduced = minimize(expand(ucp_spec), mode)
        assert reduced.num_states == 7
        assert reduced.kinds.count(P_STATE) == 3
        assert reduced.kinds.count(N_STATE) == 4

    def test_minimisation_preserves_behaviour(self, ucp_spec):
        pts = expand(ucp_spec)
        assert strong_bisim(pts, minimize(pts)).equivalent
        assert minimize(minimize(pts)).num_states == minimize(pts).num_states

    @pytest.mark.parametrize("mode", [STRONG, BRANCHING])
    @pytest.mark.parametrize("horizon", [ROUND, EVENTUAL])
    def test_minimisation_preserves_success_probability(self, ucp_spec, mode, horizon):
        pts = expand(ucp_spec)
        query = ProbQuery(frozenset({ActionPattern("s_C")}), horizon)
        assert success_probability(minimize(pts, mode), query) == success_probability(pts, query) == Fraction(1, 16)

    def test_one_round_success(self, ucp_spec):
        assert success_probability(expand(ucp_spec), ProbQuery(frozenset({ActionPattern("s_C")}))) == Fraction(1, 16)

    def test_generic_probabilities(self):
        from protocols import load_bundled
        values = {"pi1": Fraction(1, 3), "pi2": Fraction(2, 5), "pi3": Fraction(3, 7), "pi4": Fraction(4, 9)}
        pts = expand(load_bundled("ucp", values))
        expected = values["pi1"] * values["pi2"] * values["pi3"] * values["pi4"]
        assert success_probability(pts, ProbQuery(frozenset({ActionPattern("s_C")}))) == expected


def _chain():
    """0 -a-> 1 {2: 1/3, 3: 2/3}; 2 -s-> 4; 3 deadlocks."""
    return PTS(
        (N_STATE, P_STATE, N_STATE, N_STATE, N_STATE), 0,
        (((action("a"), 1),), (), ((action("s"), 4),), (), ()),
        (None, Distribution.of({2: Fraction(1, 3), 3: Fraction(2, 3)}), None, None, None),
        (False, False, False, False, True),
    )


def _retry_loop():
    """0 {1: 1/2, 2: 1/2}; 1 -s-> 3; 2 -tau-> 0."""
    return PTS(
        (P_STATE, N_STATE, N_STATE, N_STATE), 0,
        ((), ((action("s"), 3),), ((TAU, 0),), ()),
        (Distribution.of({1: Fraction(1, 2), 2: Fraction(1, 2)}), None, None, None),
        (False, False, False, True),
    )


def _choice():
    """0 -a-> 1, 0 -b-> 2."""
    return PTS(
        (N_STATE, N_STATE, N_STATE), 0,
        (((action("a"), 1), (action("b"), 2)), (), ()),
        (None, None, None), (False, True, True),
    )


class TestSuccessProbability:
    def test_acyclic(self):
        assert success_probability(_chain(), ProbQuery(SUCCESS)) == Fraction(1, 3)

    def test_round_stops_at_the_source(self):
        assert success_probability(_retry_loop(), ProbQuery(SUCCESS, ROUND)) == Fraction(1, 2)

    def test_eventual_solves_the_cycle(self):
        assert success_probability(_retry_loop(), ProbQuery(SUCCESS, EVENTUAL)) == 1

    def test_other_source(self):
        assert success_probability(_chain(), ProbQuery(SUCCESS, source=3)) == 0

    def test_unreachable_success(self):
        assert success_probability(_chain(), ProbQuery(frozenset({ActionPattern("zzz")}))) == 0

    def test_nondeterminism_must_be_resolved(self):
        with pytest.raises(AnalysisError) as info:
            success_probability(_choice(), ProbQuery(frozenset({ActionPattern("a")})))
        assert "state 0" in str(info.value)

    def test_geometric_retries(self):
        # 0 {1: 1/3, 2: 2/3}; 1 -s->; 2 -tau-> 3 {1: 1/2, 4: 1/2}; 4 -tau-> 0
        pts = PTS(
            (P_STATE, N_STATE, N_STATE, P_STATE, N_STATE, N_STATE), 0,
            ((), ((action("s"), 5),), ((TAU, 3),), (), ((TAU, 0),), ()),
            (Distribution.of({1: Fraction(1, 3), 2: Fraction(2, 3)}), None, None,
             Distribution.of({1: Fraction(1, 2), 4: Fraction(1, 2)}), None, None),
            (False,) * 6,
        )
        assert success_probability(pts, ProbQuery(SUCCESS, EVENTUAL)) == 1
        assert success_probability(pts, ProbQuery(SUCCESS, ROUND)) == Fraction(1, 3) + Fraction(2, 3) * Fraction(1, 2)


class TestScheduling:
    def test_uniform(self):
        pts = schedule(_choice(), UniformPolicy())
        assert pts.kinds[0] == P_STATE
        assert [p for _, p in pts.dists[0]] == [Fraction(1, 2), Fraction(1, 2)]
        assert pts.num_states == 5
        assert success_probability(pts, ProbQuery(frozenset({ActionPattern("a")}))) == Fraction(1, 2)

    def test_scripted(self):
        pts = schedule(_choice(), ScriptedPolicy([1]))
        assert pts.num_states == 2
        assert pts.edges[0] == ((action("b"), 1),)

    def test_script_out_of_range(self):
        with pytest.raises(AnalysisError):
            schedule(_choice(), ScriptedPolicy([2]))

    def test_short_script_leaves_choices(self):
        pts = _choice()
        assert schedule(pts, ScriptedPolicy([])) is pts

    def test_weight_zero_prunes(self):
        pts = schedule(_choice(), WeightedPolicy([ActionPattern("a")], 0))
        assert pts.edges[0] == ((action("b"), 1),)

    def test_weighted(self):
        pts = schedule(_choice(), WeightedPolicy([ActionPattern("a")], Fraction(1, 4)))
        assert sorted(p for _, p in pts.dists[0]) == [Fraction(1, 4), Fraction(3, 4)]
        assert success_probability(pts, ProbQuery(frozenset({ActionPattern("a")}))) == Fraction(1, 4)

    def test_weight_range(self):
        with pytest.raises(AnalysisError):
            WeightedPolicy([], Fraction(3, 2))

    def test_deterministic_systems_are_unchanged(self, ucp_spec):
        pts = expand(ucp_spec)
        assert schedule(pts, UniformPolicy()) is pts


def test_lift_compares_mass_per_block():
    partition = Partition((0, 1, 1, 2))
    d1 = Distribution.of({0: Fraction(1, 2), 1: Fraction(1, 2)})
    d2 = Distribution.of({0: Fraction(1, 2), 2: Fraction(1, 4), 1: Fraction(1, 4)})
    d3 = Distribution.of({0: Fraction(1, 2), 3: Fraction(1, 2)})
    assert lift(d1, d2, partition)
    assert not lift(d1, d3, partition)
