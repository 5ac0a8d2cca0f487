from fractions import Fraction

import pandas as pd
import pytest

from equivalence import ScriptedPolicy, WeightedPolicy
from paver_errors import AnalysisError
from process_term import ActionPattern
from protocols import load_bundled
from semantics import expand
from simulate import CAPPED, DEADLOCK, SUCCESS, TERMINATED, run, within_tolerance

S_C = [ActionPattern("s_C")]


def only(name):
    return [ActionPattern(name)]


class TestOutcomes:
    def test_immediate_success(self, pts_of):
        stats = run(pts_of("a"), success=only("a"), runs=50)
        assert stats.successes == 50
        assert stats.estimate == 1
        assert stats.stderr == 0

    def test_deadlock(self, pts_of):
        stats = run(pts_of("a . delta"), success=only("b"), runs=20)
        assert stats.deadlocks == 20
        assert stats.estimate == 0

    def test_termination(self, pts_of):
        stats = run(pts_of("a . skip"), runs=20)
        assert stats.terminations == 20
        assert stats.mean_visible_steps == 1

    def test_step_cap(self, pts_of):
        stats = run(pts_of("proc X = tau . X\ninit X"), runs=5, step_cap=10)
        assert stats.capped == 5
        assert stats.mean_visible_steps == 0

    def test_visible_steps_skip_tau(self, pts_of):
        stats = run(pts_of("a . tau . b"), success=only("b"), runs=10)
        assert stats.mean_visible_steps == 2

    def test_probabilistic_choice_is_sampled(self, pts_of):
        stats = run(pts_of("a +{1/4} b"), success=only("a"), runs=20000, seed=3)
        assert stats.successes + stats.terminations == 20000
        assert within_tolerance(stats, Fraction(1, 4))

    def test_invalid_run_count(self, pts_of):
        with pytest.raises(AnalysisError):
            run(pts_of("a"), runs=0)


class TestDeterminism:
    def test_same_seed_same_statistics(self, ucp_spec):
        pts = expand(ucp_spec)
        assert run(pts, success=S_C, runs=2000, seed=11) == run(pts, success=S_C, runs=2000, seed=11)

    def test_prefix_of_runs_is_stable(self, ucp_spec, tmp_path):
        pts = expand(ucp_spec)
        short, long = tmp_path / "short.csv", tmp_path / "long.csv"
        run(pts, success=S_C, runs=100, seed=5, trace_path=str(short))
        run(pts, success=S_C, runs=300, seed=5, trace_path=str(long))
        assert pd.read_csv(short).equals(pd.read_csv(long).head(100))


class TestPolicies:
    def test_script_picks_the_option(self, pts_of):
        pts = pts_of("a + b")
        second = pts.edges[0][1][0]
        stats = run(pts, policy=ScriptedPolicy([1]), success=only(second.name), runs=10)
        assert stats.successes == 10

    def test_script_other_option_terminates(self, pts_of):
        pts = pts_of("a + b")
        second = pts.edges[0][1][0]
        stats = run(pts, policy=ScriptedPolicy([0]), success=only(second.name), runs=10)
        assert stats.terminations == 10

    def test_exhausted_script_caps(self, pts_of):
        stats = run(pts_of("a + b"), policy=ScriptedPolicy([]), runs=10)
        assert stats.capped == 10

    def test_script_is_consumed_per_encounter(self, pts_of):
        pts = pts_of("proc X = a . X + b\ninit X")
        options = [label.name for label, _ in pts.edges[0]]
        again, leave = options.index("a"), options.index("b")
        stats = run(pts, policy=ScriptedPolicy([again, again, leave]), success=only("b"), runs=3)
        assert stats.successes == 3
        assert stats.mean_visible_steps == 3

    def test_script_out_of_range(self, pts_of):
        with pytest.raises(AnalysisError):
            run(pts_of("a + b"), policy=ScriptedPolicy([5]), runs=1)

    def test_weight_zero_is_never_taken(self, pts_of):
        stats = run(pts_of("a + b"), policy=WeightedPolicy(only("a"), 0), success=only("a"), runs=500)
        assert stats.successes == 0


class TestTrace:
    def test_csv_rows(self, pts_of, tmp_path):
        path = tmp_path / "out" / "trace.csv"
        run(pts_of("a . delta"), runs=4, trace_path=str(path))
        df = pd.read_csv(path)
        assert list(df.columns) == ["run", "outcome", "steps"]
        assert df["run"].tolist() == [0, 1, 2, 3]
        assert set(df["outcome"]) == {DEADLOCK}
        assert set(df["steps"]) == {1}


def test_outcome_names():
    assert {SUCCESS, DEADLOCK, TERMINATED, CAPPED} == {"success", "deadlock", "terminated", "capped"}


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(10))
def test_utopian_protocol_estimate(seed):
    pts = expand(load_bundled("ucp"))
    stats = run(pts, success=S_C, runs=100000, seed=seed)
    assert within_tolerance(stats, Fraction(1, 16))
