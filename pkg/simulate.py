"""
Monte-Carlo execution of probabilistic transition systems.

Each run i draws from numpy's PCG64 generator seeded with `seed` and jumped i
times, so the aggregate statistics do not depend on the order runs execute in.
A draw is a 64-bit integer k read as the rational k / 2**64 and compared
against the cumulative distribution in stored support order.
"""
import logging
import math
import os
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from equivalence import ScriptedPolicy, SchedulingPolicy, UniformPolicy
from paver_errors import AnalysisError
from process_term import ActionPattern, matches_any
from semantics import PTS, P_STATE

logger = logging.getLogger(__name__)

SUCCESS = "success"
DEADLOCK = "deadlock"
TERMINATED = "terminated"
CAPPED = "capped"

_SCALE = 1 << 64


@dataclass(frozen=True)
class RunStats:
    runs: int
    successes: int
    deadlocks: int
    terminations: int
    capped: int
    mean_visible_steps: Fraction
    estimate: Fraction
    stderr: float

    def summary(self) -> str:
        return (
            f"runs={self.runs} successes={self.successes} deadlocks={self.deadlocks} "
            f"terminated={self.terminations} capped={self.capped} "
            f"estimate={float(self.estimate):.6f} stderr={self.stderr:.6f} "
            f"mean_visible_steps={float(self.mean_visible_steps):.3f}"
        )


def _thresholds(weights: Sequence[Fraction]) -> List[int]:
    """Integer ceilings of the cumulative weights scaled by 2**64."""
    result = []
    cumulative = Fraction(0)
    for w in weights:
        cumulative += w
        result.append(-((-cumulative.numerator * _SCALE) // cumulative.denominator))
    return result


def _pick(thresholds: List[int], draw: int) -> int:
    for i, bound in enumerate(thresholds):
        if draw < bound:
            return i
    return len(thresholds) - 1


class _Walker:
    """Executes runs over one PTS, caching the sampling tables per state."""

    def __init__(self, pts: PTS, policy: SchedulingPolicy, success: FrozenSet[ActionPattern], step_cap: int):
        self.pts = pts
        self.policy = policy
        self.success = success
        self.step_cap = step_cap
        self.scripted = isinstance(policy, ScriptedPolicy)
        self._dist_tables: Dict[int, Tuple[List[int], List[int]]] = {}
        self._choice_tables: Dict[int, List[int]] = {}
        self._position = {
            s: i for i, s in enumerate(
                s for s in range(pts.num_states) if pts.kinds[s] != P_STATE and len(pts.edges[s]) > 1
            )
        }

    def _distribution(self, state: int) -> Tuple[List[int], List[int]]:
        if state not in self._dist_tables:
            support = list(self.pts.dists[state])
            self._dist_tables[state] = ([t for t, _ in support], _thresholds([p for _, p in support]))
        return self._dist_tables[state]

    def _choice(self, state: int) -> List[int]:
        if state not in self._choice_tables:
            options = self.pts.edges[state]
            weights = self.policy.weights(self._position[state], state, options)
            if weights is None:
                raise AnalysisError(f"{type(self.policy).__name__} leaves state {state} unresolved")
            self._choice_tables[state] = _thresholds(weights)
        return self._choice_tables[state]

    def run(self, rng: np.random.PCG64) -> Tuple[str, int]:
        """One run from the initial state: (outcome, visible steps)."""
        draw = lambda: int(rng.random_raw())
        script = iter(self.policy.choices) if self.scripted else None
        state = self.pts.init
        visible = 0
        for _ in range(self.step_cap):
            if self.pts.kinds[state] == P_STATE:
                targets, bounds = self._distribution(state)
                state = targets[_pick(bounds, draw())]
                continue
            options = self.pts.edges[state]
            if not options:
                return (TERMINATED if self.pts.terminating[state] else DEADLOCK), visible
            index = 0
            if len(options) > 1:
                if script is not None:
                    index = next(script, None)
                    if index is None:
                        return CAPPED, visible
                    if not 0 <= index < len(options):
                        raise AnalysisError(
                            f"script picks option {index} at state {state}, which has {len(options)} options"
                        )
                else:
                    index = _pick(self._choice(state), draw())
            label, state = options[index]
            if not label.is_silent:
                visible += 1
            if matches_any(self.success, label):
                return SUCCESS, visible
        return CAPPED, visible


def run(pts: PTS, policy: Optional[SchedulingPolicy] = None, success: Iterable[ActionPattern] = (),
        runs: int = 100000, step_cap: int = 1000, seed: int = 0,
        trace_path: Optional[str] = None) -> RunStats:
    """
    Sample `runs` executions of `pts` from its initial state.

    A run ends when a success-labelled transition fires, at a state without
    transitions (terminated when it can terminate, deadlock otherwise), or after
    `step_cap` moves. A scripted policy supplies one choice per nondeterministic
    state met during a run; running out caps the run.

    Args:
        pts: System to execute
        policy: UniformPolicy (default), ScriptedPolicy or WeightedPolicy
        success: Patterns of the success actions
        runs: Number of runs
        step_cap: Maximum number of moves per run
        seed: 64-bit seed
        trace_path: Optional CSV file receiving one "run,outcome,steps" row per run

    Returns:
        RunStats
    """
    if runs < 1 or step_cap < 1:
        raise AnalysisError("runs and step cap must both be at least 1")
    walker = _Walker(pts, policy or UniformPolicy(), frozenset(success), step_cap)
    base = np.random.PCG64(seed & (_SCALE - 1))
    counts = {SUCCESS: 0, DEADLOCK: 0, TERMINATED: 0, CAPPED: 0}
    total_visible = 0
    trace = []
    for i in range(runs):
        outcome, steps = walker.run(base.jumped(i))
        counts[outcome] += 1
        total_visible += steps
        if trace_path:
            trace.append({"run": i, "outcome": outcome, "steps": steps})

    estimate = Fraction(counts[SUCCESS], runs)
    p = float(estimate)
    stats = RunStats(
        runs=runs,
        successes=counts[SUCCESS],
        deadlocks=counts[DEADLOCK],
        terminations=counts[TERMINATED],
        capped=counts[CAPPED],
        mean_visible_steps=Fraction(total_visible, runs),
        estimate=estimate,
        stderr=float(np.sqrt(p * (1 - p) / runs)),
    )
    if trace_path:
        save_trace(trace, trace_path)
    logger.info(f"Simulated {runs} runs with seed {seed}: {stats.summary()}")
    return stats


def save_trace(rows: List[Dict], path: str):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    df = pd.DataFrame(rows, columns=["run", "outcome", "steps"])
    df.to_csv(path, index=False)
    logger.info(f"Trace of {len(rows)} runs saved to {path}")


def within_tolerance(stats: RunStats, expected: Fraction, sigmas: float = 4.0) -> bool:
    """True when the estimate lies within `sigmas` binomial standard errors of `expected`."""
    sd = math.sqrt(float(expected) * (1 - float(expected)) / stats.runs)
    return abs(float(stats.estimate) - float(expected)) <= sigmas * sd + 1e-12
