"""Seeded random terms and transition systems for property tests."""
import random
from fractions import Fraction
from typing import List

from process_term import (
    ActionPattern, Alt, CommMerge, DELTA, Encap, Hide, Merge, PChoice, Parallel, Prefix, SKIP, Shadow, TAU,
    Term, action,
)
from semantics import N_STATE, P_STATE, PTS, Distribution

ACTIONS = ("a", "b", "c")
PROBABILITIES = (Fraction(1, 2), Fraction(1, 3), Fraction(2, 3), Fraction(1, 4))


def random_term(rng: random.Random, depth: int = 4) -> Term:
    """A closed term without recursion over the actions a, b, c."""
    if depth <= 0:
        return rng.choice([DELTA, SKIP, Prefix(action(rng.choice(ACTIONS)), SKIP)])
    kind = rng.randrange(10)
    sub = lambda: random_term(rng, depth - 1)
    if kind == 0:
        return Prefix(TAU, sub())
    if kind <= 2:
        return Prefix(action(rng.choice(ACTIONS)), sub())
    if kind == 3:
        return Shadow(action(rng.choice(ACTIONS)), sub())
    if kind == 4:
        return Alt(sub(), sub())
    if kind == 5:
        return PChoice(rng.choice(PROBABILITIES), sub(), sub())
    if kind == 6:
        return rng.choice([Merge, Parallel, CommMerge])(sub(), sub())
    patterns = frozenset(ActionPattern(a) for a in rng.sample(ACTIONS, rng.randint(1, 2)))
    return (Encap if kind == 7 else Hide)(patterns, sub())


def random_pts(rng: random.Random, size: int, labels=("a", "b", "tau"), p_share: float = 0.3) -> PTS:
    """A PTS over `size` states; some are probabilistic with random rational distributions."""
    kinds: List[str] = []
    edges, dists, terminating = [], [], []
    for s in range(size):
        if s > 0 and rng.random() < p_share:
            targets = rng.sample(range(size), rng.randint(1, min(3, size)))
            weights = [rng.randint(1, 3) for _ in targets]
            total = sum(weights)
            kinds.append(P_STATE)
            edges.append(())
            dists.append(Distribution.of({t: Fraction(w, total) for t, w in zip(targets, weights)}))
            terminating.append(False)
            continue
        out = []
        for _ in range(rng.randint(0, 3)):
            name = rng.choice(labels)
            step = (TAU if name == "tau" else action(name), rng.randrange(size))
            if step not in out:
                out.append(step)
        kinds.append(N_STATE)
        edges.append(tuple(out))
        dists.append(None)
        terminating.append(not out and rng.random() < 0.5)
    return PTS(tuple(kinds), 0, tuple(edges), tuple(dists), tuple(terminating))


def set_partitions(n: int):
    """Every partition of range(n) as a block-of list (restricted growth strings)."""
    def extend(prefix: List[int], blocks: int):
        if len(prefix) == n:
            yield list(prefix)
            return
        for b in range(blocks + 1):
            prefix.append(b)
            yield from extend(prefix, max(blocks, b + 1))
            prefix.pop()
    if n == 0:
        yield []
        return
    yield from extend([0], 1)
