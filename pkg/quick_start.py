#!/usr/bin/env python3
"""
Quick Start Script for paver
Runs the two case-study verifications end to end with default settings.
"""

import logging
import sys
from fractions import Fraction

from config_local import config
from equivalence import (
    EVENTUAL, ROUND, ProbQuery, UniformPolicy, WeightedPolicy, branching_bisim, check_equivalence, schedule,
    success_probability,
)
from process_term import ActionPattern
from protocols import CORRUPTION_PATTERNS, UcpParams, build_abp, build_ucp, desired_behavior, make_params, split_hiding
from semantics import abstract, expand

SUCCESS = frozenset({ActionPattern("s_C")})


def check_ucp() -> dict:
    """Round probability at pi=1/2 and equivalence with the desired behaviour at pi=1."""
    params = UcpParams()
    pts = expand(build_ucp(params))
    print(f"📦 UCP expands to {pts.num_states} states")
    round_success = success_probability(pts, ProbQuery(SUCCESS, ROUND))
    print(f"🎲 One-round delivery probability: {round_success} (expected {params.round_success()})")

    perfect = expand(build_ucp(make_params("ucp", {"all": Fraction(1)})))
    result = check_equivalence(perfect, expand(desired_behavior("ucp")), "rooted-branching")
    print(f"🔗 Perfect UCP vs desired behaviour: {'equivalent' if result.equivalent else 'NOT equivalent'}")
    return {
        "UCP round probability": round_success == params.round_success(),
        "UCP desired behaviour": result.equivalent,
    }


def check_abp() -> dict:
    """The perfect ABP is equivalent to the desired behaviour, divergently; without corruption the
    divergence disappears; with fair scheduling every datum is eventually delivered."""
    spec_pts = expand(desired_behavior("abp"))
    full = expand(build_abp())
    result = check_equivalence(full, spec_pts, "rooted-branching")
    print(f"🔗 Perfect ABP vs desired behaviour: {'equivalent' if result.equivalent else 'NOT equivalent'}"
          f"{' (with divergence)' if result.divergent else ''}")

    encapsulated, hidden = split_hiding(build_abp())
    clean = abstract(schedule(expand(encapsulated), WeightedPolicy(CORRUPTION_PATTERNS, 0)), hidden)
    no_corruption = branching_bisim(clean, spec_pts)
    print(f"🧹 Without corruption: {'equivalent' if no_corruption.equivalent else 'NOT equivalent'}"
          f"{', divergent' if no_corruption.divergent else ', no divergence'}")

    fair = schedule(full, UniformPolicy())
    eventual = success_probability(fair, ProbQuery(SUCCESS, EVENTUAL))
    print(f"🎲 Eventual delivery under a uniform scheduler: {eventual}")
    return {
        "ABP desired behaviour": result.equivalent,
        "ABP divergence reported": result.divergent,
        "ABP without corruption": no_corruption.equivalent and not no_corruption.divergent,
        "ABP eventual delivery": eventual == 1,
    }


def main():
    logging.basicConfig(level=config.get("logging.level", "WARNING"), format=config.get("logging.format"))
    print("🚀 paver - Quick Start")
    print("=" * 50)

    checks = {}
    for title, step in (("Utopian communication protocol", check_ucp), ("Alternating bit protocol", check_abp)):
        print(f"\n🔍 {title}")
        try:
            checks.update(step())
        except Exception as e:
            print(f"❌ Error during {title}: {e}")
            print("💡 Run: python diagnose_system.py")
            checks[title] = False

    print("\n📊 Summary")
    for name, passed in checks.items():
        print(f"{'✅' if passed else '❌'} {name}")
    print("\n🎯 Quick Start Complete!")
    print("📖 See SETUP_GUIDE.md for the command-line interface")
    return 0 if all(checks.values()) else 1


if __name__ == "__main__":
    sys.exit(main())
