#!/usr/bin/env python3
"""Regenerates the committed conformance fixtures in conformance/."""

import os
import sys

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, os.path.join(REPO_ROOT, "tests"))

from conformance_driver import STOP_TRIALS, generate_goldens  # noqa: E402


def main() -> int:
    out_dir = os.path.join(REPO_ROOT, "conformance")
    fixtures = generate_goldens(out_dir)
    loop_states = [t["state"] for t in fixtures["loop_study"]["trials"]]
    stop_trials = fixtures["stop_study"]["trials"]
    stopped = sum(1 for t in stop_trials
                  if len(t["intermediate_measurements"]) < 5)
    print(f"loop study: {len(loop_states)} trials, states {set(loop_states)}")
    print(f"stop study: {len(stop_trials)} trials, {stopped} stopped early")
    if len(stop_trials) != STOP_TRIALS or stopped == 0 or stopped == len(stop_trials):
        print("warning: early-stopping scenario is degenerate; adjust the seed",
              file=sys.stderr)
        return 1
    print(f"fixtures written to {out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
