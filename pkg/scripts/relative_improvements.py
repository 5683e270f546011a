"""Recompute every relative WER change in the reference tables and flag mismatches.

    python3 scripts/relative_improvements.py [--tables tests/data/wer_tables.json] [--tol 0.01]

Exits 1 when any printed delta is farther than ``--tol`` percentage points
from the value implied by its absolute error rates.
"""

import argparse
import json
import sys
from pathlib import Path

from ccfactor.metrics import relative_improvement

DEFAULT = Path(__file__).resolve().parent.parent / "tests" / "data" / "wer_tables.json"


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--tables", type=Path, default=DEFAULT)
    ap.add_argument("--tol", type=float, default=0.01)
    args = ap.parse_args()

    groups = json.loads(args.tables.read_text())["groups"]
    n_bad = n = 0
    for grp in groups:
        print(f"\n{grp['name']}")
        for r in grp["rows"]:
            got = relative_improvement(r["baseline"], r["ours"])
            off = abs(got - r["published_delta_pct"]) > args.tol
            n += 1
            n_bad += off
            flag = "  MISMATCH" if off else ""
            print(f"  {r['baseline']:6.2f} -> {r['ours']:6.2f}   computed {got:+7.2f}%   printed {r['published_delta_pct']:+7.2f}%{flag}")
    print(f"\n{n - n_bad}/{n} printed deltas reproduced within {args.tol} pp")
    return 1 if n_bad else 0


if __name__ == "__main__":
    sys.exit(main())
