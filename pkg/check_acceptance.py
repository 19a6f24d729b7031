#!/usr/bin/env python3
"""
Acceptance check - compare the reports of a finished run

    python check_acceptance.py data/reports

Needs ifgsm, dtmi-ce and dtmi-ce-li runs for each surrogate (./start.sh does them all)
and transfer checkpoints 20 and 300.
"""
import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent / "backend"))

from evaluation.acceptance import check_reports  # noqa: E402
from utils.errors import AdvLabError  # noqa: E402


def main(argv=None):
    parser = argparse.ArgumentParser(description="Directional checks over advlab reports")
    parser.add_argument("reports", nargs="?", default="data/reports", help="reports directory")
    parser.add_argument("--early", type=int, default=20, help="early transfer checkpoint")
    parser.add_argument("--late", type=int, default=300, help="final transfer checkpoint")
    args = parser.parse_args(argv)

    print("="*60)
    print("ADVLAB - ACCEPTANCE CHECK")
    print("="*60)
    try:
        checks = check_reports(args.reports, early=args.early, late=args.late)
    except AdvLabError as e:
        print(f"❌ {e}")
        return False

    for check in checks:
        mark = "✅" if check.passed else "❌"
        print(f"{mark} {check.name}: {check.detail}")
    passed = sum(c.passed for c in checks)
    print("="*60)
    if passed == len(checks):
        print(f"✨ ALL CHECKS PASSED ({passed}/{len(checks)})")
        return True
    print(f"⚠️  SOME CHECKS FAILED ({passed}/{len(checks)} passed)")
    return False


if __name__ == "__main__":
    success = main()
    sys.exit(0 if success else 1)
