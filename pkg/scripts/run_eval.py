"""Run an evaluation suite and print the scored report.

Usage: python scripts/run_eval.py [--suite file.jsonl] [--format json|table|radarData]
"""

import argparse
import sys

from bankchat import AppConfig, build_registry
from bankchat.config import data_path
from bankchat.evalharness import emit_report, load_rubric, load_suite, run_suite


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--suite", default=data_path("desk_suite.jsonl"))
    parser.add_argument("--config", default=None)
    parser.add_argument("--format", default="table", choices=["json", "table", "radarData"])
    parser.add_argument("--rubric", default=None)
    parser.add_argument("--workers", type=int, default=1)
    args = parser.parse_args()

    config = AppConfig.from_json(args.config) if args.config else AppConfig()
    cases, rejects = load_suite(args.suite)
    for reject in rejects:
        print(f"skipped line {reject.lineno}: {reject.reason}", file=sys.stderr)
    rubric = load_rubric(args.rubric) if args.rubric else None
    report = run_suite(
        cases,
        build_registry(config),
        config.eval,
        rubric=rubric,
        workers=args.workers,
    )
    print(emit_report(report, args.format))
    if not report.gates_passed:
        sys.exit(2)


if __name__ == "__main__":
    main()
