"""Collect ``summary.json`` files under a run root into one table.

Usage: python3 scripts/summarize_runs.py [RUN_ROOT] [--csv PATH]
"""

import argparse
import csv
import json
import sys
from pathlib import Path


def collect(root: Path) -> list[dict]:
    rows = []
    for path in sorted(root.glob("*/summary.json")):
        data = json.loads(path.read_text())
        checks = data.get("checks", {})
        failed = [k for k, v in checks.items() if not v]
        rows.append({
            "run": path.parent.name,
            "status": data.get("status", "?"),
            "checks": len(checks),
            "failed": ";".join(failed),
        })
    return rows


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("root", nargs="?", default="runs")
    ap.add_argument("--csv", help="also write the table as CSV")
    args = ap.parse_args(argv)
    rows = collect(Path(args.root))
    if not rows:
        print(f"no runs under {args.root}", file=sys.stderr)
        return 1
    for r in rows:
        verdict = "PASS" if r["status"] == "ok" and not r["failed"] else "FAIL"
        extra = f" failed: {r['failed']}" if r["failed"] else ""
        print(f"{verdict} {r['run']:16s} {r['status']:9s} {r['checks']} checks{extra}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    return 0 if all(r["status"] == "ok" and not r["failed"] for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
