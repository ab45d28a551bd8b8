#!/usr/bin/env python3
"""Independent metrics oracle for a stored run.

Usage: oracle_metrics.py <run-dir> > expected.json

Shares no code with the library. Words and lines are counted by scanning
characters; requirement lines are matched by hand rather than by regex.
"""

import json
import os
import sys

STAGE_DIRS = ["01-project-plan", "02-requirements", "03-design",
              "04-development", "05-testing", "06-deployment"]
PREFIXES = {"FR": "functional", "NFR": "non_functional", "PR": "performance",
            "SR": "security", "C": "constraint"}
STATUS_KEYS = {"fully-met": "fully_met", "partially-met": "partially_met",
               "not-verified": "not_verified", "not-met": "not_met"}
WS = " \t\n\r\x0b\x0c"


def read(path):
    with open(path, encoding="utf-8") as f:
        return f.read()


def words(text):
    n, inside = 0, False
    for ch in text:
        if ch in WS:
            inside = False
        elif not inside:
            inside = True
            n += 1
    return n


def nonblank_lines(text):
    n, seen = 0, False
    for ch in text:
        if ch == "\n":
            n += seen
            seen = False
        elif ch not in WS:
            seen = True
    return n + seen


def requirement_category(line):
    head, sep, rest = line.partition(":")
    if not sep or not rest.strip():
        return None
    prefix, dash, index = head.partition("-")
    if not dash or prefix not in PREFIXES or not index.isdigit() or int(index) < 1:
        return None
    return PREFIXES[prefix]


def round_files(stage_dir, prefix):
    names = [n for n in os.listdir(stage_dir) if n.startswith(prefix) and n[len(prefix):].isdigit()]
    return [os.path.join(stage_dir, n) for n in sorted(names, key=lambda n: int(n[len(prefix):]))]


def main(run_dir):
    manifest = json.loads(read(os.path.join(run_dir, "manifest.json")))
    total_words = 0
    for d in STAGE_DIRS:
        stage_dir = os.path.join(run_dir, d)
        docs = round_files(stage_dir, "draft-") + round_files(stage_dir, "review-")
        if os.path.exists(os.path.join(stage_dir, "final")):
            docs.append(os.path.join(stage_dir, "final"))
        total_words += sum(words(read(p)) for p in docs)

    counts = {k: 0 for k in ["functional", "non_functional", "performance", "security", "constraint"]}
    for line in read(os.path.join(run_dir, "02-requirements", "final")).split("\n"):
        category = requirement_category(line)
        if category:
            counts[category] += 1

    loc = 0
    src = os.path.join(run_dir, "04-development", "src")
    for top, _, files in os.walk(src):
        for name in files:
            loc += nonblank_lines(read(os.path.join(top, name)))

    summary = {"fully_met": 0, "partially_met": 0, "not_verified": 0, "not_met": 0}
    ledger_path = os.path.join(run_dir, "ledger.json")
    if os.path.exists(ledger_path):
        for entry in json.loads(read(ledger_path))["entries"].values():
            summary[STATUS_KEYS[entry["status"]]] += 1
    summary["total"] = sum(summary.values())

    doc = {
        "schema_version": 1,
        "run_id": manifest["run_id"],
        "total_words": total_words,
        "requirement_counts": counts,
        "loc": loc,
        "status_summary": summary,
        "wall_duration_ms": manifest["total_duration_ms"],
        "token_usage": manifest["total_usage"],
    }
    sys.stdout.write(json.dumps(doc, indent=2, ensure_ascii=False) + "\n")


if __name__ == "__main__":
    main(sys.argv[1])
