"""Pull/push equivalence over a seed range; writes the JSON report and exits 1 on any failure.

    python3 scripts/equivalence_sweep.py --seeds 1-20 --out results/equivalence.json
"""

import argparse
import json
import sys
import time
from pathlib import Path

from dltreport.harness import compare_seeds
from dltreport.mrer import shipped_templates


def seed_range(text: str) -> list[int]:
    lo, _, hi = text.partition("-")
    return list(range(int(lo), int(hi or lo) + 1))


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", default="1-20")
    ap.add_argument("--blocks", type=int, default=200)
    ap.add_argument("--out")
    args = ap.parse_args()

    started = time.perf_counter()
    report = compare_seeds(seed_range(args.seeds), list(shipped_templates().values()), n_blocks=args.blocks)
    doc = report.to_dict()
    doc["elapsed_s"] = round(time.perf_counter() - started, 2)
    text = json.dumps(doc, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n")
    print(f"verdict {doc['verdict']}: {doc['instances_compared']} instances, "
          f"{len(report.additivity_violations)} additivity violations, "
          f"{len(report.error_failures)} ERROR failures, {doc['elapsed_s']}s")
    failed = doc["verdict"] != "PASS" or report.additivity_violations or report.error_failures
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
