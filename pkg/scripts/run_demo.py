"""Run the end-to-end demo pipeline (synth, train, eval, project, score) through the CLI.

    python scripts/run_demo.py --out demo_out --seed 0
"""

import argparse
import json
import sys
from pathlib import Path

from qear.experiments import demo_commands, run_demo


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="demo_out")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--latent-dim", type=int, default=20)
    ap.add_argument("--dry-run", action="store_true", help="print the commands only")
    args = ap.parse_args()

    if args.dry_run:
        for argv in demo_commands(args.out, args.seed, args.latent_dim):
            print("qear " + " ".join(argv))
        return 0

    code, seconds = run_demo(args.out, args.seed, args.latent_dim)
    print(f"total {seconds:.1f}s, exit {code}")
    if code == 0:
        root = Path(args.out)
        print((root / "eval" / "summary.csv").read_text())
        report = json.loads((root / "score" / "report.json").read_text())
        print("anomaly AUC:", report.get("auc"))
    return code


if __name__ == "__main__":
    sys.exit(main())
