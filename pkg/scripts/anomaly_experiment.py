"""Repeat the injected-anomaly experiment over several seeds and report separation."""

import argparse
import json

import numpy as np

from qear.experiments import anomaly_trial


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--latent-dim", type=int, default=20)
    ap.add_argument("--json", help="optional path for the per-seed results")
    args = ap.parse_args()

    results = []
    for seed in range(args.seeds):
        t = anomaly_trial(seed, args.latent_dim)
        row = {
            "seed": seed, "epochs": t.epochs,
            "normal_median": float(np.median(t.normal_scores)),
            "normal_p99": t.normal_p99, "reference_p99": t.reference_p99,
            "anomaly_median": t.anomaly_median, "auc": t.detection["auc"],
        }
        results.append(row)
        print("  ".join(f"{k}={v:.3f}" if isinstance(v, float) else f"{k}={v}"
                        for k, v in row.items()), flush=True)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
