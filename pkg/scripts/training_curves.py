"""Train one model per latent size on the synthetic demo corpus and write the loss curves.

Outputs ``loss_d<d>.csv`` per model and ``summary.csv`` with first/final MSE.
"""

import argparse
import csv
from pathlib import Path

from qear.experiments import LATENT_SIZES, training_runs
from qear.vae import TrainingConfig, write_loss_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="curves_out")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--beta", type=float, default=TrainingConfig.beta)
    ap.add_argument("--no-early-stop", action="store_true")
    args = ap.parse_args()

    cfg = TrainingConfig(seed=args.seed, epochs=args.epochs, beta=args.beta,
                         early_stop_window=args.epochs if args.no_early_stop else 5)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    runs = training_runs(LATENT_SIZES, args.seed, config=cfg,
                         progress=lambda r: print(f"  epoch {r.epoch:3d} mse {r.mean_mse:.5f} "
                                                  f"kl {r.mean_kl:.3f}", flush=True))
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["latent_dim", "epochs", "first_mse", "final_mse", "ratio", "seconds"])
        for run in runs:
            write_loss_csv(run.history, out / f"loss_d{run.latent_dim}.csv")
            w.writerow([run.latent_dim, len(run.history), run.history[0].mean_mse,
                        run.history[-1].mean_mse, run.mse_ratio, round(run.seconds, 1)])
    print((out / "summary.csv").read_text())


if __name__ == "__main__":
    main()
