"""Single-datapoint recovery probe for tuning the denoising check.

Trains on one (cond, chunk) pair replicated ``--reps`` times, then prints the
per-tau velocity error and the worst per-coordinate recovery error from 10
noise draws at 2 and 8 sampler steps.

    python scripts/single_point_sweep.py --epochs 200 --lr 3e-3 --batch 100 --reps 5000
"""

import argparse
import time

import numpy as np

from golden_ticket.flow import Dataset, TrainConfig, sample, train


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--batch", type=int, default=100)
    p.add_argument("--reps", type=int, default=5000)
    p.add_argument("--hidden", default="256,256,256")
    p.add_argument("--schedule", default="cosine", choices=["constant", "cosine"])
    args = p.parse_args()

    rng = np.random.default_rng(5)
    cond = rng.standard_normal(5).astype(np.float32)
    chunk = rng.uniform(-1, 1, 24).astype(np.float32)
    n = args.reps
    ds = Dataset(np.tile(cond, (n, 1)), np.tile(chunk, (n, 1)), np.zeros(n), ["x"], "reach-pick", 0)
    t0 = time.time()
    hidden = tuple(int(h) for h in args.hidden.split(","))
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch, lr=args.lr, lr_schedule=args.schedule, hidden=hidden, seed=0)
    model, _ = train(cfg, ds)
    c = model.normalize(cond)
    print("tau  mean|u-u*|  max|u-u*|")
    for tau in (1.0, 0.875, 0.5, 0.25, 0.125, 0.05, 0.01):
        eps = rng.standard_normal((200, 24)).astype(np.float32)
        err = np.abs(model.velocity((1 - tau) * chunk + tau * eps, c, tau) - (eps - chunk))
        print(f"{tau:<5} {err.mean():.4f}      {err.max():.4f}")
    for steps in (2, 8):
        z1s = np.random.default_rng(11).standard_normal((10, 24)).astype(np.float32)
        worst = max(np.abs(sample(model, c, z, steps) - chunk).max() for z in z1s)
        print(f"steps {steps}: worst recovery error {worst:.4f}")
    print(f"{time.time() - t0:.0f}s")


if __name__ == "__main__":
    main()
