"""Success rate and episode length of every scripted expert style, per task.

    python scripts/expert_stats.py --seeds 1000 --horizon 240
"""

import argparse

import numpy as np

from golden_ticket.envs import STYLES, TASKS, EnvSpec, expert_rollout


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--seeds", type=int, default=300)
    p.add_argument("--horizon", type=int, default=240)
    args = p.parse_args()
    print(f"{'task':<11} {'style':<15} {'success':>7} {'mean len':>8} {'p90 len':>7}")
    for task in TASKS:
        spec = EnvSpec(task, horizon=args.horizon)
        for style in STYLES:
            res = [expert_rollout(spec, s, style)[0] for s in range(args.seeds)]
            lens = np.array([r.length for r in res if r.success])
            rate = len(lens) / len(res)
            print(f"{task:<11} {style:<15} {rate:7.3f} {lens.mean():8.1f} {np.percentile(lens, 90):7.0f}")


if __name__ == "__main__":
    main()
