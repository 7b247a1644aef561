"""Run the whole pipeline for one config, stage by stage, through the CLI.

    python scripts/run_fixture.py configs/reach_pick_fixture.json --out runs/rp --jobs 4

Reach-pick and push runs go gen-data -> train -> (eval-base, search, verify,
pareto, budget) at 2 and 8 steps -> report. Multi-goal runs add cross-task.
Stops at the first stage that exits non-zero and returns its code.
"""

import argparse
import sys
import time

from golden_ticket import cli
from golden_ticket.config import RunConfig


def stages(cfg: RunConfig):
    yield "gen-data", None
    yield "train", None
    for steps in (2, 8):
        for cmd in ("eval-base", "search", "verify", "pareto", "budget"):
            yield cmd, steps
        if cfg.env_spec().task == "multi-goal":
            yield "cross-task", steps
    yield "report", None


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("config")
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--train-seed", type=int, help="override train.seed (writes a sibling config)")
    args = p.parse_args()
    cfg = RunConfig.load(args.config)
    config_path = args.config
    if args.train_seed is not None:
        cfg.train.seed = args.train_seed
        config_path = f"{args.config.rsplit('.', 1)[0]}.train{args.train_seed}.json"
        with open(config_path, "w") as fh:
            fh.write(cfg.to_json())
    out = args.out or cfg.output_dir
    for cmd, steps in stages(cfg):
        argv = [cmd, "--config", config_path, "--out", out, "--jobs", str(args.jobs)]
        if steps:
            argv += ["--steps", str(steps)]
        t0 = time.time()
        code = cli.main(argv)
        print(f"[{cmd}{'' if steps is None else f' s{steps}'}] exit {code} in {time.time() - t0:.1f}s", file=sys.stderr)
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
