"""Pick each agent's L2 weight on problems disjoint from the reported suite.

Tuning problems come from a different master seed, and the objective is the
area under the seed-averaged best-so-far test log-loss curve (budgets 10..N),
so no baseline targets are needed and the reported seeds are never touched.

    python scripts/tune_l2.py --master-seed 1 --seeds 10 > tune.tsv
"""

import argparse
import sys

import numpy as np

from epinet_al.config import preset_config
from epinet_al.evaluation import envelope
from epinet_al.suite import load_problem, run_cell

GRID = (0.0, 1e-4, 1e-3, 1e-2, 3e-2, 1e-1)
TARGETS = {"mlp": ("entropy", "margin"), "ensemble": ("variance",),
           "dropout": ("variance",), "epinet": ("variance",)}


def area(cfg, agent, priority, seeds) -> float:
    budgets = np.arange(10, cfg.problem.num_train + 1, 10)
    env = [envelope(run_cell(cfg, load_problem(cfg, k), agent, priority), budgets)
           for k in seeds]
    return float(np.mean(env))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--master-seed", type=int, default=1)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--agents", default=",".join(TARGETS))
    ap.add_argument("--grid", default=",".join(f"{v:g}" for v in GRID))
    args = ap.parse_args(argv)
    grid = [float(v) for v in args.grid.split(",")]
    print("agent\tl2\tpriority\tarea", flush=True)
    for agent in args.agents.split(","):
        best = None
        for l2 in grid:
            cfg = preset_config("testbed-default", seed=args.master_seed,
                                agents={agent: {"l2": l2}})
            scores = [area(cfg, agent, p, range(args.seeds)) for p in TARGETS[agent]]
            for p, s in zip(TARGETS[agent], scores):
                print(f"{agent}\t{l2:g}\t{p}\t{s:.5f}", flush=True)
            if best is None or np.mean(scores) < best[1]:
                best = (l2, float(np.mean(scores)))
        print(f"# {agent} best l2 {best[0]:g} area {best[1]:.5f}", flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
