"""Follower success rate with and without candidate pruning on fresh worlds.

    python scripts/pruning_benefit.py --worlds 400 --epsilon 0.5 --jobs 4
"""

import argparse
import time

from navpruner.corpus import pruning_benefit, reference_retriever


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--worlds", type=int, default=400, help="50 episodes each")
    ap.add_argument("--epsilon", type=float, default=0.5)
    ap.add_argument("--k", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()

    t0 = time.perf_counter()
    model, _ = reference_retriever()
    res = pruning_benefit(model, args.worlds, args.epsilon, args.k, args.seed, args.jobs)
    print(f"n={res.n} per arm  SR no pruning {res.sr_baseline:.2f}  SR top-{args.k} {res.sr_pruned:.2f}")
    print(f"z={res.z:.3f}  one-sided p={res.p_value:.4f}  ({time.perf_counter() - t0:.0f} s)")


if __name__ == "__main__":
    main()
