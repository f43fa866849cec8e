"""Explore with several seeds and report the pooled high-quality rate per stage and app."""

import argparse
from pathlib import Path

from echotrail.experiments import quality_over_time
from echotrail.exploration import ExplorerConfig, run_exploration
from echotrail.sim import SimEnv

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=16)
    ap.add_argument("--episodes", type=int, default=200)
    ap.add_argument("--guidance", choices=["on", "off"], default="on")
    ap.add_argument("--out", default="results/stage_quality.csv")
    args = ap.parse_args()
    env = SimEnv()
    runs = (run_exploration(ExplorerConfig(N=args.episodes, seed=s,
                                           guidance_enabled=args.guidance == "on"), env).episodes
            for s in range(args.seeds))
    q = quality_over_time(runs)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(q.to_csv(), encoding="utf-8")
    for app, rates in q.per_app().items():
        print(f"{app:10s} " + "  ".join(f"{r:.3f}" for r in rates))
