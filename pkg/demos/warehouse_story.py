"""Replay the two-worker warehouse fixture and print its behavior timeline.

    python3 demos/warehouse_story.py [--out DIR]
"""

import argparse
from pathlib import Path

import socnavsim
from socnavsim.harness import RunConfig, run
from socnavsim.world import dist

DATA = Path(socnavsim.__file__).parent / "data"
SHOWN = {"success", "failure", "speech", "tree_success", "tree_failure"}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", help="also write metrics.yaml and the CSV logs here")
    a = ap.parse_args()
    log, reports = run(RunConfig(DATA / "warehouse_workers.yaml", out_dir=a.out))
    for e in log.events:
        if e.agent_id > 0 and e.event in SHOWN:
            extra = f' "{e.detail}"' if e.detail else ""
            print(f"{e.t:7.2f}s  worker {e.agent_id}  {e.name or '-':24s} {e.event}{extra}")
    last = log.snapshots[-1]
    gap = dist(last.agent(1).position, last.agent(2).position)
    print(f"\nafter {last.t:g} s the workers are {gap:.2f} m apart")
    print(f"min robot-human surface distance: {reports[0].value('min_distance_to_human'):.2f} m")


if __name__ == "__main__":
    main()
