"""Run the ablation variants and the K sweep from configs/ablation.json."""

import sys
from pathlib import Path

from echotrail.cli import main

ROOT = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    spec = str(ROOT / "configs" / "ablation.json")
    out = sys.argv[1] if len(sys.argv) > 1 else "results"
    rc = main(["ablate", "--spec", spec, "--out", out])
    rc = rc or main(["sweep-k", "--spec", spec, "--out", out])
    sys.exit(rc)
