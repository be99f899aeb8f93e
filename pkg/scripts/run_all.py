"""Run every configuration in configs/ through the CLI, one output directory each.

    python3 scripts/run_all.py [results_dir]
"""
import sys
from pathlib import Path

from khessian.cli import main

ROOT = Path(__file__).resolve().parent.parent


def run_all(results: Path) -> int:
    worst = 0
    for cfg in sorted((ROOT / "configs").glob("*.json")):
        code = main(["--config", str(cfg), "--out", str(results / cfg.stem)])
        print(f"{cfg.name}: exit {code}")
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    sys.exit(run_all(Path(sys.argv[1] if len(sys.argv) > 1 else "results")))
