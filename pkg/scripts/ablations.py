"""Run the depth, head-count and knockout ablation plans in configs/.

    python scripts/ablations.py --out runs/ablations [--plans depth heads]
"""

import argparse
from pathlib import Path

from aila.ablation import run_ablation
from aila.cli import load_plan

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--plans", nargs="+", default=["depth", "heads", "knockout"])
    p.add_argument("--out", type=Path, default=Path("runs/ablations"))
    args = p.parse_args()
    for name in args.plans:
        plan, _ = load_plan(CONFIGS / f"ablate_{name}.yaml")
        report = run_ablation(plan, args.out / name)
        print(report.summary())


if __name__ == "__main__":
    main()
