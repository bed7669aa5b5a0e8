"""Compare all five connection schemes at matched depth and width.

    python scripts/compare_variants.py --out runs/compare
"""

import argparse
from pathlib import Path

from aila.ablation import compare_variants
from aila.config import load_run_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", type=Path, default=CONFIGS / "compare.yaml")
    p.add_argument("--out", type=Path, default=Path("runs/compare"))
    args = p.parse_args()
    cfg = load_run_config(args.config)
    report = compare_variants(cfg.data, cfg.train.seeds, cfg.model, cfg.train, args.out)
    print(report.summary())
    pc = {c.label: c.param_count for c in report.cells}
    print("parameter ordering plain <= residual_sum < aila1, aila2:",
          pc["plain"] <= pc["residual_sum"] < min(pc["aila1"], pc["aila2"]))


if __name__ == "__main__":
    main()
