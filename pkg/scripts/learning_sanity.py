"""Long-memory learning check: aila1 and aila2 over five training seeds.

By default each run stops as soon as validation MSE is at most half the
last-step least-squares oracle and train loss has halved. Pass
``--full`` to train the whole epoch budget with the usual early stopping.

    python scripts/learning_sanity.py --out runs/sanity
"""

import argparse
import json
from pathlib import Path

from aila.config import ModelConfig, TrainConfig
from aila.data import last_step_oracle_mse, synth_long_memory
from aila.models import build_model, save_checkpoint
from aila.training import train


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--clip", type=float, default=1.0)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--patience", type=int, default=200)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--variants", nargs="+", default=["aila1", "aila2"])
    p.add_argument("--full", action="store_true", help="no first-passage stop")
    p.add_argument("--out", type=Path)
    args = p.parse_args()

    data = synth_long_memory(2000, T=24, lag=12, seed=args.data_seed)
    oracle = last_step_oracle_mse(data)
    print(f"last-step oracle val MSE {oracle:.4f}; target {0.5 * oracle:.4f}")
    tcfg = TrainConfig(lr=args.lr, grad_clip=args.clip, epochs=args.epochs,
                       early_stop_patience=args.patience, seeds=args.seeds)
    rows = []
    for variant in args.variants:
        cfg = ModelConfig(variant=variant, num_layers=args.layers, hidden=args.hidden,
                          d_k=args.hidden, d_v=args.hidden)
        for seed in args.seeds:
            model = build_model(cfg, seed=seed)

            def reached(r):
                e = r.epochs[-1]
                return e.val_loss <= 0.5 * oracle and e.train_loss <= 0.5 * r.initial_train_loss

            rep = train(model, data, tcfg, seed=seed, stop_when=None if args.full else reached)
            first = next((e.epoch for e in rep.epochs if e.val_loss <= 0.5 * oracle), None)
            row = {"variant": variant, "seed": seed, "epochs": len(rep.epochs), "first_hit": first,
                   "best_val_over_oracle": rep.best_val_loss / oracle,
                   "final_over_initial": rep.final_train_loss / rep.initial_train_loss,
                   "seconds": round(rep.train_seconds, 1)}
            rows.append(row)
            print(json.dumps(row), flush=True)
            if args.out:
                d = args.out / variant / f"seed{seed}"
                rep.write(d)
                save_checkpoint(d / "model.ckpt", model, extra={"seed": seed})
    ok = all(r["first_hit"] is not None and r["final_over_initial"] <= 0.5 for r in rows)
    print("all runs reached both targets" if ok else "some runs missed a target")


if __name__ == "__main__":
    main()
