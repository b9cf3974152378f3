"""
Synthetic ablation study: no graph, RGB only, complete simple graph, and the
full two-branch hypergraph model.

Generates the 10-subject synthetic dataset, splits it by subject, trains the
four variants and prints dev AUC, dev TDR at 5% FDR and test ACER at the
dev-EER threshold.  Takes about three minutes on one core.

    python3 demos/ablation_benchmark.py [--epochs 30] [--seed 0]
"""

import argparse
import time

from hgcnn import metrics as mt
from hgcnn import model as md
from hgcnn import synthdata

NAMES = {1: "no graph", 2: "RGB only", 3: "complete graph", 4: "full"}


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    samples = synthdata.generate(synthdata.GeneratorConfig(n_subjects=10, seed=args.seed))
    splits = mt.make_splits(samples, "subjects", seed=args.seed)
    print({k: len(v) for k, v in splits.items()})

    print(f"{'model':<18}{'dev AUC':>9}{'TDR@5%':>9}{'test ACER':>11}{'time':>8}")
    for m in (1, 2, 3, 4):
        t0 = time.perf_counter()
        cfg = md.ablation_config(m)
        prep = {k: md.prepare_samples(v, cfg) for k, v in splits.items()}
        res = md.train(cfg, prep["train"], prep["dev"], md.TrainConfig(epochs=args.epochs), seed=args.seed)
        dev, test = md.predict(res.model, prep["dev"]), md.predict(res.model, prep["test"])
        acer = mt.apcer_bpcer_acer(test, res.threshold)["acer"]
        print(f"{m} {NAMES[m]:<16}{mt.auc(dev):>9.3f}{mt.tdr_at_fdr(dev, [0.05])[0]:>9.3f}"
              f"{acer:>11.3f}{time.perf_counter() - t0:>7.0f}s")


if __name__ == "__main__":
    main()
