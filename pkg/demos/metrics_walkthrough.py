"""
Anti-spoofing metrics on a small hand-made score set.

Scores are genuine-class probabilities and a sample is accepted when its
score reaches the threshold.  The threshold for HTER/ACER comes from the
dev-set EER, so the walkthrough fixes it on a dev set and applies it to a
test set.

    python3 demos/metrics_walkthrough.py
"""

import numpy as np

from hgcnn import metrics as mt


def scores(rng, n, shift):
    genuine = np.arange(n) % 4 == 0
    types = np.array(["-", "print", "replay", "mask"] * (n // 4))
    s = np.where(genuine, rng.beta(5, 2, n), rng.beta(2, 5, n))
    # masks look more genuine than flat attacks
    s = np.where(types == "mask", np.clip(s + shift, 0, 1), s)
    return mt.ScoreSet.from_arrays(s, genuine, types)


def main():
    rng = np.random.default_rng(1)
    dev, test = scores(rng, 200, 0.2), scores(rng, 400, 0.2)

    rate, th = mt.eer(dev)
    print(f"dev EER {rate:.3f} at threshold {th:.3f}")
    threshold = mt.Threshold(th, "dev-EER")

    rep = mt.report(test, threshold)
    print(f"test HTER {rep['hter']:.3f}  AUC {rep['auc']:.3f}")
    print(f"APCER {rep['apcer']:.3f} (worst type {rep['apcer_max']:.3f}), "
          f"BPCER {rep['bpcer']:.3f}, ACER {rep['acer']:.3f}")
    for kind, v in rep["apcer_per_type"].items():
        print(f"  APCER[{kind}] = {v:.3f}")
    for fdr, tdr in rep["tdr_at_fdr"].items():
        print(f"  TDR at FDR {fdr}: {tdr:.3f}")

    # ACER is the plain mean of APCER and BPCER
    r = mt.apcer_bpcer_acer(test, threshold)
    assert r["acer"] == 0.5 * (r["apcer"] + r["bpcer"])

    # only the ordering of scores matters to EER and AUC
    squashed = mt.ScoreSet(test.ids, test.subjects, test.labels, test.scores ** 3)
    print(f"AUC after cubing the scores: {mt.auc(squashed):.3f}")


if __name__ == "__main__":
    main()
