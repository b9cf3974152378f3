"""
Presentation-attack-detection metrics and evaluation protocols.

Scores are genuine-class probabilities.  A sample is *accepted* (classified
genuine) when ``score >= threshold``.  Throughout:

* FAR  = attacks accepted / attacks          (APCER, 1 - TDR)
* FRR  = genuine rejected / genuine          (BPCER, FDR)
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np


@dataclass(frozen=True, eq=False)
class ScoreSet:
    ids: tuple[str, ...]
    subjects: tuple[str, ...]
    labels: tuple[str, ...]          # "genuine" or an attack type
    scores: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(s)):
            raise ValueError("scores must be finite")
        if not (len(self.ids) == len(self.subjects) == len(self.labels) == s.size):
            raise ValueError("ScoreSet fields have different lengths")
        object.__setattr__(self, "scores", s)

    @classmethod
    def from_records(cls, records) -> "ScoreSet":
        """``records`` yields ``(id, subject, label_or_type, attack_type, score)``."""
        ids, subjects, labels, scores = [], [], [], []
        for rid, subject, label, attack_type, score in records:
            if label == "attack":
                label = attack_type or "attack"
            ids.append(str(rid))
            subjects.append(str(subject))
            labels.append(str(label))
            scores.append(float(score))
        return cls(tuple(ids), tuple(subjects), tuple(labels), np.array(scores))

    @classmethod
    def from_arrays(cls, scores, genuine, attack_types=None) -> "ScoreSet":
        genuine = np.asarray(genuine, dtype=bool)
        n = genuine.size
        if attack_types is None:
            attack_types = ["attack"] * n
        labels = tuple("genuine" if g else str(t) for g, t in zip(genuine, attack_types))
        ids = tuple(str(i) for i in range(n))
        return cls(ids, ids, labels, np.asarray(scores, dtype=np.float64))

    def __len__(self):
        return self.scores.size

    @property
    def genuine(self) -> np.ndarray:
        return np.array([l == "genuine" for l in self.labels], dtype=bool)

    @property
    def attack_types(self) -> tuple:
        return tuple(None if l == "genuine" else l for l in self.labels)

    def subset(self, mask) -> "ScoreSet":
        idx = np.flatnonzero(mask)
        pick = lambda t: tuple(t[i] for i in idx)  # noqa: E731
        return ScoreSet(pick(self.ids), pick(self.subjects), pick(self.labels), self.scores[idx])

    # CSV: id,subject,label,attack_type,score
    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "subject", "label", "attack_type", "score"])
        for rid, subj, lab, s in zip(self.ids, self.subjects, self.labels, self.scores):
            genuine = lab == "genuine"
            w.writerow([rid, subj, "genuine" if genuine else "attack",
                        "" if genuine else lab, repr(float(s))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ScoreSet":
        rows = csv.DictReader(io.StringIO(text))
        return cls.from_records((r["id"], r["subject"], r["label"], r["attack_type"] or None,
                                 float(r["score"])) for r in rows)


@dataclass(frozen=True)
class Threshold:
    value: float
    provenance: str = "fixed"   # "dev-EER" or "fixed"

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError("threshold must be finite")


class RocPoint(NamedTuple):
    threshold: float
    far: float
    frr: float
    tdr: float
    fdr: float


def _split(scores: ScoreSet):
    g = scores.genuine
    if len(scores) == 0 or g.all() or not g.any():
        raise ValueError("need both genuine and attack samples")
    return np.sort(scores.scores[g]), np.sort(scores.scores[~g])


def _rates(gen_sorted, att_sorted, th):
    th = np.asarray(th, dtype=np.float64)
    far = (att_sorted.size - np.searchsorted(att_sorted, th, side="left")) / att_sorted.size
    frr = np.searchsorted(gen_sorted, th, side="left") / gen_sorted.size
    return far, frr


def _roc_arrays(scores: ScoreSet):
    gen, att = _split(scores)
    th = np.concatenate([[-np.inf], np.unique(scores.scores), [np.inf]])
    far, frr = _rates(gen, att, th)
    return th, far, frr


def roc_curve(scores: ScoreSet) -> list[RocPoint]:
    """Operating points at every distinct score plus the two infinite sentinels.

    Ordered by increasing threshold, so FAR falls and FRR rises.
    """
    th, far, frr = _roc_arrays(scores)
    return [RocPoint(float(t), float(a), float(r), float(1 - a), float(r))
            for t, a, r in zip(th, far, frr)]


def error_rates(scores: ScoreSet, th) -> tuple[float, float]:
    """``(FAR, FRR)`` at a threshold."""
    gen, att = _split(scores)
    far, frr = _rates(gen, att, float(getattr(th, "value", th)))
    return float(far), float(frr)


def eer(scores: ScoreSet) -> tuple[float, float]:
    """Equal error rate and the threshold where FAR meets FRR.

    When no operating point has FAR == FRR, both rates are interpolated
    linearly between the two points bracketing the crossing, and so is the
    threshold (an infinite end is replaced by the finite one).
    """
    th, far, frr = _roc_arrays(scores)
    d = far - frr
    exact = np.flatnonzero(d == 0)
    if exact.size:
        i = exact[0]
        t = th[i]
        if not np.isfinite(t):
            t = th[1] if t < 0 else th[-2]
        return float(far[i]), float(t)
    i = np.flatnonzero(d > 0)[-1]
    j = i + 1
    w = d[i] / (d[i] - d[j])
    rate = far[i] + w * (far[j] - far[i])
    t0, t1 = th[i], th[j]
    if not np.isfinite(t0):
        t = t1
    elif not np.isfinite(t1):
        t = t0
    else:
        t = t0 + w * (t1 - t0)
    return float(rate), float(t)


def hter(scores: ScoreSet, th) -> float:
    far, frr = error_rates(scores, th)
    return 0.5 * (far + frr)


def apcer_bpcer_acer(scores: ScoreSet, th) -> dict:
    """APCER (overall, per attack type and worst type), BPCER and ACER.

    ``acer`` averages the overall APCER with BPCER; ``acer_max`` uses the
    worst attack type instead.
    """
    t = float(getattr(th, "value", th))
    apcer, bpcer = error_rates(scores, t)
    types = sorted({a for a in scores.attack_types if a is not None})
    per_type = {}
    for a in types:
        mask = np.array([lab == a for lab in scores.labels])
        per_type[a] = float(np.mean(scores.scores[mask] >= t))
    apcer_max = max(per_type.values())
    return {"apcer": apcer, "apcer_per_type": per_type, "apcer_max": apcer_max,
            "bpcer": bpcer, "acer": 0.5 * (apcer + bpcer),
            "acer_max": 0.5 * (apcer_max + bpcer)}


def accuracy(scores: ScoreSet, th) -> float:
    t = float(getattr(th, "value", th))
    return float(np.mean((scores.scores >= t) == scores.genuine))


def tdr_at_fdr(scores: ScoreSet, fdr_targets: Sequence[float]) -> list[float]:
    """Attack detection rate at each false-detection-rate target.

    Uses the loosest operating point with FDR <= target and interpolates
    linearly towards the next point when the target falls between two.
    """
    _, far, frr = _roc_arrays(scores)
    tdr, fdr = 1.0 - far, frr
    out = []
    for target in fdr_targets:
        if not 0 <= target <= 1:
            raise ValueError(f"FDR target {target} outside [0, 1]")
        i = np.flatnonzero(fdr <= target)[-1]
        if fdr[i] == target or i == len(fdr) - 1:
            out.append(float(tdr[i]))
        else:
            w = (target - fdr[i]) / (fdr[i + 1] - fdr[i])
            out.append(float(tdr[i] + w * (tdr[i + 1] - tdr[i])))
    return out


def auc(scores: ScoreSet) -> float:
    """Trapezoidal area under (FAR, 1 - FRR); equals the Mann-Whitney
    statistic with ties counted as one half."""
    _, far, frr = _roc_arrays(scores)
    x, y = far[::-1], (1.0 - frr)[::-1]
    return float(np.sum(np.diff(x) * 0.5 * (y[1:] + y[:-1])))


def report(scores: ScoreSet, th: Threshold, tdr_targets=(0.01, 0.05, 0.10, 0.20)) -> dict:
    """All metrics as a JSON-ready dict, including the threshold and its provenance."""
    rates = apcer_bpcer_acer(scores, th)
    e, e_th = eer(scores)
    return {
        "n_samples": len(scores),
        "n_genuine": int(scores.genuine.sum()),
        "threshold": {"value": th.value, "provenance": th.provenance},
        "acc": accuracy(scores, th),
        "hter": hter(scores, th),
        "eer": e,
        "eer_threshold": e_th,
        "auc": auc(scores),
        **rates,
        "tdr_at_fdr": {f"{t:g}": v for t, v in zip(tdr_targets, tdr_at_fdr(scores, tdr_targets))},
    }


# -- protocols ------------------------------------------------------------------

def loocv_protocol(dataset, runner: Callable) -> dict:
    """Leave-one-subject-out: ``runner(train_items, test_items)`` returns a dict
    of metrics per fold; the result averages them (folds in subject order).
    """
    subjects = sorted({item.subject for item in dataset})
    if len(subjects) < 3:
        raise ValueError(f"LOOCV needs at least 3 subjects, got {len(subjects)}")
    folds = []
    for held in subjects:
        train = [x for x in dataset if x.subject != held]
        test = [x for x in dataset if x.subject == held]
        folds.append(runner(train, test))
    keys = folds[0].keys()
    out = {k: float(np.mean([f[k] for f in folds])) for k in keys}
    out["n_folds"] = len(folds)
    return out


PROTOCOLS = ("subjects", "postures", "attack-types")


def split_subjects(subjects, seed=0, dev_fraction=0.2, test_fraction=0.2):
    """Deterministic subject-disjoint train/dev/test partition of subject ids."""
    subjects = sorted(set(subjects))
    n = len(subjects)
    n_test = max(1, int(round(test_fraction * n)))
    n_dev = max(1, int(round(dev_fraction * n)))
    if n - n_test - n_dev < 1:
        raise ValueError(f"{n} subjects are too few for a train/dev/test split")
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [subjects[i] for i in order]
    return {"test": sorted(shuffled[:n_test]),
            "dev": sorted(shuffled[n_test:n_test + n_dev]),
            "train": sorted(shuffled[n_test + n_dev:])}


def make_splits(samples, protocol="subjects", seed=0, dev_fraction=0.2, test_fraction=0.2):
    """Split samples by protocol; subjects never appear in two splits.

    ``subjects``: all samples of a subject go to its split.
    ``postures``: train/dev keep session 0 only, test keeps the other sessions.
    ``attack-types``: train/dev see genuine + mask, test genuine + print + replay.
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}; choose from {PROTOCOLS}")
    groups = split_subjects([s.subject for s in samples], seed, dev_fraction, test_fraction)
    where = {subj: name for name, subs in groups.items() for subj in subs}

    def keep(s, split):
        if protocol == "postures":
            return (s.session == 0) == (split != "test")
        if protocol == "attack-types":
            allowed = ("genuine", "mask") if split != "test" else ("genuine", "print", "replay")
            return s.label in allowed
        return True

    out = {name: [s for s in samples if where[s.subject] == name and keep(s, name)]
           for name in ("train", "dev", "test")}
    check_disjoint(out)
    return out


def check_disjoint(splits: dict) -> None:
    seen = {}
    for name, items in splits.items():
        for s in items:
            other = seen.setdefault(s.subject, name)
            if other != name:
                raise ValueError(f"subject {s.subject} appears in both {other} and {name}")


def split_manifest(splits: dict) -> dict:
    return {name: {"subjects": sorted({s.subject for s in items}),
                   "labels": sorted({s.label for s in items}),
                   "n_samples": len(items)}
            for name, items in splits.items()}
