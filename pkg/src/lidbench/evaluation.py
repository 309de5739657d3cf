"""Detection trials, DET curves, EER and the average detection cost C_avg."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.special import ndtri

P_TARGET = 0.5


@dataclass
class TrialScores:
    languages: list
    utt_ids: list = field(default_factory=list)
    true_languages: list = field(default_factory=list)
    scores: np.ndarray = None  # (n_utts, n_languages)

    def __post_init__(self):
        self.languages = list(self.languages)
        if self.scores is None:
            self.scores = np.zeros((0, len(self.languages)))
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1, len(self.languages))
        if len(self.utt_ids) != len(self.scores) or len(self.true_languages) != len(self.scores):
            raise ValueError("utt_ids, true_languages and score rows must align")
        unknown = [lang for lang in self.true_languages if lang not in self.languages]
        if unknown:
            raise ValueError(f"true language {unknown[0]!r} is not in the score header")

    def __len__(self):
        return len(self.utt_ids)

    def labels(self) -> np.ndarray:
        index = {lang: i for i, lang in enumerate(self.languages)}
        return np.array([index[lang] for lang in self.true_languages], dtype=np.int64)


@dataclass
class DetCurve:
    thresholds: np.ndarray
    p_fa: np.ndarray
    p_miss: np.ndarray
    n_target: int
    n_nontarget: int


@dataclass
class CavgBreakdown:
    languages: list
    p_miss: np.ndarray          # per target language
    p_fa: np.ndarray            # [target, nontarget]; diagonal unused (nan)
    p_target: float
    p_nontarget: float
    c_avg: float


def pool_trials(scores: TrialScores) -> tuple[np.ndarray, np.ndarray]:
    """Language-pooled detection trials: one target and N-1 nontarget scores per utterance."""
    if len(scores) == 0:
        raise ValueError("no trials to pool")
    labels = scores.labels()
    is_target = np.zeros(scores.scores.shape, dtype=bool)
    is_target[np.arange(len(labels)), labels] = True
    return scores.scores[is_target], scores.scores[~is_target]


def det_curve(targets, nontargets) -> DetCurve:
    """Operating points at every distinct score, thresholds descending (accept iff score >= t).

    The first point (threshold +inf) accepts nothing; the last accepts everything.
    """
    tar = np.asarray(targets, dtype=np.float64)
    non = np.asarray(nontargets, dtype=np.float64)
    if tar.size == 0 or non.size == 0:
        raise ValueError("DET curve needs nonempty target and nontarget pools")
    thr = np.unique(np.concatenate([tar, non]))[::-1]
    tar_sorted = np.sort(tar)
    non_sorted = np.sort(non)
    accepted_tar = tar.size - np.searchsorted(tar_sorted, thr, side="left")
    accepted_non = non.size - np.searchsorted(non_sorted, thr, side="left")
    p_miss = np.concatenate([[1.0], 1.0 - accepted_tar / tar.size])
    p_fa = np.concatenate([[0.0], accepted_non / non.size])
    return DetCurve(np.concatenate([[np.inf], thr]), p_fa, p_miss, tar.size, non.size)


def eer(curve: DetCurve) -> float:
    """Equal error rate, linearly interpolated between the straddling operating points."""
    diff = curve.p_miss - curve.p_fa  # starts at +1, ends <= 0; nonincreasing
    exact = np.flatnonzero(diff == 0)
    if exact.size:
        return float(curve.p_fa[exact[0]])
    i = int(np.flatnonzero(diff > 0)[-1])
    j = i + 1
    lam = diff[i] / (diff[i] - diff[j])
    return float(curve.p_fa[i] + lam * (curve.p_fa[j] - curve.p_fa[i]))


def compute_eer(targets, nontargets) -> float:
    return eer(det_curve(targets, nontargets))


def c_avg_from_rates(p_miss, p_fa, p_target=P_TARGET) -> float:
    """Average detection cost from per-language miss and pairwise false-alarm rates.

    Plain arithmetic, so exact rationals (``fractions.Fraction``) stay exact.
    """
    n = len(p_miss)
    if n < 2:
        raise ValueError("C_avg needs at least two languages")
    p_non = (1 - p_target) / (n - 1)
    total = 0
    for t in range(n):
        term = p_target * p_miss[t]
        for k in range(n):
            if k != t:
                term += p_non * p_fa[t][k]
        total += term
    return total / n


def c_avg(scores: TrialScores, threshold: float = 0.0, p_target: float = P_TARGET) -> CavgBreakdown:
    n = len(scores.languages)
    if n < 2:
        raise ValueError("C_avg needs at least two languages")
    labels = scores.labels()
    accept = scores.scores >= threshold
    counts = np.bincount(labels, minlength=n)
    missing = [scores.languages[k] for k in range(n) if counts[k] == 0]
    if missing:
        raise ValueError(f"no trials for target language(s) {', '.join(missing)}; C_avg undefined")
    p_miss = np.empty(n)
    p_fa = np.full((n, n), np.nan)
    for t in range(n):
        own = labels == t
        p_miss[t] = np.mean(~accept[own, t])
        for k in range(n):
            if k != t:
                p_fa[t, k] = np.mean(accept[labels == k, t])
    value = c_avg_from_rates(list(p_miss), [list(r) for r in p_fa], p_target)
    return CavgBreakdown(list(scores.languages), p_miss, p_fa, p_target,
                         (1 - p_target) / (n - 1), float(value))


def frames_for_seconds(seconds: float, sample_rate: int = 8000, frame_len: int = 160, hop: int = 80) -> int:
    """Frame count produced by ``seconds`` of audio under the standard framing."""
    n = int(round(seconds * sample_rate))
    return (n - frame_len) // hop + 1


@dataclass
class GridCell:
    train_corpus: str
    test_corpus: str
    duration_s: float
    eer_pct: float
    cavg_x100: float
    n_utts: int
    scores: TrialScores = None
    curve: DetCurve = None

    @property
    def within_corpora(self) -> bool:
        return self.train_corpus == self.test_corpus


def score_set(model, items, duration_s: float | None = None) -> TrialScores:
    """Score ``(utt_id, language, features)`` items, truncating to the first ``duration_s`` seconds.

    Utterances shorter than the duration are skipped.
    """
    from .classifier import score_utterance

    keep = None if duration_s is None else frames_for_seconds(duration_s)
    ids, langs, rows = [], [], []
    for utt_id, lang, x in items:
        v = x.values if hasattr(x, "values") else np.asarray(x)
        if keep is not None:
            if v.shape[1] < keep:
                continue
            v = v[:, :keep]
        ids.append(utt_id)
        langs.append(lang)
        rows.append(score_utterance(model, v))
    return TrialScores(model.languages, ids, langs, np.array(rows).reshape(-1, len(model.languages)))


def evaluate_cell(model, items, duration_s, train_name, test_name, threshold=0.0) -> GridCell:
    scores = score_set(model, items, duration_s)
    if len(scores) == 0:
        raise ValueError(f"no test utterances of at least {duration_s} s for "
                         f"{train_name} -> {test_name}")
    curve = det_curve(*pool_trials(scores))
    cost = c_avg(scores, threshold)
    return GridCell(train_name, test_name, duration_s, 100.0 * eer(curve), 100.0 * cost.c_avg,
                    len(scores), scores, curve)


def evaluate_matrix(models: Mapping, test_sets: Mapping, durations: Sequence[float] = (3, 6, 9),
                    threshold: float = 0.0) -> list[GridCell]:
    """Every (train corpus, test corpus, duration) cell, in model/test/duration order."""
    cells = []
    for train_name, model in models.items():
        for test_name, items in test_sets.items():
            for d in durations:
                cells.append(evaluate_cell(model, items, d, train_name, test_name, threshold))
    return cells


def write_scores(scores: TrialScores, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["utt_id", "true_language", *scores.languages])
        for utt, lang, row in zip(scores.utt_ids, scores.true_languages, scores.scores):
            w.writerow([utt, lang, *(f"{v:.12g}" for v in row)])


def read_scores(path) -> TrialScores:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    if not rows or rows[0][:2] != ["utt_id", "true_language"]:
        raise ValueError(f"{path}: missing score-file header")
    langs = rows[0][2:]
    body = rows[1:]
    return TrialScores(langs, [r[0] for r in body], [r[1] for r in body],
                       np.array([[float(v) for v in r[2:]] for r in body]).reshape(-1, len(langs)))


def check_det_monotone(curve: DetCurve) -> None:
    if np.any(np.diff(curve.p_fa) < 0) or np.any(np.diff(curve.p_miss) > 0):
        raise AssertionError("DET curve violates monotonicity")


def write_det(curve: DetCurve, path) -> None:
    check_det_monotone(curve)
    clip = 1e-6
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "p_fa", "p_miss", "probit_fa", "probit_miss"])
        for t, fa, miss in zip(curve.thresholds, curve.p_fa, curve.p_miss):
            w.writerow([f"{t:.12g}", f"{fa:.12g}", f"{miss:.12g}",
                        f"{ndtri(np.clip(fa, clip, 1 - clip)):.9g}",
                        f"{ndtri(np.clip(miss, clip, 1 - clip)):.9g}"])


GRID_HEADER = ["train_corpus", "test_corpus", "duration_s", "eer_pct", "cavg_x100", "within_corpora"]


def write_grid(cells: Sequence[GridCell], path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GRID_HEADER)
        for c in cells:
            w.writerow([c.train_corpus, c.test_corpus, f"{c.duration_s:g}", f"{c.eer_pct:.4f}",
                        f"{c.cavg_x100:.4f}", int(c.within_corpora)])


def read_grid(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
