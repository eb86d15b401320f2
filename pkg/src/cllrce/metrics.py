"""Detection metrics over verification trial scores.

Thresholds follow the acceptance convention used throughout: a trial is
accepted when ``score >= threshold``. Hence at threshold ``t`` the miss
rate is the fraction of target scores ``< t`` and the false-alarm rate is
the fraction of non-target scores ``>= t``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import ContractError, require
from .losses import ScorePartition, cllr_from_scores


@dataclass(frozen=True)
class ScoreSet:
    target_scores: np.ndarray
    nontarget_scores: np.ndarray

    def __post_init__(self):
        tar = np.asarray(self.target_scores, dtype=np.float64).ravel()
        non = np.asarray(self.nontarget_scores, dtype=np.float64).ravel()
        object.__setattr__(self, "target_scores", tar)
        object.__setattr__(self, "nontarget_scores", non)

    def validate(self):
        require(self.target_scores.size > 0, "no target scores")
        require(self.nontarget_scores.size > 0, "no non-target scores")
        require(
            bool(np.all(np.isfinite(self.target_scores)) and np.all(np.isfinite(self.nontarget_scores))),
            "scores must be finite",
        )
        return self

    @classmethod
    def from_trials(cls, scores, is_target):
        scores = np.asarray(scores, dtype=np.float64)
        is_target = np.asarray(is_target, dtype=bool)
        require(scores.shape == is_target.shape, "scores and labels differ in length")
        return cls(scores[is_target], scores[~is_target])


@dataclass(frozen=True)
class DcfParams:
    p_target: float = 0.01
    c_miss: float = 1.0
    c_fa: float = 1.0

    def __post_init__(self):
        require(0.0 < self.p_target < 1.0, f"p_target must be in (0, 1), got {self.p_target}")
        require(self.c_miss > 0 and self.c_fa > 0, "DCF costs must be positive")


@dataclass
class MetricsReport:
    eer: float
    min_dcf: float
    cllr: float
    eer_threshold: float
    n_target: int
    n_nontarget: int
    decisions: np.ndarray = field(repr=False, default=None)

    def to_dict(self):
        return {
            "eer": self.eer,
            "min_dcf": self.min_dcf,
            "cllr": self.cllr,
            "eer_threshold": self.eer_threshold,
            "n_target": self.n_target,
            "n_nontarget": self.n_nontarget,
        }


@dataclass(frozen=True)
class McNemarResult:
    n01: int
    n10: int
    statistic: float
    p_value: float
    method: str

    @property
    def significant(self) -> bool:
        return self.p_value < 0.05


def det_points(scores: ScoreSet):
    """Sweep every distinct score as a threshold, plus the two infinities.

    Returns ``(thresholds, p_miss, p_fa)`` arrays ordered by threshold.
    """
    scores.validate()
    tar = np.sort(scores.target_scores)
    non = np.sort(scores.nontarget_scores)
    thr = np.concatenate([[-np.inf], np.unique(np.concatenate([tar, non])), [np.inf]])
    p_miss = np.searchsorted(tar, thr, side="left") / tar.size
    p_fa = (non.size - np.searchsorted(non, thr, side="left")) / non.size
    return thr, p_miss, p_fa


def _eer_with_threshold(scores: ScoreSet):
    thr, p_miss, p_fa = det_points(scores)
    d = p_miss - p_fa
    exact = np.flatnonzero(d == 0)
    if exact.size:
        i = exact[0]
        t = thr[i] if np.isfinite(thr[i]) else thr[exact[-1]]
        return float(p_miss[i]), float(t)
    # d runs from -1 at -inf to +1 at +inf, so a sign change always exists
    i = int(np.flatnonzero(d < 0)[-1])
    j = i + 1
    alpha = -d[i] / (d[j] - d[i])
    eer = p_miss[i] + alpha * (p_miss[j] - p_miss[i])
    k = i if abs(d[i]) <= abs(d[j]) else j
    if not np.isfinite(thr[k]):
        k = j if k == i else i
    return float(eer), float(thr[k])


def eer(scores: ScoreSet) -> float:
    """Equal error rate, linearly interpolated between bracketing DET points."""
    return _eer_with_threshold(scores)[0]


def eer_threshold(scores: ScoreSet) -> float:
    """Finite sweep threshold closest to the EER crossing."""
    return _eer_with_threshold(scores)[1]


def min_dcf(scores: ScoreSet, params: DcfParams = DcfParams()) -> float:
    _, p_miss, p_fa = det_points(scores)
    dcf = params.p_target * params.c_miss * p_miss + (1 - params.p_target) * params.c_fa * p_fa
    norm = min(params.p_target * params.c_miss, (1 - params.p_target) * params.c_fa)
    return float(dcf.min() / norm)


def cllr_metric(scores: ScoreSet) -> float:
    scores.validate()
    return cllr_from_scores(ScorePartition(scores.target_scores, scores.nontarget_scores))


def decisions_at(scores, is_target, threshold: float) -> np.ndarray:
    """Per-trial correctness of accept/reject decisions at ``threshold``."""
    require(np.isfinite(threshold), "threshold must be finite")
    scores = np.asarray(scores, dtype=np.float64)
    is_target = np.asarray(is_target, dtype=bool)
    require(scores.shape == is_target.shape, "scores and labels differ in length")
    accept = scores >= threshold
    return accept == is_target


def evaluate(scores, is_target, params: DcfParams = DcfParams()) -> MetricsReport:
    """All metrics for one trial list, with decisions at the EER threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    is_target = np.asarray(is_target, dtype=bool)
    ss = ScoreSet.from_trials(scores, is_target).validate()
    e, thr = _eer_with_threshold(ss)
    return MetricsReport(
        eer=e,
        min_dcf=min_dcf(ss, params),
        cllr=cllr_metric(ss),
        eer_threshold=thr,
        n_target=int(ss.target_scores.size),
        n_nontarget=int(ss.nontarget_scores.size),
        decisions=decisions_at(scores, is_target, thr),
    )


EXACT_LIMIT = 25


def mcnemar(correct_a, correct_b, method: str = "auto") -> McNemarResult:
    """McNemar's test on paired per-trial correctness of two systems.

    ``method="auto"`` uses the exact two-sided binomial test when there
    are fewer than 25 discordant pairs and the continuity-corrected
    chi-square test otherwise. ``"exact"`` and ``"chi2"`` force a branch.
    """
    a = np.asarray(correct_a, dtype=bool)
    b = np.asarray(correct_b, dtype=bool)
    require(a.shape == b.shape and a.ndim == 1, "decision vectors differ in length")
    if method not in ("auto", "exact", "chi2"):
        raise ContractError(f"unknown McNemar method {method!r}")
    n01 = int(np.sum(~a & b))
    n10 = int(np.sum(a & ~b))
    n = n01 + n10
    if method == "auto":
        method = "exact" if n < EXACT_LIMIT else "chi2"
    if n == 0:
        return McNemarResult(n01, n10, 0.0, 1.0, _method_name(method))
    if method == "exact":
        k = min(n01, n10)
        p = min(1.0, 2.0 * float(stats.binom.cdf(k, n, 0.5)))
        return McNemarResult(n01, n10, float(k), p, "exact-binomial")
    stat = (abs(n01 - n10) - 1) ** 2 / n
    p = float(stats.chi2.sf(stat, df=1))
    return McNemarResult(n01, n10, float(stat), p, "chi-square-corrected")


def _method_name(method):
    return "exact-binomial" if method == "exact" else "chi-square-corrected"
