"""Enrollment, trial lists and the cosine / two-covariance scoring backends."""

from collections import defaultdict
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ContractError, require
from .synthdata import enroll_key


@dataclass(frozen=True)
class Trial:
    enroll_id: str
    test_utt_id: str
    is_target: bool


@dataclass(frozen=True)
class EnrollmentModel:
    speaker_id: int
    style_id: int
    vector: np.ndarray

    @property
    def key(self):
        return enroll_key(self.speaker_id, self.style_id)


@dataclass(frozen=True)
class ScoreRecord:
    enroll_id: str
    test_utt_id: str
    score: float
    is_target: bool


def _unit(x, what="vector"):
    x = np.asarray(x, dtype=np.float64)
    norm = np.linalg.norm(x)
    if not norm > 0:
        raise ContractError(f"zero-norm {what}")
    return x / norm


def enroll(embeddings, speaker_id=-1, style_id=-1) -> EnrollmentModel:
    """Length-normalize each embedding, average, and re-normalize."""
    embs = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    require(embs.shape[0] >= 1, "enrollment needs at least one embedding")
    units = np.stack([_unit(e, "enrollment embedding") for e in embs])
    return EnrollmentModel(speaker_id, style_id, _unit(units.mean(axis=0), "enrollment mean"))


def enrollment_utterances(corpus):
    """Map enrollment key to the keys of the utterances it is built from."""
    cells = defaultdict(list)
    for u in corpus:
        if u.is_enroll:
            cells[u.enroll_key].append(u.key)
    return dict(cells)


def enroll_all(corpus, embeddings):
    """Enrollment models for every speaker-style cell with enroll utterances.

    ``embeddings`` maps utterance key to vector.
    """
    models = {}
    meta = {u.key: u for u in corpus}
    for key, utt_keys in sorted(enrollment_utterances(corpus).items()):
        u = meta[utt_keys[0]]
        models[key] = enroll([embeddings[k] for k in utt_keys], u.speaker_id, u.style_id)
    return models


def build_trials(corpus, enroll_style, test_style):
    """All enrollment x test pairs for one (enroll style, test style) cell.

    Enrollments are ordered by key and test utterances by corpus order. A
    pair is dropped when the test utterance is part of the enrollment.
    """
    styles = {u.style_id for u in corpus}
    require(enroll_style in styles and test_style in styles,
            f"styles {enroll_style}/{test_style} not both present in corpus")
    enrolls = {k: v for k, v in enrollment_utterances(corpus).items()}
    speaker_of = {u.key: u.speaker_id for u in corpus}
    tests = [u for u in corpus if u.is_test and u.style_id == test_style]
    trials = []
    for ekey in sorted(enrolls):
        members = enrolls[ekey]
        first = next(u for u in corpus if u.key == members[0])
        if first.style_id != enroll_style:
            continue
        for t in tests:
            if t.key in members:
                continue
            trials.append(Trial(ekey, t.key, speaker_of[members[0]] == t.speaker_id))
    if not trials:
        raise ContractError(f"no trials for enroll style {enroll_style}, test style {test_style}")
    return trials


def build_trial_grid(corpus):
    """Trials for every (enroll style, test style) pair, concatenated."""
    styles = sorted({u.style_id for u in corpus if u.split != "train"})
    trials = []
    for e in styles:
        for t in styles:
            try:
                trials.extend(build_trials(corpus, e, t))
            except ContractError:
                continue
    return trials


def cosine_score(enrollment, test_embedding) -> float:
    vec = enrollment.vector if isinstance(enrollment, EnrollmentModel) else enrollment
    return float(np.clip(_unit(vec, "enrollment") @ _unit(test_embedding, "test embedding"), -1.0, 1.0))


@dataclass(frozen=True)
class TwoCovModel:
    """Gaussian two-covariance model: ``x = y + e``, ``y ~ N(mu, B)``, ``e ~ N(0, W)``."""

    mu: np.ndarray
    B: np.ndarray
    W: np.ndarray

    @cached_property
    def _terms(self):
        d = self.mu.size
        total = self.B + self.W
        joint = np.block([[total, self.B], [self.B, total]])
        try:
            np.linalg.cholesky(self.W)
            joint_inv = np.linalg.inv(joint)
            total_inv = np.linalg.inv(total)
        except np.linalg.LinAlgError as exc:
            raise ContractError(f"singular two-covariance model: {exc}") from None
        P, Q = joint_inv[:d, :d], joint_inv[:d, d:]
        _, logdet_joint = np.linalg.slogdet(joint)
        _, logdet_total = np.linalg.slogdet(total)
        return P - total_inv, Q, logdet_total - 0.5 * logdet_joint

    def score(self, e1, e2) -> float:
        """Same-speaker vs different-speaker log-likelihood ratio."""
        a = np.asarray(e1, dtype=np.float64) - self.mu
        b = np.asarray(e2, dtype=np.float64) - self.mu
        R, Q, const = self._terms
        return float(-0.5 * (a @ R @ a + b @ R @ b + 2.0 * a @ Q @ b) + const)


def fit_two_cov(embeddings, speakers, reg=1e-6) -> TwoCovModel:
    """Closed-form two-covariance fit.

    ``W`` is the within-speaker scatter divided by its degrees of freedom
    (``n - n_speakers``) plus ``reg * I``; ``B`` is the scatter of speaker
    means around the global mean, averaged over speakers.
    """
    x = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    speakers = np.asarray(speakers)
    require(x.shape[0] == speakers.shape[0], "embeddings and labels differ in length")
    ids, counts = np.unique(speakers, return_counts=True)
    require(ids.size >= 2, "two-covariance fit needs at least two speakers")
    require(counts.max() >= 2, "two-covariance fit needs a speaker with two embeddings")
    mu = x.mean(axis=0)
    d = x.shape[1]
    S_w = np.zeros((d, d))
    means = np.empty((ids.size, d))
    for i, s in enumerate(ids):
        xs = x[speakers == s]
        means[i] = xs.mean(axis=0)
        c = xs - means[i]
        S_w += c.T @ c
    W = S_w / (x.shape[0] - ids.size) + reg * np.eye(d)
    dm = means - mu
    B = dm.T @ dm / ids.size
    return TwoCovModel(mu, B, W)


def two_cov_score(model: TwoCovModel, enroll_vec, test_vec) -> float:
    return model.score(enroll_vec, test_vec)


def score_trials(trials, enrollments, test_embeddings, backend="cosine", two_cov=None):
    """Score trials in order.

    ``enrollments`` maps enrollment key to :class:`EnrollmentModel` (or a
    vector), ``test_embeddings`` maps utterance key to vector. The
    ``twocov`` backend length-normalizes the test embedding and needs a
    fitted ``two_cov`` model. Returns ``(ScoreSet, records)``.
    """
    from .metrics import ScoreSet

    if backend == "cosine":
        fn = cosine_score
    elif backend == "twocov":
        require(two_cov is not None, "twocov backend needs a fitted model")
        def fn(e, t):
            vec = e.vector if isinstance(e, EnrollmentModel) else e
            return two_cov.score(vec, _unit(t, "test embedding"))
    else:
        raise ContractError(f"unknown backend {backend!r}")
    records = []
    for tr in trials:
        if tr.enroll_id not in enrollments:
            raise ContractError(f"unresolved enrollment key {tr.enroll_id}")
        if tr.test_utt_id not in test_embeddings:
            raise ContractError(f"unresolved test key {tr.test_utt_id}")
        s = fn(enrollments[tr.enroll_id], test_embeddings[tr.test_utt_id])
        records.append(ScoreRecord(tr.enroll_id, tr.test_utt_id, s, tr.is_target))
    scores = np.array([r.score for r in records])
    labels = np.array([r.is_target for r in records], dtype=bool)
    return ScoreSet(scores[labels], scores[~labels]), records
