"""Train-embed-score-evaluate runs over the enroll-style x test-style grid."""

from dataclasses import dataclass, field, replace

import numpy as np

from . import model as mdl
from .metrics import DcfParams, evaluate, mcnemar
from .scoring import build_trials, enroll_all, fit_two_cov, score_trials
from .synthdata import CorpusSpec, generate_corpus, train_utterances
from .trainer import TrainConfig, train


@dataclass
class SystemResult:
    name: str
    params: dict = field(repr=False)
    history: object = field(repr=False)
    embeddings: dict = field(repr=False)
    grid: dict = field(repr=False)  # (enroll_style, test_style) -> (records, MetricsReport)

    def mismatched(self, attr):
        return [getattr(rep, attr) for (e, t), (_, rep) in sorted(self.grid.items()) if e != t]

    def matched(self, attr):
        return [getattr(rep, attr) for (e, t), (_, rep) in sorted(self.grid.items()) if e == t]


def model_config_for(spec: CorpusSpec, pooling="stats", **overrides):
    return mdl.ModelConfig(feature_dim=spec.feature_dim, n_speakers=spec.n_speakers, pooling=pooling, **overrides)


def embed_corpus(params, config, corpus):
    vecs = mdl.embed_batch(params, config, [u.features for u in corpus])
    return {u.key: v for u, v in zip(corpus, vecs)}


def score_grid(corpus, embeddings, backend="cosine", dcf=DcfParams()):
    """Score every style pair; returns ``{(e, t): (records, MetricsReport)}``."""
    enrollments = enroll_all(corpus, embeddings)
    two_cov = None
    if backend == "twocov":
        tr = train_utterances(corpus)
        x = np.stack([embeddings[u.key] for u in tr])
        x = x / np.linalg.norm(x, axis=1, keepdims=True)
        two_cov = fit_two_cov(x, [u.speaker_id for u in tr])
    styles = sorted({u.style_id for u in corpus if u.split != "train"})
    grid = {}
    for e in styles:
        for t in styles:
            trials = build_trials(corpus, e, t)
            _, records = score_trials(trials, enrollments, embeddings, backend, two_cov)
            scores = np.array([r.score for r in records])
            labels = np.array([r.is_target for r in records])
            grid[(e, t)] = (records, evaluate(scores, labels, dcf))
    return grid


def run_system(corpus, spec: CorpusSpec, train_config: TrainConfig, pooling="stats", backend="cosine", name=None):
    config = model_config_for(spec, pooling)
    params, history, _ = train(corpus, config, train_config)
    eval_utts = [u for u in corpus if u.split != "train"]
    embeddings = embed_corpus(params, config, eval_utts)
    grid = score_grid(eval_utts, embeddings, backend)
    return SystemResult(name or train_config.loss_kind, params, history, embeddings, grid)


def distance_ratio(corpus, embeddings):
    """Mean intra-speaker / mean inter-speaker cosine distance over all utterance pairs."""
    keys = [u.key for u in corpus if u.key in embeddings]
    spk = np.array([u.speaker_id for u in corpus if u.key in embeddings])
    x = np.stack([embeddings[k] for k in keys])
    x = x / np.linalg.norm(x, axis=1, keepdims=True)
    dist = 1.0 - x @ x.T
    iu = np.triu_indices(len(keys), k=1)
    same = (spk[:, None] == spk[None, :])[iu]
    d = dist[iu]
    return float(d[same].mean() / d[~same].mean())


def compare_grids(grid_a, grid_b):
    """McNemar test per style pair, each system at its own EER threshold."""
    out = {}
    for cell in sorted(grid_a):
        out[cell] = mcnemar(grid_a[cell][1].decisions, grid_b[cell][1].decisions)
    return out


def default_study(seed, losses=("ce", "cllr_ce"), pooling="stats", spec=None, **train_overrides):
    """One seed of the CE-vs-CllrCE style-grid comparison on the default corpus."""
    spec = replace(spec or CorpusSpec(), seed=seed)
    corpus = generate_corpus(spec)
    results = {}
    for loss in losses:
        tc = TrainConfig(loss_kind=loss, seed=seed, **train_overrides)
        res = run_system(corpus, spec, tc, pooling=pooling)
        res.ratio = distance_ratio([u for u in corpus if u.split != "train"], res.embeddings)
        results[loss] = res
    return corpus, results
