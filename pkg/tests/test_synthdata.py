from collections import Counter
from dataclasses import replace

import numpy as np
import pytest

from cllrce.errors import ContractError
from cllrce.scoring import build_trials
from cllrce.synthdata import CorpusSpec, generate_corpus, mixing_matrix, split_corpus


@pytest.fixture(scope="module")
def default_corpus():
    return generate_corpus(CorpusSpec())


def test_spec_validation():
    with pytest.raises(ContractError):
        CorpusSpec(feature_dim=4, latent_dim=8)
    with pytest.raises(ContractError):
        CorpusSpec(frame_noise=-1.0)
    with pytest.raises(ContractError):
        CorpusSpec(frames_per_utt=(10, 5))


def test_mixing_matrix_orthonormal():
    A = mixing_matrix(CorpusSpec())
    assert A.shape == (24, 8)
    np.testing.assert_allclose(A.T @ A, np.eye(8), atol=1e-12)


def test_zero_variance_collapse():
    spec = CorpusSpec(n_speakers=3, n_styles=3, utts_per_speaker_style=1, style_shift_scale=0.0,
                      frame_noise=0.0, n_eval_speakers=0, frames_per_utt=(5, 8))
    corpus = generate_corpus(spec)
    for s in range(3):
        frames = np.concatenate([u.features for u in corpus if u.speaker_id == s])
        np.testing.assert_allclose(frames, np.broadcast_to(frames[0], frames.shape), atol=1e-15)


def test_no_speaker_information():
    spec = CorpusSpec(n_speakers=4, n_styles=1, speaker_scale=0.0, style_shift_scale=0.0,
                      frame_noise=0.0, n_eval_speakers=0, frames_per_utt=(3, 3))
    corpus = generate_corpus(spec)
    ref = corpus[0].features[0]
    for u in corpus:
        np.testing.assert_allclose(u.features, np.broadcast_to(ref, u.features.shape), atol=1e-15)


def test_cell_means_monte_carlo(default_corpus):
    spec = CorpusSpec()
    A = mixing_matrix(spec)
    proj = A @ A.T
    for (s, t) in [(0, 0), (7, 2), (55, 1)]:
        frames = np.concatenate([u.features for u in default_corpus if u.speaker_id == s and u.style_id == t])
        n = frames.shape[0]
        mean = frames.mean(axis=0)
        # the cell mean lives in the column space of A, up to frame noise
        off_subspace = mean - proj @ mean
        assert np.all(np.abs(off_subspace) < 3 * spec.frame_noise / np.sqrt(n))
        # frame deviations have the stated noise level
        assert frames.std(axis=0).mean() == pytest.approx(spec.frame_noise, rel=0.1)


def test_within_cell_covariance_converges():
    spec = CorpusSpec(n_speakers=1, n_styles=1, utts_per_speaker_style=1, frames_per_utt=(100_000, 100_000),
                      feature_dim=6, latent_dim=3, frame_noise=1.5, n_eval_speakers=0)
    frames = generate_corpus(spec)[0].features
    cov = np.cov(frames, rowvar=False)
    target = spec.frame_noise**2 * np.eye(6)
    assert np.linalg.norm(cov - target) / np.linalg.norm(target) < 0.05


def test_deterministic(default_corpus):
    again = generate_corpus(CorpusSpec())
    assert len(again) == len(default_corpus)
    for a, b in zip(default_corpus, again):
        assert (a.key, a.split) == (b.key, b.split)
        assert a.features.tobytes() == b.features.tobytes()


def test_seed_changes_data_not_shapes(default_corpus):
    other = generate_corpus(CorpusSpec(seed=1))
    assert [u.key for u in other] == [u.key for u in default_corpus]
    assert Counter(u.split for u in other) == Counter(u.split for u in default_corpus)
    assert not np.array_equal(other[0].features[:5], default_corpus[0].features[:5])
    lo, hi = CorpusSpec().frames_per_utt
    assert all(lo <= u.features.shape[0] <= hi for u in other)


def test_counts(default_corpus):
    splits = Counter(u.split for u in default_corpus)
    assert splits == {"train": 50 * 3 * 4, "enroll": 20 * 3 * 2, "test": 20 * 3 * 2}
    assert {u.speaker_id for u in default_corpus if u.split == "train"}.isdisjoint(
        {u.speaker_id for u in default_corpus if u.split != "train"})


class TestSplit:
    def test_two_per_cell(self):
        spec = CorpusSpec(n_speakers=2, n_eval_speakers=3, utts_per_speaker_style=2, frames_per_utt=(3, 4))
        corpus = generate_corpus(spec)
        cells = Counter((u.speaker_id, u.style_id, u.split) for u in corpus if u.split != "train")
        assert set(cells.values()) == {1}
        assert len(cells) == 3 * 3 * 2

    def test_single_utterance_needs_reuse(self):
        spec = CorpusSpec(n_speakers=2, n_eval_speakers=2, utts_per_speaker_style=1, frames_per_utt=(3, 4))
        raw = generate_corpus(spec, split=False)
        with pytest.raises(ContractError, match="speaker 2 style 0"):
            split_corpus(raw, 0.5)
        reused = split_corpus(raw, 0.5, allow_reuse=True)
        assert {u.split for u in reused if u.speaker_id >= 2} == {"both"}

    def test_enroll_test_disjoint(self, default_corpus):
        enroll = {u.key for u in default_corpus if u.split == "enroll"}
        test = {u.key for u in default_corpus if u.split == "test"}
        assert enroll and test and enroll.isdisjoint(test)

    def test_every_style_pair_has_both_trial_kinds(self, default_corpus):
        for e in range(3):
            for t in range(3):
                trials = build_trials(default_corpus, e, t)
                assert any(tr.is_target for tr in trials)
                assert any(not tr.is_target for tr in trials)

    def test_split_is_seeded(self):
        raw = generate_corpus(replace(CorpusSpec(), n_speakers=2, frames_per_utt=(3, 3)), split=False)
        a = [u.split for u in split_corpus(raw, 0.5, seed=4)]
        b = [u.split for u in split_corpus(raw, 0.5, seed=4)]
        c = [u.split for u in split_corpus(raw, 0.5, seed=5)]
        assert a == b and a != c
