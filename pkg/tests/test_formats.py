import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from cllrce import formats as fmt
from cllrce.errors import ContractError
from cllrce.model import ModelConfig, init_params
from cllrce.scoring import ScoreRecord, Trial
from cllrce.synthdata import CorpusSpec, generate_corpus
from cllrce.trainer import TrainConfig

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


class TestArchive:
    @settings(max_examples=40, deadline=None)
    @given(st.lists(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=2, max_side=6), elements=finite),
                    max_size=4))
    def test_round_trip_bit_exact(self, tmp_path_factory, arrays):
        path = tmp_path_factory.mktemp("arc") / "a.arc"
        fmt.write_archive(path, {"kind": "x"}, [({"i": i}, a) for i, a in enumerate(arrays)])
        header, entries = fmt.read_archive(path)
        assert header == {"kind": "x"}
        assert len(entries) == len(arrays)
        for (meta, got), want in zip(entries, arrays):
            assert got.shape == want.shape
            assert got.tobytes() == want.tobytes()

    def test_identical_content_identical_bytes(self, tmp_path):
        a = np.arange(6.0).reshape(2, 3)
        fmt.write_archive(tmp_path / "1", {"b": 1, "a": 2}, [({"k": "x"}, a)])
        fmt.write_archive(tmp_path / "2", {"a": 2, "b": 1}, [({"k": "x"}, a.copy())])
        assert (tmp_path / "1").read_bytes() == (tmp_path / "2").read_bytes()

    def test_bad_magic(self, tmp_path):
        (tmp_path / "bad").write_bytes(b"notanarchive")
        with pytest.raises(ContractError, match="magic"):
            fmt.read_archive(tmp_path / "bad")

    def test_truncated(self, tmp_path):
        fmt.write_archive(tmp_path / "a", {}, [({}, np.ones((3, 3)))])
        data = (tmp_path / "a").read_bytes()
        (tmp_path / "b").write_bytes(data[:-5])
        with pytest.raises(ContractError, match="truncated"):
            fmt.read_archive(tmp_path / "b")

    def test_3d_rejected(self, tmp_path):
        with pytest.raises(ContractError):
            fmt.write_archive(tmp_path / "a", {}, [({}, np.ones((2, 2, 2)))])


def test_corpus_round_trip(tmp_path):
    spec = CorpusSpec(n_speakers=2, n_eval_speakers=2, frames_per_utt=(3, 5))
    corpus = generate_corpus(spec)
    fmt.write_corpus(tmp_path / "c.arc", corpus, spec)
    header, back = fmt.read_corpus(tmp_path / "c.arc")
    assert CorpusSpec(**header["corpus_spec"]) == spec
    for a, b in zip(corpus, back):
        assert (a.key, a.speaker_id, a.style_id, a.split) == (b.key, b.speaker_id, b.style_id, b.split)
        assert a.features.tobytes() == b.features.tobytes()


def test_embeddings_round_trip(tmp_path):
    corpus = generate_corpus(CorpusSpec(n_speakers=2, n_eval_speakers=2, frames_per_utt=(3, 3)))
    rng = np.random.default_rng(0)
    emb = {u.key: rng.normal(size=5) for u in corpus}
    fmt.write_embeddings(tmp_path / "e.arc", corpus, emb)
    _, meta, back = fmt.read_embeddings(tmp_path / "e.arc")
    assert [u.key for u in meta] == [u.key for u in corpus]
    assert all(back[k].tobytes() == v.tobytes() for k, v in emb.items())


def test_checkpoint_round_trip(tmp_path):
    cfg = ModelConfig(feature_dim=4, n_speakers=3, frame_layer_dims=(5,), embedding_dim=2, pooling="attn")
    params = init_params(cfg, seed=1)
    fmt.write_checkpoint(tmp_path / "m.ckpt", params, cfg, 17, TrainConfig(epochs=2))
    back, cfg2, step, header = fmt.read_checkpoint(tmp_path / "m.ckpt")
    assert cfg2 == cfg and step == 17 and header["train_config"]["epochs"] == 2
    assert set(back) == set(params)
    assert all(back[k].tobytes() == params[k].tobytes() for k in params)


def test_checkpoint_kind_checked(tmp_path):
    fmt.write_archive(tmp_path / "x", {"kind": "features"}, [])
    with pytest.raises(ContractError, match="checkpoint"):
        fmt.read_checkpoint(tmp_path / "x")


class TestText:
    def test_trials_round_trip(self, tmp_path):
        trials = [Trial("spk0000-s0", "spk0000-s1-u02", True), Trial("spk0001-s0", "spk0000-s1-u02", False)]
        fmt.write_trials(tmp_path / "t", trials)
        assert (tmp_path / "t").read_text() == (
            "spk0000-s0 spk0000-s1-u02 target\nspk0001-s0 spk0000-s1-u02 nontarget\n")
        assert fmt.read_trials(tmp_path / "t") == trials

    def test_bad_trial_line(self, tmp_path):
        (tmp_path / "t").write_text("a b maybe\n")
        with pytest.raises(ContractError, match=":1:"):
            fmt.read_trials(tmp_path / "t")

    @settings(max_examples=50, deadline=None)
    @given(st.lists(finite, min_size=1, max_size=10))
    def test_scores_round_trip_exact(self, tmp_path_factory, values):
        path = tmp_path_factory.mktemp("s") / "scores"
        recs = [ScoreRecord(f"e{i}", f"t{i}", v, True) for i, v in enumerate(values)]
        fmt.write_scores(path, recs)
        assert [s for _, _, s in fmt.read_scores(path)] == values

    def test_align_missing(self):
        with pytest.raises(ContractError, match="e9 t9"):
            fmt.align_scores([Trial("e9", "t9", True)], [("e1", "t1", 0.0)])

    def test_align_order(self):
        trials = [Trial("a", "x", True), Trial("b", "x", False)]
        vals, labels = fmt.align_scores(trials, [("b", "x", 2.0), ("a", "x", 1.0)])
        assert vals.tolist() == [1.0, 2.0] and labels.tolist() == [True, False]

    @pytest.mark.parametrize("key,style", [("spk0003-s2", 2), ("spk0003-s11-u04", 11), ("nostyle", None)])
    def test_style_of_key(self, key, style):
        assert fmt.style_of_key(key) == style
