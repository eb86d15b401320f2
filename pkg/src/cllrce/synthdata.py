"""Seeded synthetic multi-speaker, multi-style corpus.

Each frame is generated as::

    frame = A @ (speaker + style + speaker_style) + noise

where ``speaker ~ N(0, speaker_scale^2 I)``, ``style ~ N(0,
style_shift_scale^2 I)`` is shared by every speaker, ``speaker_style ~
N(0, (style_shift_scale / 2)^2 I)`` is a per-speaker interaction, and
``A`` has orthonormal columns so latent distances carry over to feature
space. Training speakers and held-out evaluation speakers are disjoint.
"""

from collections import defaultdict
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ContractError, require

SPLITS = ("train", "enroll", "test", "both")


@dataclass(frozen=True)
class CorpusSpec:
    n_speakers: int = 50
    n_styles: int = 3
    utts_per_speaker_style: int = 4
    frames_per_utt: tuple = (200, 300)
    feature_dim: int = 24
    latent_dim: int = 8
    style_shift_scale: float = 0.6
    speaker_scale: float = 1.0
    frame_noise: float = 1.0
    seed: int = 0
    n_eval_speakers: int = 20
    enroll_fraction: float = 0.5
    allow_reuse: bool = False

    def __post_init__(self):
        object.__setattr__(self, "frames_per_utt", tuple(int(x) for x in self.frames_per_utt))
        self.validate()

    def validate(self):
        for name in ("n_speakers", "n_styles", "utts_per_speaker_style", "feature_dim", "latent_dim"):
            require(getattr(self, name) >= 1, f"{name} must be >= 1")
        require(self.n_eval_speakers >= 0, "n_eval_speakers must be >= 0")
        lo, hi = self.frames_per_utt
        require(1 <= lo <= hi, f"invalid frame range {self.frames_per_utt}")
        require(self.feature_dim >= self.latent_dim, "feature_dim must be >= latent_dim")
        for name in ("style_shift_scale", "speaker_scale", "frame_noise"):
            require(getattr(self, name) >= 0, f"{name} must be >= 0")
        require(0.0 < self.enroll_fraction < 1.0, "enroll_fraction must be in (0, 1)")

    def to_dict(self):
        d = asdict(self)
        d["frames_per_utt"] = list(self.frames_per_utt)
        return d


@dataclass
class Utterance:
    key: str
    features: np.ndarray = field(repr=False)
    speaker_id: int
    style_id: int
    split: str

    @property
    def enroll_key(self):
        return enroll_key(self.speaker_id, self.style_id)

    @property
    def is_enroll(self):
        return self.split in ("enroll", "both")

    @property
    def is_test(self):
        return self.split in ("test", "both")


def utt_key(speaker, style, index):
    return f"spk{speaker:04d}-s{style}-u{index:02d}"


def enroll_key(speaker, style):
    return f"spk{speaker:04d}-s{style}"


def mixing_matrix(spec: CorpusSpec) -> np.ndarray:
    """The seeded ``feature_dim x latent_dim`` matrix with orthonormal columns."""
    rng = np.random.default_rng([spec.seed, 1])
    q, r = np.linalg.qr(rng.standard_normal((spec.feature_dim, spec.latent_dim)))
    # fix column signs so the factorization is unique
    return q * np.sign(np.diag(r))


def latent_means(spec: CorpusSpec):
    """Latent speaker, style and interaction offsets, drawn in a fixed order.

    Returns ``(speaker, style, interaction)`` with shapes ``(S, d)``,
    ``(T, d)`` and ``(S, T, d)``, where ``S`` counts training and
    evaluation speakers together.
    """
    rng = np.random.default_rng([spec.seed, 2])
    n_spk = spec.n_speakers + spec.n_eval_speakers
    d = spec.latent_dim
    spk = rng.normal(0.0, spec.speaker_scale, size=(n_spk, d))
    sty = rng.normal(0.0, spec.style_shift_scale, size=(spec.n_styles, d))
    inter = rng.normal(0.0, spec.style_shift_scale / 2, size=(n_spk, spec.n_styles, d))
    return spk, sty, inter


def generate_corpus(spec: CorpusSpec, split: bool = True):
    """Generate the corpus described by ``spec``.

    Speakers ``0 .. n_speakers-1`` are training speakers; the following
    ``n_eval_speakers`` are held out and assigned to enroll/test via
    :func:`split_corpus` unless ``split`` is False, in which case they are
    all left in the test split.
    """
    spec.validate()
    A = mixing_matrix(spec)
    spk, sty, inter = latent_means(spec)
    rng = np.random.default_rng([spec.seed, 3])
    lo, hi = spec.frames_per_utt
    corpus = []
    for s in range(spk.shape[0]):
        for t in range(spec.n_styles):
            mean = A @ (spk[s] + sty[t] + inter[s, t])
            for u in range(spec.utts_per_speaker_style):
                n_frames = int(rng.integers(lo, hi + 1))
                noise = rng.normal(0.0, spec.frame_noise, size=(n_frames, spec.feature_dim))
                corpus.append(Utterance(
                    key=utt_key(s, t, u),
                    features=mean + noise,
                    speaker_id=s,
                    style_id=t,
                    split="train" if s < spec.n_speakers else "test",
                ))
    if split and spec.n_eval_speakers:
        corpus = split_corpus(corpus, spec.enroll_fraction, seed=spec.seed, allow_reuse=spec.allow_reuse)
    return corpus


def split_corpus(corpus, enroll_fraction=0.5, seed=0, allow_reuse=False):
    """Assign non-training utterances to enroll or test, per speaker-style cell.

    A cell with ``k >= 2`` utterances gets ``round(k * enroll_fraction)``
    enrollment utterances, clipped to ``[1, k-1]``. A single-utterance cell
    is only feasible with ``allow_reuse``, in which case the utterance is
    used for both enrollment and test (split ``"both"``). Returns a new
    list; features are shared, not copied.
    """
    require(0.0 < enroll_fraction < 1.0, "enroll_fraction must be in (0, 1)")
    cells = defaultdict(list)
    for i, utt in enumerate(corpus):
        if utt.split != "train":
            cells[(utt.speaker_id, utt.style_id)].append(i)
    bad = [c for c, idx in sorted(cells.items()) if len(idx) < 2]
    if bad and not allow_reuse:
        listed = ", ".join(f"speaker {s} style {t}" for s, t in bad)
        raise ContractError(f"cannot split single-utterance cells: {listed}")
    rng = np.random.default_rng([seed, 4])
    splits = {}
    for cell, idx in sorted(cells.items()):
        k = len(idx)
        if k == 1:
            splits[idx[0]] = "both"
            continue
        n_enroll = min(max(int(round(k * enroll_fraction)), 1), k - 1)
        order = rng.permutation(k)
        for rank, j in enumerate(order):
            splits[idx[j]] = "enroll" if rank < n_enroll else "test"
    out = []
    for i, utt in enumerate(corpus):
        out.append(Utterance(utt.key, utt.features, utt.speaker_id, utt.style_id, splits.get(i, utt.split)))
    return out


def train_utterances(corpus):
    return [u for u in corpus if u.split == "train"]


def styles_of(corpus):
    return sorted({u.style_id for u in corpus})
