"""Seeded minibatch training with Adam and a selectable loss."""

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import model as mdl
from .errors import require
from .losses import LOSSES, get_loss
from .synthdata import train_utterances

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    loss_kind: str = "cllr_ce"
    batch_size: int = 128
    epochs: int = 100
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        require(self.loss_kind in LOSSES, f"loss_kind must be one of {sorted(LOSSES)}, got {self.loss_kind!r}")
        require(self.batch_size >= 2, "batch_size must be >= 2")
        require(self.epochs >= 1, "epochs must be >= 1")
        require(self.learning_rate > 0, "learning_rate must be positive")
        require(0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1, "Adam betas must be in [0, 1)")
        require(self.adam_eps > 0, "adam_eps must be positive")

    def to_dict(self):
        return asdict(self)


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


@dataclass
class TrainHistory:
    epoch_loss: list = field(default_factory=list)
    epoch_accuracy: list = field(default_factory=list)
    step_loss: list = field(default_factory=list)
    wall_time: float = 0.0

    def to_dict(self):
        # wall time is left out so history files are reproducible byte-for-byte
        return {"epoch_loss": self.epoch_loss, "epoch_accuracy": self.epoch_accuracy, "step_loss": self.step_loss}


def adam_step(params, grads, state: AdamState, config: TrainConfig):
    """One bias-corrected Adam update. Returns new ``(params, state)``."""
    for name, g in grads.items():
        require(g.shape == params[name].shape, f"gradient shape mismatch for {name}")
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient in {name} at step {state.step + 1}")
    b1, b2 = config.adam_beta1, config.adam_beta2
    t = state.step + 1
    new_params, m, v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        m[name] = b1 * state.m.get(name, 0.0) + (1 - b1) * g
        v[name] = b2 * state.v.get(name, 0.0) + (1 - b2) * g * g
        m_hat = m[name] / (1 - b1**t)
        v_hat = v[name] / (1 - b2**t)
        new_params[name] = p - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)
    return new_params, AdamState(t, m, v)


def make_batches(speakers, batch_size, rng):
    """Shuffle indices into batches that each hold at least two speakers.

    A trailing batch smaller than 2 is merged into the previous one. A
    single-speaker batch swaps one element with the nearest batch that can
    give it a different speaker; the repair is deterministic.
    """
    speakers = np.asarray(speakers)
    order = rng.permutation(len(speakers))
    batches = [list(order[i:i + batch_size]) for i in range(0, len(order), batch_size)]
    if len(batches) > 1 and len(batches[-1]) < 2:
        batches[-2].extend(batches.pop())
    if np.unique(speakers).size < 2:
        return batches
    for bi, batch in enumerate(batches):
        if np.unique(speakers[batch]).size >= 2:
            continue
        own = speakers[batch[0]]
        for bj in sorted(range(len(batches)), key=lambda j: (abs(j - bi), j)):
            if bj == bi:
                continue
            other = batches[bj]
            cand = [k for k, idx in enumerate(other) if speakers[idx] != own]
            if not cand:
                continue
            # donor must keep two speakers after the swap
            for k in cand:
                rest = [speakers[idx] for n, idx in enumerate(other) if n != k] + [own]
                if len(set(rest)) >= 2:
                    batch[-1], other[k] = other[k], batch[-1]
                    break
            else:
                continue
            break
        if len(batches) == 1:
            break
    return batches


def train(corpus, model_config: mdl.ModelConfig, train_config: TrainConfig, callback=None, params=None):
    """Train an embedding extractor on the ``train`` split of ``corpus``.

    Training speaker ids are mapped to class indices in sorted order.
    ``callback(step, logits, labels, loss_output)`` is called after every
    loss evaluation, before the update. Returns ``(params, history, state)``.
    """
    utts = train_utterances(corpus)
    require(len(utts) >= 2, "training split needs at least two utterances")
    spk_ids = sorted({u.speaker_id for u in utts})
    require(len(spk_ids) == model_config.n_speakers,
            f"corpus has {len(spk_ids)} training speakers, model expects {model_config.n_speakers}")
    index = {s: i for i, s in enumerate(spk_ids)}
    labels = np.array([index[u.speaker_id] for u in utts], dtype=np.int64)
    feats = [u.features for u in utts]
    conds = None
    if model_config.pooling == "attn":
        conds = np.stack([mdl.condition_vector(f, model_config.condition_dim) for f in feats])

    loss_fn = get_loss(train_config.loss_kind)
    rng = np.random.default_rng([train_config.seed, 7])
    if params is None:
        params = mdl.init_params(model_config, seed=train_config.seed)
    state = AdamState()
    history = TrainHistory()
    t0 = time.perf_counter()
    for epoch in range(train_config.epochs):
        losses, correct = [], 0
        for batch in make_batches(labels, train_config.batch_size, rng):
            batch_conds = conds[batch] if conds is not None else None
            _, logits, cache = mdl.forward(params, model_config, [feats[i] for i in batch], batch_conds)
            out = loss_fn(logits, labels[batch])
            if callback is not None:
                callback(state.step, logits, labels[batch], out)
            grads = mdl.backward(params, model_config, cache, out.grad)
            params, state = adam_step(params, grads, state, train_config)
            losses.append(out.value)
            history.step_loss.append(out.value)
            correct += int(np.sum(logits.argmax(axis=1) == labels[batch]))
        history.epoch_loss.append(float(np.mean(losses)))
        history.epoch_accuracy.append(correct / len(utts))
        log.debug("epoch %d loss %.4f acc %.3f", epoch + 1, history.epoch_loss[-1], history.epoch_accuracy[-1])
    history.wall_time = time.perf_counter() - t0
    return params, history, state
