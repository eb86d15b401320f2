"""Small x-vector-style embedding extractor with hand-written backprop.

Layout: frame-wise ``tanh`` layers, then either statistics pooling or
conditioned self-attention pooling, then an affine embedding layer and
an affine speaker classifier. Weights are stored ``(in, out)`` so every
affine layer is ``x @ W + b``.

A minibatch is processed as one concatenated ``(total_frames, dim)``
matrix plus per-utterance lengths; pooling reduces over contiguous
segments.
"""

from dataclasses import asdict, dataclass

import numpy as np
from scipy import sparse

from .errors import ContractError, require

EPS = 1e-8
POOLINGS = ("stats", "attn")
N_COND_SUMMARY = 4


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int
    n_speakers: int
    frame_layer_dims: tuple = (64, 64)
    embedding_dim: int = 32
    pooling: str = "stats"
    attention_dim: int = None
    condition_dim: int = None

    def __post_init__(self):
        object.__setattr__(self, "frame_layer_dims", tuple(int(d) for d in self.frame_layer_dims))
        if self.pooling == "attn":
            if self.attention_dim is None:
                object.__setattr__(self, "attention_dim", 32)
            if self.condition_dim is None:
                object.__setattr__(self, "condition_dim", 4)
        self.validate()

    def validate(self):
        require(self.pooling in POOLINGS, f"pooling must be one of {POOLINGS}, got {self.pooling!r}")
        dims = [self.feature_dim, self.embedding_dim, *self.frame_layer_dims]
        require(len(self.frame_layer_dims) >= 1, "need at least one frame layer")
        require(all(d >= 1 for d in dims), "all dimensions must be >= 1")
        require(self.n_speakers >= 2, "need at least two training speakers")
        if self.pooling == "attn":
            require(self.attention_dim >= 1 and self.condition_dim >= 1, "attention dims must be >= 1")
        else:
            require(
                self.attention_dim is None and self.condition_dim is None,
                "attention_dim/condition_dim only apply to attention pooling",
            )

    @property
    def hidden_dim(self):
        return self.frame_layer_dims[-1]

    def to_dict(self):
        d = asdict(self)
        d["frame_layer_dims"] = list(self.frame_layer_dims)
        return d


def param_shapes(config: ModelConfig):
    """Ordered mapping of parameter name to shape."""
    shapes = {}
    fan_in = config.feature_dim
    for i, width in enumerate(config.frame_layer_dims):
        shapes[f"frame{i}.W"] = (fan_in, width)
        shapes[f"frame{i}.b"] = (width,)
        fan_in = width
    h = config.hidden_dim
    if config.pooling == "attn":
        c, a = config.condition_dim, config.attention_dim
        shapes["att.Wg"] = (c, c)
        shapes["att.bg"] = (c,)
        shapes["att.Wc"] = (c, c)
        shapes["att.bc"] = (c,)
        shapes["att.Wh"] = (h + c, a)
        shapes["att.bh"] = (a,)
        shapes["att.v"] = (a,)
    shapes["embed.W"] = (2 * h, config.embedding_dim)
    shapes["embed.b"] = (config.embedding_dim,)
    shapes["cls.W"] = (config.embedding_dim, config.n_speakers)
    shapes["cls.b"] = (config.n_speakers,)
    return shapes


def init_params(config: ModelConfig, seed: int = 0):
    """Uniform fan-in initialization for weights, zeros for biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".b") or name.startswith("att.b"):
            params[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def check_params(params, config: ModelConfig):
    shapes = param_shapes(config)
    missing = sorted(set(shapes) - set(params))
    extra = sorted(set(params) - set(shapes))
    require(not missing and not extra, f"parameter names mismatch: missing {missing}, unexpected {extra}")
    for name, shape in shapes.items():
        require(params[name].shape == shape, f"{name} has shape {params[name].shape}, expected {shape}")


# -- segment helpers -------------------------------------------------------

def _starts(lengths):
    return np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(np.int64)


def _seg_sum(x, lengths):
    # sparse (n_utts, n_frames) indicator product; much faster than reduceat
    n = int(lengths.sum())
    rows = np.repeat(np.arange(lengths.size), lengths)
    ind = sparse.csr_matrix((np.ones(n), (rows, np.arange(n))), shape=(lengths.size, n))
    return ind @ x


def _per_frame(x, lengths):
    return np.repeat(x, lengths, axis=0)


def _lengths_for(h, lengths):
    if lengths is None:
        return np.array([h.shape[0]], dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64)
    require(bool(np.all(lengths >= 1)), "every utterance needs at least one frame")
    require(int(lengths.sum()) == h.shape[0], "lengths do not add up to the frame count")
    return lengths


# -- forward pieces --------------------------------------------------------

def forward_frames(params, features, cache=None):
    """Frame-independent ``tanh`` layers. Returns the last activations."""
    h = np.asarray(features, dtype=np.float64)
    require(h.ndim == 2, f"features must be (frames, dim), got {h.shape}")
    require(h.shape[1] == params["frame0.W"].shape[0],
            f"feature dim {h.shape[1]} != {params['frame0.W'].shape[0]}")
    acts = [h]
    i = 0
    while f"frame{i}.W" in params:
        h = np.tanh(h @ params[f"frame{i}.W"] + params[f"frame{i}.b"])
        acts.append(h)
        i += 1
    if cache is not None:
        cache["acts"] = acts
    return h


def stats_pool(frame_acts, lengths=None, cache=None):
    """Per-utterance mean and population standard deviation, concatenated."""
    h = np.asarray(frame_acts, dtype=np.float64)
    single = lengths is None
    lengths = _lengths_for(h, lengths)
    if lengths.min() < 2:
        raise ContractError("statistics pooling needs at least 2 frames")
    n = lengths[:, None].astype(np.float64)
    mean = _seg_sum(h, lengths) / n
    centered = h - _per_frame(mean, lengths)
    var = _seg_sum(centered**2, lengths) / n
    std = np.sqrt(var + EPS)
    if cache is not None:
        cache.update(centered=centered, std=std, n=n)
    out = np.concatenate([mean, std], axis=1)
    return out[0] if single else out


def _condition_projection(dim):
    if dim == N_COND_SUMMARY:
        return np.eye(N_COND_SUMMARY)
    return np.random.default_rng(20220901).standard_normal((N_COND_SUMMARY, dim)) / 2.0


def frame_entropies(features):
    """Shannon entropy (nats) of the softmax over feature dims, per frame."""
    x = np.asarray(features, dtype=np.float64)
    z = x - x.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return -(np.exp(logp) * logp).sum(axis=1)


def condition_summary(features):
    ent = frame_entropies(features)
    return np.array([ent.mean(), ent.std(), ent.min(), ent.max()])


def condition_vector(features, condition_dim=N_COND_SUMMARY):
    """Utterance-level variability descriptor fed to attention pooling.

    Frame entropies are summarized as (mean, std, min, max) and mapped to
    ``condition_dim`` by a fixed projection (identity when the dim is 4).
    """
    features = np.asarray(features, dtype=np.float64)
    require(features.ndim == 2 and features.shape[0] >= 1, "need at least one frame")
    return condition_summary(features) @ _condition_projection(condition_dim)


def attention_pool(frame_acts, cond, params, lengths=None, cache=None):
    """Self-attention pooling conditioned by a gated condition vector.

    The gated condition ``sigmoid(c Wg + bg) * (c Wc + bc)`` is
    concatenated to every frame before the attention energy
    ``v . tanh([h, c'] Wh + bh)``. Output is the attention-weighted mean
    and standard deviation of the frames.
    """
    h = np.asarray(frame_acts, dtype=np.float64)
    single = lengths is None
    lengths = _lengths_for(h, lengths)
    cond = np.atleast_2d(np.asarray(cond, dtype=np.float64))
    require(cond.shape == (lengths.size, params["att.Wg"].shape[0]),
            f"condition shape {cond.shape} does not match batch")
    require(h.shape[1] + cond.shape[1] == params["att.Wh"].shape[0], "attention input dim mismatch")

    g = _sigmoid(cond @ params["att.Wg"] + params["att.bg"])
    t = cond @ params["att.Wc"] + params["att.bc"]
    cprime = g * t
    inp = np.concatenate([h, _per_frame(cprime, lengths)], axis=1)
    k = np.tanh(inp @ params["att.Wh"] + params["att.bh"])
    energy = k @ params["att.v"]
    # segment softmax
    starts = _starts(lengths)
    emax = np.maximum.reduceat(energy, starts)
    w = np.exp(energy - _per_frame(emax, lengths))
    a = w / _per_frame(np.add.reduceat(w, starts), lengths)

    mean = _seg_sum(a[:, None] * h, lengths)
    centered = h - _per_frame(mean, lengths)
    var = _seg_sum(a[:, None] * centered**2, lengths)
    std = np.sqrt(var + EPS)
    if cache is not None:
        cache.update(cond=cond, g=g, t=t, inp=inp, k=k, a=a, centered=centered, std=std)
    out = np.concatenate([mean, std], axis=1)
    return out[0] if single else out


def _sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


# -- whole network -----------------------------------------------------------

def _batch(features_list):
    feats = [np.asarray(f, dtype=np.float64) for f in features_list]
    require(len(feats) >= 1, "empty batch")
    lengths = np.array([f.shape[0] for f in feats], dtype=np.int64)
    return np.concatenate(feats, axis=0), lengths


def forward(params, config: ModelConfig, features_list, conds=None):
    """Forward a batch of utterances.

    Returns ``(embeddings, logits, cache)``; ``cache`` feeds :func:`backward`.
    ``conds`` may hold precomputed condition vectors for attention pooling.
    """
    x, lengths = _batch(features_list)
    cache = {"lengths": lengths}
    h = forward_frames(params, x, cache)
    pool_cache = {}
    if config.pooling == "attn":
        if conds is None:
            conds = np.stack([condition_vector(f, config.condition_dim) for f in features_list])
        pooled = attention_pool(h, conds, params, lengths, pool_cache)
    else:
        pooled = stats_pool(h, lengths, pool_cache)
    emb = pooled @ params["embed.W"] + params["embed.b"]
    logits = classify(params, emb)
    cache.update(pool=pool_cache, pooled=pooled, emb=emb)
    return emb, logits, cache


def embed(params, config: ModelConfig, features, cond=None):
    """Embedding of one utterance."""
    emb, _, _ = forward(params, config, [features], None if cond is None else np.atleast_2d(cond))
    return emb[0]


def embed_batch(params, config: ModelConfig, features_list, batch_size=64):
    out = []
    for i in range(0, len(features_list), batch_size):
        emb, _, _ = forward(params, config, features_list[i:i + batch_size])
        out.append(emb)
    return np.concatenate(out, axis=0)


def classify(params, embedding):
    return np.asarray(embedding, dtype=np.float64) @ params["cls.W"] + params["cls.b"]


def _stats_pool_backward(d_pooled, lengths, pc):
    hd = d_pooled.shape[1] // 2
    d_mean, d_std = d_pooled[:, :hd], d_pooled[:, hd:]
    d_var = d_std / (2.0 * pc["std"])
    return _per_frame(d_mean / pc["n"], lengths) + 2.0 * pc["centered"] * _per_frame(d_var / pc["n"], lengths)


def _attention_pool_backward(d_pooled, lengths, pc, params, grads):
    hd = d_pooled.shape[1] // 2
    d_mean, d_std = d_pooled[:, :hd], d_pooled[:, hd:]
    d_var = d_std / (2.0 * pc["std"])
    a, centered = pc["a"], pc["centered"]
    h = pc["inp"][:, :hd]
    d_mean_f = _per_frame(d_mean, lengths)
    d_var_f = _per_frame(d_var, lengths)
    # the mean-path terms cancel because sum_f a_f (h_f - mean) = 0
    d_h = a[:, None] * d_mean_f + 2.0 * a[:, None] * centered * d_var_f
    d_a = (h * d_mean_f).sum(axis=1) + (centered**2 * d_var_f).sum(axis=1)
    d_e = a * (d_a - _per_frame(_seg_sum(a * d_a, lengths), lengths))

    k = pc["k"]
    grads["att.v"] = k.T @ d_e
    d_pre = np.outer(d_e, params["att.v"]) * (1.0 - k**2)
    grads["att.Wh"] = pc["inp"].T @ d_pre
    grads["att.bh"] = d_pre.sum(axis=0)
    d_inp = d_pre @ params["att.Wh"].T
    d_h = d_h + d_inp[:, :hd]
    d_cprime = _seg_sum(d_inp[:, hd:], lengths)

    g, t, cond = pc["g"], pc["t"], pc["cond"]
    d_t = d_cprime * g
    d_gpre = d_cprime * t * g * (1.0 - g)
    grads["att.Wc"] = cond.T @ d_t
    grads["att.bc"] = d_t.sum(axis=0)
    grads["att.Wg"] = cond.T @ d_gpre
    grads["att.bg"] = d_gpre.sum(axis=0)
    return d_h


def backward(params, config: ModelConfig, cache, d_logits):
    """Gradients of a scalar loss w.r.t. every parameter, given dL/dlogits."""
    if not cache or "acts" not in cache:
        raise ContractError("backward needs the cache from a forward pass")
    d_logits = np.asarray(d_logits, dtype=np.float64)
    emb, pooled, lengths = cache["emb"], cache["pooled"], cache["lengths"]
    require(d_logits.shape == (emb.shape[0], config.n_speakers), "upstream gradient shape mismatch")
    grads = {}
    grads["cls.W"] = emb.T @ d_logits
    grads["cls.b"] = d_logits.sum(axis=0)
    d_emb = d_logits @ params["cls.W"].T
    grads["embed.W"] = pooled.T @ d_emb
    grads["embed.b"] = d_emb.sum(axis=0)
    d_pooled = d_emb @ params["embed.W"].T
    if config.pooling == "attn":
        d_h = _attention_pool_backward(d_pooled, lengths, cache["pool"], params, grads)
    else:
        d_h = _stats_pool_backward(d_pooled, lengths, cache["pool"])

    acts = cache["acts"]
    for i in reversed(range(len(acts) - 1)):
        d_z = d_h * (1.0 - acts[i + 1] ** 2)
        grads[f"frame{i}.W"] = acts[i].T @ d_z
        grads[f"frame{i}.b"] = d_z.sum(axis=0)
        if i:
            d_h = d_z @ params[f"frame{i}.W"].T
    return {name: grads[name] for name in param_shapes(config)}
