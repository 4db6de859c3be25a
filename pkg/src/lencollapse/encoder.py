"""A small randomly initialized transformer encoder with temperature-scaled attention.

Nothing here is trained. The point is to watch what stacked softmax
attention does to token features as the input gets longer, and how dividing
the logits by ``tau < 1`` changes that.
"""

from dataclasses import dataclass, field, fields, replace
import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_count, check_tau
from .attention import softmax_attention
from .rng import derive_seed, make_rng
from .spectral import hc_project, spectral_norm

__all__ = [
    "EncoderConfig",
    "EncoderParams",
    "LayerParams",
    "LayerTrace",
    "ToyEncoder",
    "collapse_sweep",
    "cosine_matrix_stats",
    "encoder_forward",
    "init_encoder",
    "mean_word_embedding_similarity",
    "random_sequences",
    "repeated_token_experiment",
    "sinusoidal_positions",
]

LN_EPS = 1e-5
# HC norms below this fraction of ||X||_F are roundoff, not signal
HC_ZERO_RTOL = 1e-12


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 4
    heads: int = 4
    model_dim: int = 64
    ff_dim: int = 256
    tau: float = 1.0
    use_residual: bool = True
    use_ffn: bool = True
    use_layernorm: bool = False
    positional: bool = False
    pooling: str = "mean"
    vocab_size: int = 1000
    seed: int = 0

    def __post_init__(self):
        check_count(self.layers, "layers")
        check_count(self.heads, "heads")
        check_count(self.model_dim, "model_dim")
        check_count(self.ff_dim, "ff_dim")
        check_count(self.vocab_size, "vocab_size")
        check_count(self.seed, "seed", minimum=0)
        check_tau(self.tau)
        if self.model_dim % self.heads:
            raise ValueError(
                f"model_dim={self.model_dim} is not divisible by heads={self.heads}"
            )
        if self.pooling not in ("mean", "first"):
            raise ValueError(f"pooling must be 'mean' or 'first', got {self.pooling!r}")

    @property
    def head_dim(self):
        return self.model_dim // self.heads


@dataclass(frozen=True)
class LayerParams:
    w_q: np.ndarray  # (heads, model_dim, head_dim)
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray  # (model_dim, model_dim)
    ff_w1: np.ndarray  # (model_dim, ff_dim)
    ff_b1: np.ndarray
    ff_w2: np.ndarray  # (ff_dim, model_dim)
    ff_b2: np.ndarray

    def value_output_maps(self):
        """Per-head ``W_V^h W_O^h`` where ``W_O^h`` is the head's row block of ``W_O``."""
        heads, _, hd = self.w_v.shape
        return [self.w_v[h] @ self.w_o[h * hd : (h + 1) * hd] for h in range(heads)]


@dataclass(frozen=True)
class EncoderParams:
    config: EncoderConfig
    embedding: np.ndarray  # (vocab_size, model_dim)
    layers: tuple

    def arrays(self):
        yield self.embedding
        for layer in self.layers:
            for f in fields(layer):
                yield getattr(layer, f.name)


@dataclass(frozen=True)
class LayerTrace:
    """Per-layer ``log(||HC[X_{l+1}]||_F / ||HC[X_l]||_F)`` and its attention bound.

    ``log_bound`` is ``log(sigma_a * sigma_1 * H)`` with ``sigma_a`` the largest
    per-head filter rate and ``sigma_1`` the largest per-head value-output norm.
    ``degenerate`` marks layers where an HC norm is zero, whose ratio is NaN.
    """

    log_hc_ratio: np.ndarray
    log_bound: np.ndarray
    hc_norms: np.ndarray  # layers + 1 entries, input first
    degenerate: np.ndarray
    attention: list = field(default_factory=list, repr=False)

    def __len__(self):
        return len(self.log_hc_ratio)


def init_encoder(config):
    """Sample all weights from the config seed.

    Projection weights are ``N(0, 1/fan_in)``; token embeddings are standard
    normal (a one-hot lookup has unit fan-in). Biases start at zero.
    """
    rng = make_rng(config.seed)
    d, hd, ff, h = config.model_dim, config.head_dim, config.ff_dim, config.heads

    def dense(*shape, fan_in):
        return rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=shape)

    embedding = rng.normal(0.0, 1.0, size=(config.vocab_size, d))
    layers = []
    for _ in range(config.layers):
        layers.append(
            LayerParams(
                w_q=dense(h, d, hd, fan_in=d),
                w_k=dense(h, d, hd, fan_in=d),
                w_v=dense(h, d, hd, fan_in=d),
                w_o=dense(d, d, fan_in=d),
                ff_w1=dense(d, ff, fan_in=d),
                ff_b1=np.zeros(ff),
                ff_w2=dense(ff, d, fan_in=ff),
                ff_b2=np.zeros(d),
            )
        )
    return EncoderParams(config=config, embedding=embedding, layers=tuple(layers))


def sinusoidal_positions(n, d):
    pos = np.arange(n)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def _layer_norm(x):
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS)


def _check_tokens(tokens, vocab_size):
    ids = np.asarray(tokens)
    if ids.ndim != 1 or ids.size == 0:
        raise ValueError("token sequence must be a non-empty 1-D sequence")
    if not np.issubdtype(ids.dtype, np.integer):
        raise TypeError(f"token ids must be integers, got dtype {ids.dtype}")
    if ids.min() < 0 or ids.max() >= vocab_size:
        raise ValueError(f"token ids must lie in [0, {vocab_size})")
    return ids


def _hc_norm(x):
    norm = float(np.linalg.norm(hc_project(x)))
    return 0.0 if norm <= HC_ZERO_RTOL * np.linalg.norm(x) else norm


def _msa(x, layer, tau):
    heads, _, hd = layer.w_q.shape
    outs, maps = [], []
    for h in range(heads):
        q = x @ layer.w_q[h]
        k = x @ layer.w_k[h]
        a = softmax_attention(q @ k.T / math.sqrt(hd), tau)
        outs.append(a @ (x @ layer.w_v[h]))
        maps.append(a)
    return np.concatenate(outs, axis=1) @ layer.w_o, maps


def encoder_forward(params, tokens, tau=None, return_states=False, trace=True):
    """Embed one token sequence.

    Returns ``(embedding, trace)``; with ``return_states=True`` the per-layer
    feature matrices (input first) are appended. ``trace=False`` skips the
    per-head power iterations and returns ``None`` in place of the trace.
    """
    cfg = params.config
    tau = cfg.tau if tau is None else check_tau(tau)
    ids = _check_tokens(tokens, cfg.vocab_size)

    x = params.embedding[ids]
    if cfg.positional:
        x = x + sinusoidal_positions(len(ids), cfg.model_dim)

    states = [x]
    attention = []
    log_bound = np.empty(cfg.layers)
    for li, layer in enumerate(params.layers):
        attn_out, maps = _msa(x, layer, tau)
        if trace:
            attention.append(maps)
            rate = max(spectral_norm(hc_project(a)) for a in maps)
            sigma_1 = max(spectral_norm(m) for m in layer.value_output_maps())
            bound = rate * sigma_1 * cfg.heads
            log_bound[li] = math.log(bound) if bound > 0 else -math.inf

        h = x + attn_out if cfg.use_residual else attn_out
        if cfg.use_layernorm:
            h = _layer_norm(h)
        if cfg.use_ffn:
            hidden = np.maximum(h @ layer.ff_w1 + layer.ff_b1, 0.0)
            ff = hidden @ layer.ff_w2 + layer.ff_b2
            h = h + ff if cfg.use_residual else ff
            if cfg.use_layernorm:
                h = _layer_norm(h)
        x = h
        states.append(x)

    pooled = x.mean(axis=0) if cfg.pooling == "mean" else x[0].copy()
    if not trace:
        return (pooled, None, states) if return_states else (pooled, None)

    hc_norms = np.array([_hc_norm(s) for s in states])
    degenerate = (hc_norms[:-1] == 0.0) | (hc_norms[1:] == 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_ratio = np.where(degenerate, np.nan, np.log(hc_norms[1:] / hc_norms[:-1]))
    trace = LayerTrace(
        log_hc_ratio=log_ratio,
        log_bound=log_bound,
        hc_norms=hc_norms,
        degenerate=degenerate,
        attention=attention,
    )
    if return_states:
        return pooled, trace, states
    return pooled, trace


def random_sequences(vocab_size, length, count, seed):
    """``count`` uniform token sequences; sequence ``i`` uses its own derived seed."""
    base = derive_seed(seed, length)
    return [
        make_rng(derive_seed(base, i)).integers(0, vocab_size, size=length)
        for i in range(count)
    ]


def cosine_matrix_stats(vectors):
    """Mean and std of the cosine over all unordered pairs of rows (no self-pairs)."""
    v = np.asarray(vectors, dtype=float)
    if v.shape[0] < 2:
        raise ValueError("need at least two vectors")
    norms = np.linalg.norm(v, axis=1)
    if np.any(norms == 0):
        raise ValueError("zero vector has no direction")
    u = v / norms[:, None]
    iu = np.triu_indices(v.shape[0], k=1)
    c = (u @ u.T)[iu]
    return float(c.mean()), float(c.std()), c.size


def _embed_many(params, seqs, tau):
    return np.stack([encoder_forward(params, s, tau, trace=False)[0] for s in seqs])


def collapse_sweep(params, lengths, pairs_per_length=200, tau=None, seed=None):
    """Mean pairwise cosine of embeddings of random sequences, per length.

    ``pairs_per_length`` sequences are drawn per length; statistics run over
    all unordered pairs among them. The same sequences are drawn for every
    ``tau`` given the same seed.
    """
    pairs_per_length = check_count(pairs_per_length, "pairs_per_length", minimum=2)
    cfg = params.config
    tau = cfg.tau if tau is None else check_tau(tau)
    seed = cfg.seed if seed is None else seed
    rows = []
    for length in lengths:
        length = check_count(length, "length")
        seqs = random_sequences(cfg.vocab_size, length, pairs_per_length, seed)
        mean, std, pairs = cosine_matrix_stats(_embed_many(params, seqs, tau))
        rows.append(
            {"length": length, "tau": tau, "mean_cos": mean, "std_cos": std,
             "pairs": pairs, "seed": seed}
        )
    return rows


def _cosine(u, v):
    return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))


def repeated_token_experiment(params, token_a, token_b, lengths, tau=None, allow_same=False):
    """Cosine between embeddings of ``[a]*L`` and ``[b]*L`` for each length ``L``.

    Without positional encodings a repeated-token input has identical rows,
    attention is exactly uniform and the output cannot depend on ``L``.
    """
    if token_a == token_b and not allow_same:
        raise ValueError("token_a and token_b must differ")
    cfg = params.config
    tau = cfg.tau if tau is None else check_tau(tau)
    rows = []
    for length in lengths:
        length = check_count(length, "length")
        ea = encoder_forward(params, np.full(length, token_a), tau, trace=False)[0]
        eb = encoder_forward(params, np.full(length, token_b), tau, trace=False)[0]
        rows.append({"length": length, "cosine": _cosine(ea, eb)})
    return rows


def mean_word_embedding_similarity(params, lengths, samples_per_length=200, seed=None):
    """Bucketed pairwise cosine of averaged raw token embeddings (encoder bypassed)."""
    samples_per_length = check_count(samples_per_length, "samples_per_length", minimum=2)
    cfg = params.config
    seed = cfg.seed if seed is None else seed
    rows = []
    for length in lengths:
        length = check_count(length, "length")
        seqs = random_sequences(cfg.vocab_size, length, samples_per_length, seed)
        means = np.stack([params.embedding[s].mean(axis=0) for s in seqs])
        mean, std, pairs = cosine_matrix_stats(means)
        rows.append(
            {"length": length, "mean_cos": mean, "std_cos": std, "pairs": pairs,
             "seed": seed}
        )
    return rows


class ToyEncoder(TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``fit`` draws the weights, ``transform`` embeds sequences.

    ``X`` is a list of token-id sequences (ragged lengths are fine); the
    output is an ``(n_sequences, model_dim)`` array of pooled embeddings.
    """

    def __init__(
        self,
        layers=4,
        heads=4,
        model_dim=64,
        ff_dim=256,
        tau=1.0,
        use_residual=True,
        use_ffn=True,
        use_layernorm=False,
        positional=False,
        pooling="mean",
        vocab_size=1000,
        seed=0,
    ):
        self.layers = layers
        self.heads = heads
        self.model_dim = model_dim
        self.ff_dim = ff_dim
        self.tau = tau
        self.use_residual = use_residual
        self.use_ffn = use_ffn
        self.use_layernorm = use_layernorm
        self.positional = positional
        self.pooling = pooling
        self.vocab_size = vocab_size
        self.seed = seed

    def _config(self):
        return EncoderConfig(**self.get_params())

    def fit(self, X=None, y=None):
        self.params_ = init_encoder(self._config())
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        # tau may be changed with set_params after fit without redrawing weights
        tau = check_tau(self.tau)
        return _embed_many(self.params_, list(X), tau)

    def trace(self, tokens):
        check_is_fitted(self, "params_")
        return encoder_forward(self.params_, tokens, self.tau)[1]

    def with_tau(self, tau):
        """Copy of the fitted params under another temperature (weights unchanged)."""
        check_is_fitted(self, "params_")
        return replace(self.params_, config=replace(self.params_.config, tau=tau))
