"""Conditional recurrent sequence model.

Architecture (all float64, documented in docs/model.md):

  * source/target token embeddings
  * single-layer bidirectional GRU encoder; per-position annotations are the
    concatenated forward/backward states
  * additive attention: score(h, a_i) = v . tanh(Wq h + Wk a_i + b)
  * GRU decoder whose previous hidden state can be perturbed by an additive
    noise vector before the transition (the attention query sees the
    perturbed state too)
  * readout over [h_t ; context] followed by log-softmax

The decoder predicts token t from the state reached after consuming token
t-1 (a begin-of-sequence marker feeds the first step).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ContractError, RngStream, log_softmax, sigmoid, softmax

PAD, BOS, EOS = 0, 1, 2
PAD_TOKEN, BOS_TOKEN, EOS_TOKEN = "<pad>", "<s>", "</s>"
SPECIAL_TOKENS = (PAD_TOKEN, BOS_TOKEN, EOS_TOKEN)


class VocabError(ValueError):
    """A token or token index is outside the vocabulary."""


@dataclass(frozen=True)
class Vocab:
    """Ordered token list; indices 0..2 are reserved for PAD, BOS, EOS."""

    symbols: tuple[str, ...]

    def __post_init__(self):
        if len(self.symbols) < 3 or tuple(self.symbols[:3]) != SPECIAL_TOKENS:
            raise ContractError(f"vocab must start with {SPECIAL_TOKENS}")
        if len(set(self.symbols)) != len(self.symbols):
            raise ContractError("vocab symbols must be unique")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.symbols)})

    def __len__(self) -> int:
        return len(self.symbols)

    def index(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise VocabError(f"unknown token {token!r}") from None

    def token(self, idx: int) -> str:
        if not 0 <= idx < len(self.symbols):
            raise VocabError(f"token index {idx} out of range (|V|={len(self.symbols)})")
        return self.symbols[idx]

    def encode(self, tokens) -> list[int]:
        return [self.index(t) for t in tokens]

    def decode(self, indices) -> list[str]:
        return [self.token(i) for i in indices]

    @staticmethod
    def from_content(content_tokens) -> "Vocab":
        return Vocab(SPECIAL_TOKENS + tuple(content_tokens))


@dataclass(frozen=True)
class Dims:
    d_emb: int
    d_hid: int
    n_src: int
    n_tgt: int

    def __post_init__(self):
        if min(self.d_emb, self.d_hid) < 1 or min(self.n_src, self.n_tgt) < 3:
            raise ContractError(f"bad model dims: {self}")

    @property
    def d_ann(self) -> int:
        return 2 * self.d_hid

    @property
    def d_dec_in(self) -> int:
        return self.d_emb + 2 * self.d_hid


def _gru_shapes(d_in: int, d_hid: int) -> dict[str, tuple]:
    return {
        "Wz": (d_hid, d_in), "Wr": (d_hid, d_in), "Wn": (d_hid, d_in),
        "Uz": (d_hid, d_hid), "Ur": (d_hid, d_hid), "Un": (d_hid, d_hid),
        "bz": (d_hid,), "br": (d_hid,), "bn": (d_hid,),
    }


def tensor_shapes(dims: Dims) -> dict[str, tuple]:
    """Name -> shape for every learned tensor; fixed order defines the file layout."""
    shapes: dict[str, tuple] = {
        "src_embed": (dims.n_src, dims.d_emb),
        "tgt_embed": (dims.n_tgt, dims.d_emb),
    }
    for pre in ("enc_f", "enc_b"):
        for k, s in _gru_shapes(dims.d_emb, dims.d_hid).items():
            shapes[f"{pre}.{k}"] = s
    shapes["att.Wq"] = (dims.d_hid, dims.d_hid)
    shapes["att.Wk"] = (dims.d_hid, dims.d_ann)
    shapes["att.b"] = (dims.d_hid,)
    shapes["att.v"] = (dims.d_hid,)
    for k, s in _gru_shapes(dims.d_dec_in, dims.d_hid).items():
        shapes[f"dec.{k}"] = s
    shapes["init.W"] = (dims.d_hid, dims.d_ann)
    shapes["init.b"] = (dims.d_hid,)
    shapes["out.W"] = (dims.n_tgt, dims.d_hid + dims.d_ann)
    shapes["out.b"] = (dims.n_tgt,)
    return shapes


@dataclass
class ModelParams:
    """All learned weights, keyed by tensor name (see tensor_shapes)."""

    dims: Dims
    tensors: dict[str, np.ndarray] = field(repr=False)

    def __post_init__(self):
        expected = tensor_shapes(self.dims)
        if set(self.tensors) != set(expected):
            missing = set(expected) - set(self.tensors)
            extra = set(self.tensors) - set(expected)
            raise ContractError(f"tensor set mismatch: missing={missing} extra={extra}")
        for name, shape in expected.items():
            t = self.tensors[name]
            if t.shape != shape:
                raise ContractError(f"tensor {name}: shape {t.shape}, expected {shape}")
            if not np.all(np.isfinite(t)):
                raise ContractError(f"tensor {name} has non-finite entries")

    def copy(self) -> "ModelParams":
        return ModelParams(self.dims, {k: v.copy() for k, v in self.tensors.items()})

    def n_params(self) -> int:
        return sum(t.size for t in self.tensors.values())


def init_params(rng: RngStream, dims: Dims, scale: float = 0.08) -> ModelParams:
    """Uniform [-scale, scale] weights, zero biases."""
    tensors = {}
    for name, shape in tensor_shapes(dims).items():
        if name.split(".")[-1].startswith("b"):
            tensors[name] = np.zeros(shape)
        else:
            tensors[name] = rng.uniform_vec(shape, -scale, scale)
    return ModelParams(dims, tensors)


@dataclass
class EncodedSource:
    """Per-position annotations (rows) plus cached attention keys."""

    annotations: np.ndarray        # (source_len, 2*d_hid)
    att_keys: np.ndarray           # (source_len, d_hid): Wk a_i + b, cached

    @property
    def source_len(self) -> int:
        return self.annotations.shape[0]


@dataclass
class DecoderState:
    h: np.ndarray
    t: int = 0


def _gru_fwd(tensors: dict, pre: str, x: np.ndarray, hprev: np.ndarray):
    """One GRU cell step; returns (h, cache) with cache = (x, hprev, z, r, n)."""
    z = sigmoid(tensors[f"{pre}.Wz"] @ x + tensors[f"{pre}.Uz"] @ hprev + tensors[f"{pre}.bz"])
    r = sigmoid(tensors[f"{pre}.Wr"] @ x + tensors[f"{pre}.Ur"] @ hprev + tensors[f"{pre}.br"])
    n = np.tanh(tensors[f"{pre}.Wn"] @ x + tensors[f"{pre}.Un"] @ (r * hprev) + tensors[f"{pre}.bn"])
    h = (1.0 - z) * hprev + z * n
    return h, (x, hprev, z, r, n)


def _check_source(dims: Dims, source) -> np.ndarray:
    src = np.asarray(source, dtype=np.int64)
    if src.ndim != 1 or src.size == 0:
        raise ContractError("source must be a non-empty index sequence")
    if np.any(src < 0) or np.any(src >= dims.n_src):
        raise VocabError(f"source token index out of range (|V_src|={dims.n_src})")
    return src


def encode_with_cache(params: ModelParams, source):
    """Bidirectional encode. Returns (EncodedSource, cache) for backprop."""
    src = _check_source(params.dims, source)
    t = params.tensors
    L, d_hid = src.size, params.dims.d_hid
    X = t["src_embed"][src]

    f_states = [np.zeros(d_hid)]
    f_caches = []
    for i in range(L):
        h, cache = _gru_fwd(t, "enc_f", X[i], f_states[-1])
        f_states.append(h)
        f_caches.append(cache)

    b_states = [np.zeros(d_hid)]     # b_states[k] is the state after reading k tokens from the right
    b_caches = []
    for i in range(L - 1, -1, -1):
        h, cache = _gru_fwd(t, "enc_b", X[i], b_states[-1])
        b_states.append(h)
        b_caches.append(cache)

    ann = np.empty((L, 2 * d_hid))
    for i in range(L):
        ann[i, :d_hid] = f_states[i + 1]
        ann[i, d_hid:] = b_states[L - i]
    keys = ann @ t["att.Wk"].T + t["att.b"]
    enc = EncodedSource(annotations=ann, att_keys=keys)
    cache = {"src": src, "X": X, "f_states": f_states, "f_caches": f_caches,
             "b_states": b_states, "b_caches": b_caches}
    return enc, cache


def encode(params: ModelParams, source) -> EncodedSource:
    return encode_with_cache(params, source)[0]


def initial_state(params: ModelParams, enc: EncodedSource) -> DecoderState:
    abar = enc.annotations.mean(axis=0)
    h0 = np.tanh(params.tensors["init.W"] @ abar + params.tensors["init.b"])
    return DecoderState(h=h0, t=0)


def _attend(params: ModelParams, query: np.ndarray, enc: EncodedSource, want_cache: bool = False):
    """Additive attention over the annotations for one query vector."""
    M = np.tanh(enc.att_keys + query @ params.tensors["att.Wq"].T)
    scores = M @ params.tensors["att.v"]
    alpha = softmax(scores)
    context = enc.annotations.T @ alpha
    if want_cache:
        return context, alpha, M
    return context, alpha


def attention_context(params: ModelParams, state: DecoderState, enc: EncodedSource):
    """Context vector and attention weights for the given decoder state."""
    if state.h.shape != (params.dims.d_hid,):
        raise ContractError(f"state dim {state.h.shape} != d_hid {params.dims.d_hid}")
    return _attend(params, state.h, enc)


def decoder_step(params: ModelParams, state: DecoderState, prev_token: int,
                 enc: EncodedSource, noise: np.ndarray | None = None):
    """One decoder transition.

    The noise vector is added to the previous hidden state before anything
    else happens: the attention query and the GRU both see the perturbed
    state. Pass None (or zeros) for non-noisy stepping. Returns the next
    state and the log-probability vector over the following token.
    """
    dims = params.dims
    t = params.tensors
    if noise is None:
        q = state.h
    else:
        noise = np.asarray(noise, dtype=np.float64)
        if noise.shape != (dims.d_hid,):
            raise ContractError(f"noise dim {noise.shape} != d_hid {dims.d_hid}")
        q = state.h + noise
    if not 0 <= prev_token < dims.n_tgt:
        raise VocabError(f"target token index {prev_token} out of range (|V_tgt|={dims.n_tgt})")
    context, _ = _attend(params, q, enc)
    u = np.concatenate([t["tgt_embed"][prev_token], context])
    h, _ = _gru_fwd(t, "dec", u, q)
    logits = t["out.W"] @ np.concatenate([h, context]) + t["out.b"]
    return DecoderState(h=h, t=state.t + 1), log_softmax(logits)


def _check_target(dims: Dims, target) -> list[int]:
    tgt = [int(y) for y in target]
    if not tgt:
        raise ContractError("target must be non-empty")
    for y in tgt:
        if not 0 <= y < dims.n_tgt:
            raise VocabError(f"target token index {y} out of range (|V_tgt|={dims.n_tgt})")
    return tgt


def score_sequence(params: ModelParams, source, target) -> float:
    """Total log-probability of `target` given `source` under the non-noisy model.

    Force-decodes step by step with zero noise and sums the per-token
    log-probabilities. The value is a complete-sequence log-probability when
    `target` ends with EOS; prefixes are accepted so that unfinished decodes
    can still be rescored.
    """
    tgt = _check_target(params.dims, target)
    enc = encode(params, source)
    state = initial_state(params, enc)
    prev = BOS
    total = 0.0
    for y in tgt:
        state, logp = decoder_step(params, state, prev, enc)
        total += float(logp[y])
        prev = y
    return total


class BoundModel:
    """A model bound to one encoded source: the step interface decoders use.

    Decoding engines only rely on this surface (n_tokens, eos, bos,
    state_dim, source_len, initial(), step()), which keeps them testable
    against hand-built table models.
    """

    def __init__(self, params: ModelParams, source):
        self.params = params
        self.enc = encode(params, source)
        self.n_tokens = params.dims.n_tgt
        self.eos = EOS
        self.bos = BOS
        self.state_dim = params.dims.d_hid
        self.source_len = self.enc.source_len

    def initial(self) -> DecoderState:
        return initial_state(self.params, self.enc)

    def step(self, state: DecoderState, prev_token: int, noise: np.ndarray | None = None):
        return decoder_step(self.params, state, prev_token, self.enc, noise)
