"""Maximum-likelihood training: full-length backpropagation through time,
global-norm gradient clipping, minibatch SGD with optional per-parameter
adaptive scaling, and a finite-difference gradient verifier.

Gradients are dictionaries keyed exactly like ModelParams.tensors.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ContractError, RngStream
from .model import BOS, ModelParams, _attend, _gru_fwd, encode_with_cache, log_softmax, score_sequence
from .tasks import SequencePair


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


@dataclass
class TrainConfig:
    epochs: int
    lr: float = 0.2
    lr_decay: float = 1.0            # multiplicative, per epoch
    clip_norm: float = 1.0
    batch_size: int = 16
    patience: int = 10
    seed: int = 0
    adaptive: bool = True            # per-parameter Adagrad-style scaling
    stop_below_token_nll: float | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ContractError("epochs must be >= 1")
        if self.clip_norm <= 0:
            raise ContractError("clip_norm must be > 0")
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")


def zero_grads(params: ModelParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(t) for name, t in params.tensors.items()}


def forward_pair(params: ModelParams, pair: SequencePair):
    """Force-decode one pair with zero noise; returns (nll, cache for backprop)."""
    t = params.tensors
    enc, enc_cache = encode_with_cache(params, pair.source)
    abar = enc.annotations.mean(axis=0)
    h0 = np.tanh(t["init.W"] @ abar + t["init.b"])

    steps = []
    h = h0
    prev = BOS
    loss = 0.0
    for y in pair.target:
        q = h
        context, alpha, M = _attend(params, q, enc, want_cache=True)
        u = np.concatenate([t["tgt_embed"][prev], context])
        h, gru_cache = _gru_fwd(t, "dec", u, q)
        logits = t["out.W"] @ np.concatenate([h, context]) + t["out.b"]
        logp = log_softmax(logits)
        loss -= float(logp[y])
        steps.append({"prev": prev, "y": int(y), "q": q, "alpha": alpha, "M": M,
                      "context": context, "u": u, "gru": gru_cache, "h": h,
                      "probs": np.exp(logp)})
        prev = int(y)
    cache = {"pair": pair, "enc": enc, "enc_cache": enc_cache,
             "abar": abar, "h0": h0, "steps": steps}
    return loss, cache


def pair_nll(params: ModelParams, pair: SequencePair) -> float:
    return -score_sequence(params, pair.source, pair.target)


def _gru_back(tensors, g, pre, dh, cache):
    """Backward through one GRU cell; accumulates into g, returns (dx, dhprev)."""
    x, hprev, z, r, n = cache
    dz = dh * (n - hprev)
    dn = dh * z
    dhp = dh * (1.0 - z)
    dn_pre = dn * (1.0 - n * n)
    g[f"{pre}.Wn"] += np.outer(dn_pre, x)
    g[f"{pre}.Un"] += np.outer(dn_pre, r * hprev)
    g[f"{pre}.bn"] += dn_pre
    dx = tensors[f"{pre}.Wn"].T @ dn_pre
    tmp = tensors[f"{pre}.Un"].T @ dn_pre
    dr = tmp * hprev
    dhp = dhp + tmp * r
    dz_pre = dz * z * (1.0 - z)
    g[f"{pre}.Wz"] += np.outer(dz_pre, x)
    g[f"{pre}.Uz"] += np.outer(dz_pre, hprev)
    g[f"{pre}.bz"] += dz_pre
    dx += tensors[f"{pre}.Wz"].T @ dz_pre
    dhp += tensors[f"{pre}.Uz"].T @ dz_pre
    dr_pre = dr * r * (1.0 - r)
    g[f"{pre}.Wr"] += np.outer(dr_pre, x)
    g[f"{pre}.Ur"] += np.outer(dr_pre, hprev)
    g[f"{pre}.br"] += dr_pre
    dx += tensors[f"{pre}.Wr"].T @ dr_pre
    dhp += tensors[f"{pre}.Ur"].T @ dr_pre
    return dx, dhp


def backward_pair(params: ModelParams, cache, g: dict[str, np.ndarray]) -> None:
    """Accumulate d(nll)/d(theta) for one force-decoded pair into g."""
    t = params.tensors
    d_emb, d_hid = params.dims.d_emb, params.dims.d_hid
    enc = cache["enc"]
    A = enc.annotations
    L = A.shape[0]
    dA = np.zeros_like(A)

    carry = np.zeros(d_hid)
    for step in reversed(cache["steps"]):
        dlogits = step["probs"].copy()
        dlogits[step["y"]] -= 1.0
        hc = np.concatenate([step["h"], step["context"]])
        g["out.W"] += np.outer(dlogits, hc)
        g["out.b"] += dlogits
        dhc = t["out.W"].T @ dlogits
        dh = dhc[:d_hid] + carry
        dctx = dhc[d_hid:].copy()

        du, dq = _gru_back(t, g, "dec", dh, step["gru"])
        g["tgt_embed"][step["prev"]] += du[:d_emb]
        dctx += du[d_emb:]

        alpha, M, q = step["alpha"], step["M"], step["q"]
        dalpha = A @ dctx
        dA += np.outer(alpha, dctx)
        ds = alpha * (dalpha - float(alpha @ dalpha))
        g["att.v"] += M.T @ ds
        dpre = np.outer(ds, t["att.v"]) * (1.0 - M * M)
        dpre_sum = dpre.sum(axis=0)
        g["att.Wq"] += np.outer(dpre_sum, q)
        g["att.Wk"] += dpre.T @ A
        g["att.b"] += dpre_sum
        dq = dq + t["att.Wq"].T @ dpre_sum
        dA += dpre @ t["att.Wk"]

        carry = dq

    # initial state
    h0, abar = cache["h0"], cache["abar"]
    dpre0 = carry * (1.0 - h0 * h0)
    g["init.W"] += np.outer(dpre0, abar)
    g["init.b"] += dpre0
    dA += (t["init.W"].T @ dpre0) / L

    # encoder
    ec = cache["enc_cache"]
    dX = np.zeros((L, d_emb))
    carry_f = np.zeros(d_hid)
    for i in range(L - 1, -1, -1):
        df = dA[i, :d_hid] + carry_f
        dx, carry_f = _gru_back(t, g, "enc_f", df, ec["f_caches"][i])
        dX[i] += dx
    carry_b = np.zeros(d_hid)
    for i in range(L):
        db = dA[i, d_hid:] + carry_b
        dx, carry_b = _gru_back(t, g, "enc_b", db, ec["b_caches"][L - 1 - i])
        dX[i] += dx
    np.add.at(g["src_embed"], ec["src"], dX)


def nll_loss(params: ModelParams, batch: list[SequencePair]):
    """Mean per-sentence negative log-likelihood of the batch, with gradients."""
    if not batch:
        raise ContractError("batch must be non-empty")
    g = zero_grads(params)
    total = 0.0
    for pair in batch:
        loss, cache = forward_pair(params, pair)
        total += loss
        backward_pair(params, cache, g)
    scale = 1.0 / len(batch)
    loss = total * scale
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite loss {loss!r}")
    for name in g:
        g[name] *= scale
        if not np.all(np.isfinite(g[name])):
            raise DivergenceError(f"non-finite gradient in {name}")
    return loss, g


def grad_global_norm(g: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(t * t)) for t in g.values())))


def clip_gradients(g: dict[str, np.ndarray], clip_norm: float) -> dict[str, np.ndarray]:
    """Renormalize to clip_norm when the global L2 norm exceeds it; otherwise
    return the buffer unchanged (same arrays). Direction is always preserved.
    """
    if clip_norm <= 0:
        raise ContractError("clip_norm must be > 0")
    norm = grad_global_norm(g)
    if norm <= clip_norm:
        return g
    scale = clip_norm / norm
    return {name: t * scale for name, t in g.items()}


@dataclass
class TraceRow:
    epoch: int
    train_nll: float           # mean per-sentence nll over the epoch
    valid_nll: float           # mean per-sentence nll on the validation set
    valid_nll_token: float     # total nll / total target tokens


def valid_nll(params: ModelParams, pairs: list[SequencePair]) -> tuple[float, float]:
    if not pairs:
        raise ContractError("validation set must be non-empty")
    total = 0.0
    tokens = 0
    for pair in pairs:
        total += pair_nll(params, pair)
        tokens += len(pair.target)
    return total / len(pairs), total / tokens


def train(params: ModelParams, dataset: list[SequencePair],
          valid: list[SequencePair], cfg: TrainConfig):
    """Minibatch SGD with clipping; keeps the best-validation checkpoint.

    Batches bucket pairs by target length (stable within the epoch shuffle);
    since the loss is computed per sequence no padding or masking is needed.
    Returns (best params, per-epoch trace). Deterministic given cfg.seed.
    """
    if set(dataset) & set(valid):
        raise ContractError("train and validation sets must be disjoint")
    rng = RngStream(cfg.seed)
    params = params.copy()
    accum = zero_grads(params) if cfg.adaptive else None

    best_params = params.copy()
    best_valid = float("inf")
    bad_epochs = 0
    trace: list[TraceRow] = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(dataset))
        ordered = sorted((dataset[i] for i in order), key=lambda p: len(p.target))
        batches = [ordered[i:i + cfg.batch_size] for i in range(0, len(ordered), cfg.batch_size)]
        batch_order = rng.permutation(len(batches))
        lr = cfg.lr * cfg.lr_decay ** (epoch - 1)
        epoch_total = 0.0
        for bi in batch_order:
            batch = batches[bi]
            loss, g = nll_loss(params, batch)
            epoch_total += loss * len(batch)
            g = clip_gradients(g, cfg.clip_norm)
            for name, tensor in params.tensors.items():
                if accum is not None:
                    accum[name] += g[name] * g[name]
                    tensor -= lr * g[name] / (np.sqrt(accum[name]) + 1e-8)
                else:
                    tensor -= lr * g[name]
        v_sent, v_tok = valid_nll(params, valid)
        trace.append(TraceRow(epoch, epoch_total / len(dataset), v_sent, v_tok))
        if v_sent < best_valid:
            best_valid = v_sent
            best_params = params.copy()
            bad_epochs = 0
        else:
            bad_epochs += 1
        if cfg.stop_below_token_nll is not None and v_tok < cfg.stop_below_token_nll:
            break
        if bad_epochs > cfg.patience:
            break
    return best_params, trace


def relative_errors(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> np.ndarray:
    """Elementwise |a - n| / max(|a|, |n|, floor).

    The floor keeps finite-difference rounding noise on near-zero gradients
    from registering as large relative errors.
    """
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


@dataclass
class GradCheckReport:
    per_tensor: dict[str, float]
    max_rel_error: float
    tolerance: float
    analytic: dict[str, np.ndarray]
    numeric: dict[str, np.ndarray]

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def grad_check(params: ModelParams, pair: SequencePair,
               tolerance: float = 1e-4, h: float = 1e-5) -> GradCheckReport:
    """Compare analytic gradients against central finite differences."""
    if params.n_params() > 5000:
        raise ContractError(f"model too large to finite-difference ({params.n_params()} params)")
    _, analytic = nll_loss(params, [pair])
    numeric = {}
    for name, tensor in params.tensors.items():
        num = np.zeros_like(tensor)
        for idx in np.ndindex(tensor.shape):
            orig = tensor[idx]
            tensor[idx] = orig + h
            up = forward_pair(params, pair)[0]
            tensor[idx] = orig - h
            down = forward_pair(params, pair)[0]
            tensor[idx] = orig
            num[idx] = (up - down) / (2.0 * h)
        numeric[name] = num
    per_tensor = {}
    for name in params.tensors:
        err = relative_errors(analytic[name], numeric[name])
        per_tensor[name] = float(err.max()) if err.size else 0.0
    return GradCheckReport(per_tensor, max(per_tensor.values()), tolerance, analytic, numeric)
