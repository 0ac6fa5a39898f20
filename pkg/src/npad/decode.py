"""Inner decoding strategies: greedy, beam, ancestral sampling, diverse beam,
and an exhaustive oracle for tiny instances.

Every decoder accepts a per-step noise source so the parallel-chain
meta-decoder can wrap any of them. Engines operate on the step interface of
`model.BoundModel` (or any object with the same surface); thin wrappers with
(params, source) signatures are provided for each strategy.

Scores are raw cumulative log-probabilities; no length normalization is
applied anywhere. Top-K ties break by (score desc, parent index asc, token
index asc) and completed-hypothesis ties lexicographically by token indices,
so runs are reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ContractError, RngStream, categorical_sample, gaussian_vec
from .model import BoundModel, DecoderState

MAX_EXACT_SPACE = 10**6


class SearchSpaceError(ValueError):
    """Exhaustive decoding was asked for an intractably large space."""


@dataclass(frozen=True)
class DecodeLimits:
    max_len: int

    def __post_init__(self):
        if self.max_len < 1:
            raise ContractError(f"max_len must be >= 1, got {self.max_len}")


def default_limits(source_len: int) -> DecodeLimits:
    return DecodeLimits(max_len=2 * source_len + 5)


def _resolve_limits(model, limits: DecodeLimits | None) -> DecodeLimits:
    if limits is not None:
        return limits
    return default_limits(getattr(model, "source_len", 1))


@dataclass(frozen=True)
class NoiseSchedule:
    """Annealed noise level: sigma_t = sigma0 / t for step t >= 1."""

    sigma0: float
    rule: str = "inverse_t"

    def __post_init__(self):
        if self.sigma0 < 0:
            raise ContractError(f"sigma0 must be >= 0, got {self.sigma0}")
        if self.rule != "inverse_t":
            raise ContractError(f"unknown schedule rule {self.rule!r}")

    def sigma_at(self, t: int) -> float:
        if t < 1:
            raise ContractError(f"schedule step must be >= 1, got {t}")
        return self.sigma0 / t


class SilentNoise:
    """Always-zero noise source."""

    def __init__(self, dim: int):
        self._zeros = np.zeros(dim)

    def vector(self, t: int) -> np.ndarray:
        return self._zeros


class ScheduledNoise:
    """Gaussian noise with the scheduled per-step standard deviation."""

    def __init__(self, rng: RngStream, schedule: NoiseSchedule, dim: int):
        self.rng = rng
        self.schedule = schedule
        self.dim = dim

    def vector(self, t: int) -> np.ndarray:
        return gaussian_vec(self.rng, self.dim, self.schedule.sigma_at(t))


@dataclass
class Hypothesis:
    tokens: list[int]
    logp: float
    state: DecoderState
    complete: bool


def _silent(model) -> SilentNoise:
    return SilentNoise(model.state_dim)


def force_score(model, tokens) -> float:
    """Non-noisy log-probability of `tokens` under the bound model (replay)."""
    if not tokens:
        raise ContractError("cannot score an empty token sequence")
    state = model.initial()
    prev = model.bos
    zero = np.zeros(model.state_dim)
    total = 0.0
    for tok in tokens:
        state, logp = model.step(state, prev, zero)
        total += float(logp[tok])
        prev = tok
    return total


def greedy_search(model, noise=None, limits: DecodeLimits | None = None) -> Hypothesis:
    """Stepwise argmax decoding; stops at EOS or max_len.

    The accumulated score comes from the same (possibly noisy) distributions
    used for selection.
    """
    limits = _resolve_limits(model, limits)
    noise = noise or _silent(model)
    state = model.initial()
    prev = model.bos
    tokens: list[int] = []
    total = 0.0
    for _ in range(limits.max_len):
        state, logp = model.step(state, prev, noise.vector(state.t + 1))
        tok = int(np.argmax(logp))
        tokens.append(tok)
        total += float(logp[tok])
        if tok == model.eos:
            return Hypothesis(tokens, total, state, True)
        prev = tok
    return Hypothesis(tokens, total, state, False)


def sample_search(model, rng: RngStream, limits: DecodeLimits | None = None,
                  noise=None) -> Hypothesis:
    """Ancestral sampling from the per-step output distributions."""
    limits = _resolve_limits(model, limits)
    noise = noise or _silent(model)
    state = model.initial()
    prev = model.bos
    tokens: list[int] = []
    total = 0.0
    for _ in range(limits.max_len):
        state, logp = model.step(state, prev, noise.vector(state.t + 1))
        tok = categorical_sample(rng, np.exp(logp))
        tokens.append(tok)
        total += float(logp[tok])
        if tok == model.eos:
            return Hypothesis(tokens, total, state, True)
        prev = tok
    return Hypothesis(tokens, total, state, False)


def _better_completed(a: Hypothesis, b: Hypothesis | None) -> bool:
    """True when `a` should replace `b`: higher score, lexicographic on ties."""
    if b is None:
        return True
    if a.logp != b.logp:
        return a.logp > b.logp
    return a.tokens < b.tokens


def _beam_engine(model, width: int, eta: float, noise, limits: DecodeLimits):
    """Shared beam loop; eta > 0 adds the per-parent sibling rank penalty.

    Live width starts at `width` and shrinks by one for every hypothesis that
    completes; the search stops when it reaches zero or max_len is hit.
    Penalties affect selection only: stored scores stay unpenalized.
    """
    if width < 1:
        raise ContractError(f"beam width must be >= 1, got {width}")
    if eta < 0:
        raise ContractError(f"eta must be >= 0, got {eta}")
    live = [Hypothesis([], 0.0, model.initial(), False)]
    completed: list[Hypothesis] = []
    k_live = width
    for _ in range(limits.max_len):
        candidates = []  # (selection_score, parent_idx, token, raw_score, state)
        for pi, hyp in enumerate(live):
            prev = hyp.tokens[-1] if hyp.tokens else model.bos
            state, logp = model.step(hyp.state, prev, noise.vector(hyp.state.t + 1))
            order = sorted(range(model.n_tokens), key=lambda j: (-logp[j], j))
            for rank, tok in enumerate(order, start=1):
                raw = hyp.logp + float(logp[tok])
                candidates.append((raw - eta * rank, pi, tok, raw, state))
        candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
        next_live = []
        for _, pi, tok, raw, state in candidates[:k_live]:
            hyp = Hypothesis(live[pi].tokens + [tok], raw, state, tok == model.eos)
            if hyp.complete:
                completed.append(hyp)
                k_live -= 1
            else:
                next_live.append(hyp)
        live = next_live
        if k_live <= 0 or not live:
            break
    if completed:
        best = None
        for hyp in completed:
            if _better_completed(hyp, best):
                best = hyp
        return best, completed
    best_live = None
    for hyp in live:
        if _better_completed(hyp, best_live):
            best_live = hyp
    return best_live, []


def beam_search(model, width: int, noise=None, limits: DecodeLimits | None = None):
    """Beam search; returns (best completed hypothesis, all completed).

    If nothing completes within max_len, the best live hypothesis is returned
    flagged incomplete and the completed list is empty.
    """
    limits = _resolve_limits(model, limits)
    return _beam_engine(model, width, 0.0, noise or _silent(model), limits)


def diverse_beam_search(model, width: int, eta: float, noise=None,
                        limits: DecodeLimits | None = None):
    """Beam search where the r-th ranked expansion of each parent has its
    selection score reduced by eta * r. Reported scores are unpenalized.
    """
    limits = _resolve_limits(model, limits)
    return _beam_engine(model, width, eta, noise or _silent(model), limits)


def exact_search(model, limits: DecodeLimits | None = None) -> Hypothesis:
    """Enumerate every EOS-terminated sequence up to max_len; return the argmax.

    Ties break lexicographically by token indices. Tractable only for tiny
    vocabularies and lengths; refuses spaces above 10^6 sequences.
    """
    limits = _resolve_limits(model, limits)
    if model.n_tokens ** limits.max_len > MAX_EXACT_SPACE:
        raise SearchSpaceError(
            f"search space {model.n_tokens}^{limits.max_len} exceeds {MAX_EXACT_SPACE}")
    zero = np.zeros(model.state_dim)
    best: Hypothesis | None = None

    def visit(state, prev, tokens, logp, depth):
        nonlocal best
        state, lp = model.step(state, prev, zero)
        cand = Hypothesis(tokens + [model.eos], logp + float(lp[model.eos]), state, True)
        if _better_completed(cand, best):
            best = cand
        if depth + 1 < limits.max_len:
            for tok in range(model.n_tokens):
                if tok != model.eos:
                    visit(state, tok, tokens + [tok], logp + float(lp[tok]), depth + 1)

    visit(model.initial(), model.bos, [], 0.0, 0)
    return best


# (params, source) wrappers with the contract-level signatures.

def greedy_decode(params, source, noise=None, limits=None) -> Hypothesis:
    return greedy_search(BoundModel(params, source), noise, limits)


def beam_decode(params, source, width: int, noise=None, limits=None):
    return beam_search(BoundModel(params, source), width, noise, limits)


def sample_decode(params, source, rng: RngStream, limits=None, noise=None) -> Hypothesis:
    return sample_search(BoundModel(params, source), rng, limits, noise)


def diverse_beam_decode(params, source, width: int, eta: float, limits=None, noise=None):
    return diverse_beam_search(BoundModel(params, source), width, eta, noise, limits)


def exact_decode(params, source, limits=None) -> Hypothesis:
    return exact_search(BoundModel(params, source), limits)
