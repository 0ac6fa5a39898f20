"""Noisy parallel decoding: M independent chains of an inner decoder with
annealed Gaussian noise injected into the hidden transition, rescored under
the non-noisy model.

Chain m derives its seed as a fixed function of (base_seed, m), so the chain
set for M parallel processes is a strict superset of the set for any M' < M:
growing M can only improve the selected score. Chain 0 optionally runs with
zero noise, which guarantees the selection is never worse than a single run
of the inner decoder.

Chains never communicate until final selection; sequential and parallel
execution produce identical results.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .core import ContractError, RngStream, derive_seed
from .decode import (
    DecodeLimits,
    Hypothesis,
    NoiseSchedule,
    ScheduledNoise,
    SilentNoise,
    beam_search,
    force_score,
    greedy_search,
    sample_search,
)
from .model import BoundModel

INNER_DECODERS = ("greedy", "beam", "sample")


def noise_sigma(schedule: NoiseSchedule, t: int) -> float:
    """Noise level at decoding step t >= 1 (sigma0 / t under inverse_t)."""
    return schedule.sigma_at(t)


@dataclass(frozen=True)
class NpadConfig:
    chains: int
    schedule: NoiseSchedule
    inner: str = "greedy"
    beam_width: int = 1
    include_zero_chain: bool = True
    base_seed: int = 0
    limits: DecodeLimits | None = None

    def __post_init__(self):
        if self.chains < 1:
            raise ContractError(f"chain count must be >= 1, got {self.chains}")
        if self.inner not in INNER_DECODERS:
            raise ContractError(f"inner decoder must be one of {INNER_DECODERS}, got {self.inner!r}")
        if self.beam_width < 1:
            raise ContractError(f"beam width must be >= 1, got {self.beam_width}")


@dataclass
class ChainResult:
    chain_index: int
    hypothesis: Hypothesis
    noisy_logp: float
    rescored_logp: float
    sigma0_effective: float


def run_chain_on(model, cfg: NpadConfig, m: int) -> ChainResult:
    """Run chain m of the configuration against a bound model."""
    if not 0 <= m < cfg.chains:
        raise ContractError(f"chain index {m} outside 0..{cfg.chains - 1}")
    limits = cfg.limits or None
    chain_seed = derive_seed(cfg.base_seed, m)
    sigma0 = 0.0 if (m == 0 and cfg.include_zero_chain) else cfg.schedule.sigma0
    if sigma0 == 0.0:
        noise = SilentNoise(model.state_dim)
    else:
        noise = ScheduledNoise(RngStream(derive_seed(chain_seed, 0)),
                               NoiseSchedule(sigma0, cfg.schedule.rule), model.state_dim)
    if cfg.inner == "greedy":
        hyp = greedy_search(model, noise, limits)
    elif cfg.inner == "beam":
        hyp, _ = beam_search(model, cfg.beam_width, noise, limits)
    else:
        sampler = RngStream(derive_seed(chain_seed, 1))
        hyp = sample_search(model, sampler, limits, noise)
    rescored = force_score(model, hyp.tokens)
    return ChainResult(m, hyp, hyp.logp, rescored, sigma0)


def select_best(results: list[ChainResult]) -> ChainResult:
    """Argmax of the non-noisy rescore; ties go to the lowest chain index.

    Completed chains are preferred: an unfinished prefix's log-probability is
    not comparable to a complete sequence's. Only when every chain is
    incomplete is the best incomplete one returned.
    """
    pool = [r for r in results if r.hypothesis.complete] or results
    best = pool[0]
    for r in pool[1:]:
        if r.rescored_logp > best.rescored_logp:
            best = r
    return best


def npad_search(model, cfg: NpadConfig, workers: int = 1):
    """Run all chains against a bound model; returns (best, all results)."""
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda m: run_chain_on(model, cfg, m), range(cfg.chains)))
    else:
        results = [run_chain_on(model, cfg, m) for m in range(cfg.chains)]
    return select_best(results), results


def run_chain(params, source, cfg: NpadConfig, m: int) -> ChainResult:
    return run_chain_on(BoundModel(params, source), cfg, m)


def npad_decode(params, source, cfg: NpadConfig, workers: int = 1):
    return npad_search(BoundModel(params, source), cfg, workers)
