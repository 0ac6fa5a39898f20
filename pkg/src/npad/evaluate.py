"""Corpus metrics (sentence-level NLL, corpus BLEU) and the experiment
harness that decodes a test set under a grid of strategy cells.

The harness is deterministic given the spec's base seed: sentence i of a
cell always decodes with seed derive_seed(base_seed, i), so the degree of
worker parallelism cannot change any result.
"""
from __future__ import annotations

import json
import multiprocessing as mp
from collections import Counter
from dataclasses import dataclass, field
from math import exp, log

from .chains import NpadConfig, npad_search
from .core import ContractError, derive_seed
from .decode import (
    DecodeLimits,
    NoiseSchedule,
    beam_search,
    default_limits,
    diverse_beam_search,
    exact_search,
    force_score,
    greedy_search,
)
from .model import EOS, BoundModel
from .serialize import load_model, load_pairs, load_vocab
from .tasks import ConfigError

STRATEGIES = ("greedy", "beam", "sample", "diverse", "npad", "exact")
RESULT_COLUMNS = ("strategy", "beam_width", "sigma0", "chains", "eta",
                  "mean_nll", "mean_nll_per_token", "bleu")


@dataclass(frozen=True)
class Cell:
    """One experiment cell: a strategy plus its hyperparameters."""

    strategy: str
    beam_width: int | None = None
    sigma0: float | None = None
    chains: int | None = None
    eta: float | None = None
    include_zero_chain: bool = True

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}, expected one of {STRATEGIES}")
        if self.strategy in ("beam", "diverse") and (self.beam_width or 0) < 1:
            raise ConfigError(f"{self.strategy} requires beam_width >= 1")
        if self.strategy == "diverse" and (self.eta is None or self.eta < 0):
            raise ConfigError("diverse requires eta >= 0")
        if self.strategy == "npad":
            if (self.chains or 0) < 1:
                raise ConfigError("npad requires chains >= 1")
            if self.sigma0 is None or self.sigma0 < 0:
                raise ConfigError("npad requires sigma0 >= 0")
        if self.strategy == "sample" and (self.chains or 1) < 1:
            raise ConfigError("sample requires chains >= 1")


@dataclass
class EvalRecord:
    input_id: int
    strategy: str
    tokens: list[int]
    rescored_logp: float
    reference: tuple[int, ...]
    complete: bool


def mean_nll(records: list[EvalRecord]) -> float:
    """Mean per-sentence negative log-probability (lower is better)."""
    if not records:
        raise ContractError("mean_nll of an empty record list")
    return sum(-r.rescored_logp for r in records) / len(records)


def mean_nll_per_token(records: list[EvalRecord]) -> float:
    if not records:
        raise ContractError("mean_nll_per_token of an empty record list")
    total = sum(-r.rescored_logp for r in records)
    tokens = sum(len(r.tokens) for r in records)
    return total / max(tokens, 1)


def _ngrams(seq, n: int) -> Counter:
    return Counter(tuple(seq[i:i + n]) for i in range(len(seq) - n + 1))


def corpus_bleu(hypotheses, references, max_n: int = 4, smooth: bool = False) -> float:
    """Corpus BLEU: geometric mean of modified n-gram precisions (n=1..max_n)
    times the brevity penalty. One reference per hypothesis, no smoothing by
    default (any zero precision gives 0). With smooth=True, n-gram orders with
    zero matches use a 1/(2*denominator) floor and orders with no n-grams at
    all are dropped from the mean (for very short synthetic sentences).
    """
    if len(hypotheses) != len(references):
        raise ContractError("hypotheses and references must have equal length")
    if not references:
        raise ContractError("empty corpus")
    for ref in references:
        if len(ref) == 0:
            raise ContractError("empty reference sentence")
    hyp_len = sum(len(h) for h in hypotheses)
    ref_len = sum(len(r) for r in references)
    if hyp_len == 0:
        return 0.0
    log_precisions = []
    for n in range(1, max_n + 1):
        matches = 0
        total = 0
        for hyp, ref in zip(hypotheses, references):
            hyp_counts = _ngrams(hyp, n)
            ref_counts = _ngrams(ref, n)
            matches += sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
            total += max(len(hyp) - n + 1, 0)
        if total == 0:
            if smooth:
                continue
            return 0.0
        if matches == 0:
            if not smooth:
                return 0.0
            log_precisions.append(log(1.0 / (2.0 * total)))
        else:
            log_precisions.append(log(matches / total))
    if not log_precisions:
        return 0.0
    bp = 1.0 if hyp_len > ref_len else exp(1.0 - ref_len / hyp_len)
    return bp * exp(sum(log_precisions) / len(log_precisions))


def decode_with_cell(params, source, cell: Cell, seed: int,
                     max_len: int | None = None):
    """Decode one source under a cell; returns (tokens, rescored_logp, complete)."""
    model = BoundModel(params, source)
    limits = DecodeLimits(max_len) if max_len else default_limits(model.source_len)
    if cell.strategy in ("sample", "npad"):
        if cell.strategy == "sample":
            cfg = NpadConfig(chains=cell.chains or 1, schedule=NoiseSchedule(0.0),
                             inner="sample", include_zero_chain=False,
                             base_seed=seed, limits=limits)
        else:
            inner = "beam" if (cell.beam_width or 1) > 1 else "greedy"
            cfg = NpadConfig(chains=cell.chains, schedule=NoiseSchedule(cell.sigma0),
                             inner=inner, beam_width=cell.beam_width or 1,
                             include_zero_chain=cell.include_zero_chain,
                             base_seed=seed, limits=limits)
        best, _ = npad_search(model, cfg)
        hyp = best.hypothesis
        return list(hyp.tokens), best.rescored_logp, hyp.complete
    if cell.strategy == "greedy":
        hyp = greedy_search(model, None, limits)
    elif cell.strategy == "beam":
        hyp, _ = beam_search(model, cell.beam_width, None, limits)
    elif cell.strategy == "diverse":
        hyp, _ = diverse_beam_search(model, cell.beam_width, cell.eta, None, limits)
    else:
        hyp = exact_search(model, limits)
    return list(hyp.tokens), force_score(model, hyp.tokens), hyp.complete


_CTX: dict | None = None


def _corpus_chunk(indices):
    ctx = _CTX
    out = []
    for i in indices:
        seed = derive_seed(ctx["base_seed"], i)
        out.append(decode_with_cell(ctx["params"], ctx["sources"][i], ctx["cell"],
                                    seed, ctx["max_len"]))
    return out


def decode_corpus(params, sources, references, cell: Cell, base_seed: int,
                  max_len: int | None = None, workers: int = 1) -> list[EvalRecord]:
    """Decode every source under a cell; per-sentence seeds derive from
    (base_seed, input_id), so results are independent of worker count.
    """
    global _CTX
    n = len(sources)
    if workers > 1 and n > 1:
        _CTX = {"params": params, "sources": sources, "cell": cell,
                "base_seed": base_seed, "max_len": max_len}
        try:
            chunks = [list(range(k, n, workers)) for k in range(workers)]
            ctx = mp.get_context("fork")
            with ctx.Pool(workers) as pool:
                parts = pool.map(_corpus_chunk, chunks)
        finally:
            _CTX = None
        outcomes: list = [None] * n
        for chunk, part in zip(chunks, parts):
            for i, outcome in zip(chunk, part):
                outcomes[i] = outcome
    else:
        outcomes = [decode_with_cell(params, sources[i], cell, derive_seed(base_seed, i), max_len)
                    for i in range(n)]
    records = []
    for i, (tokens, logp, complete) in enumerate(outcomes):
        ref = tuple(references[i]) if references is not None else ()
        records.append(EvalRecord(i, cell.strategy, tokens, logp, ref, complete))
    return records


@dataclass
class ExperimentSpec:
    model: str
    test_set: str
    vocab_src: str
    vocab_tgt: str
    base_seed: int
    cells: list[Cell]
    max_len: int | None = None


_CELL_KEYS = {"strategy", "beam_width", "sigma0", "chains", "eta", "zero_chain"}


def load_spec(path: str) -> ExperimentSpec:
    try:
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})") from e
    required = {"model", "test_set", "vocab_src", "vocab_tgt", "base_seed", "cells"}
    missing = required - set(raw)
    if missing:
        raise ConfigError(f"{path}: missing spec fields {sorted(missing)}")
    cells = []
    for i, c in enumerate(raw["cells"]):
        extra = set(c) - _CELL_KEYS
        if extra:
            raise ConfigError(f"{path}: cell {i} has unknown fields {sorted(extra)}")
        if "strategy" not in c:
            raise ConfigError(f"{path}: cell {i} is missing 'strategy'")
        cells.append(Cell(strategy=c["strategy"], beam_width=c.get("beam_width"),
                          sigma0=c.get("sigma0"), chains=c.get("chains"),
                          eta=c.get("eta"),
                          include_zero_chain=c.get("zero_chain", True)))
    if not cells:
        raise ConfigError(f"{path}: spec has no cells")
    return ExperimentSpec(model=raw["model"], test_set=raw["test_set"],
                          vocab_src=raw["vocab_src"], vocab_tgt=raw["vocab_tgt"],
                          base_seed=int(raw["base_seed"]), cells=cells,
                          max_len=raw.get("max_len"))


@dataclass
class CellResult:
    cell: Cell
    mean_nll: float | None = None
    mean_nll_per_token: float | None = None
    bleu: float | None = None
    records: list[EvalRecord] = field(default_factory=list)
    error: str | None = None


def run_cells(params, pairs, cells, base_seed: int, max_len: int | None = None,
              workers: int = 1) -> list[CellResult]:
    """Decode the full test set for every cell; a failing cell records its
    error and the remaining cells still run.
    """
    sources = [p.source for p in pairs]
    references = [p.target for p in pairs]
    results = []
    for cell in cells:
        try:
            records = decode_corpus(params, sources, references, cell, base_seed,
                                    max_len, workers)
            hyps = [_strip_eos(r.tokens) for r in records]
            refs = [_strip_eos(r.reference) for r in records]
            results.append(CellResult(cell, mean_nll(records), mean_nll_per_token(records),
                                      corpus_bleu(hyps, refs), records))
        except Exception as e:           # keep the table going; the row records the failure
            results.append(CellResult(cell, error=f"{type(e).__name__}: {e}"))
    return results


def run_experiment(spec: ExperimentSpec, workers: int = 1,
                   base_seed: int | None = None) -> list[CellResult]:
    params = load_model(spec.model)
    src_vocab = load_vocab(spec.vocab_src)
    tgt_vocab = load_vocab(spec.vocab_tgt)
    pairs = load_pairs(spec.test_set, src_vocab, tgt_vocab)
    seed = spec.base_seed if base_seed is None else base_seed
    return run_cells(params, pairs, spec.cells, seed, spec.max_len, workers)


def _strip_eos(tokens):
    return [t for t in tokens if t != EOS]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def results_rows(results: list[CellResult]) -> list[list[str]]:
    rows = []
    for r in results:
        c = r.cell
        rows.append([c.strategy, _fmt(c.beam_width), _fmt(c.sigma0), _fmt(c.chains),
                     _fmt(c.eta), _fmt(r.mean_nll), _fmt(r.mean_nll_per_token), _fmt(r.bleu)])
    return rows


def write_results_csv(f, results: list[CellResult]) -> None:
    f.write(",".join(RESULT_COLUMNS) + "\n")
    for row in results_rows(results):
        f.write(",".join(row) + "\n")
