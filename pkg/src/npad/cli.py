"""Command-line surface: gen-data | train | decode | score | experiment | report.

Every command is deterministic given its flags and input files; stochastic
commands require an explicit --seed. Output files are written atomically and
input files are never modified.
"""
from __future__ import annotations

import argparse
import json
import sys

from .chains import NpadConfig, npad_search
from .core import ContractError, RngStream, derive_seed
from .decode import DecodeLimits, NoiseSchedule, default_limits
from .evaluate import (
    RESULT_COLUMNS,
    STRATEGIES,
    Cell,
    decode_corpus,
    load_spec,
    run_experiment,
    write_results_csv,
)
from .model import BoundModel, Dims, VocabError, init_params, score_sequence
from .serialize import FormatError, atomic_write, load_model, load_pairs, load_sources, load_vocab, save_model, save_pairs, save_vocab
from .tasks import ConfigError, TASK_KINDS, gen_task, split_pairs
from .train import DivergenceError, TrainConfig, train


def _positive(kind, name):
    def convert(text):
        value = kind(text)
        if value < 1:
            raise argparse.ArgumentTypeError(f"{name} must be >= 1, got {value}")
        return value
    return convert


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="npad", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic task corpus")
    p.add_argument("--task", required=True, choices=TASK_KINDS)
    p.add_argument("--vocab-size", type=_positive(int, "--vocab-size"), required=True)
    p.add_argument("--min-len", type=int, default=1)
    p.add_argument("--max-len", type=int, default=8)
    p.add_argument("--train-count", type=_positive(int, "--train-count"), required=True)
    p.add_argument("--valid-count", type=int, default=0)
    p.add_argument("--test-count", type=int, default=0)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a pair file")
    p.add_argument("--input", required=True)
    p.add_argument("--valid", required=True)
    p.add_argument("--vocab-src", required=True)
    p.add_argument("--vocab-tgt", required=True)
    p.add_argument("--model", required=True, help="output model path")
    p.add_argument("--trace", help="output CSV: epoch,train_nll,valid_nll")
    p.add_argument("--d-emb", type=_positive(int, "--d-emb"), default=16)
    p.add_argument("--d-hid", type=_positive(int, "--d-hid"), default=32)
    p.add_argument("--epochs", type=_positive(int, "--epochs"), default=30)
    p.add_argument("--batch-size", type=_positive(int, "--batch-size"), default=16)
    p.add_argument("--lr", type=float, default=0.2)
    p.add_argument("--lr-decay", type=float, default=1.0)
    p.add_argument("--clip-norm", type=float, default=1.0)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--plain-sgd", action="store_true", help="disable adaptive scaling")
    p.add_argument("--stop-below", type=float, help="stop when valid per-token NLL drops below")
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", help="decode a test file, one JSON line per input")
    p.add_argument("--strategy", required=True, choices=STRATEGIES)
    p.add_argument("--model", required=True)
    p.add_argument("--vocab-src", required=True)
    p.add_argument("--vocab-tgt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", help="default: stdout")
    p.add_argument("--beam-width", type=_positive(int, "--beam-width"))
    p.add_argument("--sigma0", type=float)
    p.add_argument("--chains", type=_positive(int, "--chains"))
    p.add_argument("--eta", type=float)
    p.add_argument("--no-zero-chain", action="store_true",
                   help="disable the zero-noise guarantee chain")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=_positive(int, "--workers"), default=1)
    p.add_argument("--max-len", type=_positive(int, "--max-len"))
    p.add_argument("--trace-chains", help="JSON-lines per chain (npad/sample only)")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("score", help="force-decode log-probabilities of pair file")
    p.add_argument("--model", required=True)
    p.add_argument("--vocab-src", required=True)
    p.add_argument("--vocab-tgt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", help="default: stdout")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("experiment", help="run every cell of an experiment spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--output", help="results CSV; default: stdout")
    p.add_argument("--seed", type=int, help="override the spec's base_seed")
    p.add_argument("--workers", type=_positive(int, "--workers"), default=1)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", help="render a results CSV as an aligned table")
    p.add_argument("--input", required=True)
    p.add_argument("--output", help="default: stdout")
    p.set_defaults(func=cmd_report)
    return parser


def _write_lines(path: str | None, lines: list[str]) -> None:
    if path:
        with atomic_write(path) as f:
            for line in lines:
                f.write(line + "\n")
    else:
        for line in lines:
            print(line)


def cmd_gen_data(args) -> int:
    import os

    total = args.train_count + args.valid_count + args.test_count
    data = gen_task(args.task, args.vocab_size, (args.min_len, args.max_len), total, args.seed)
    splits = split_pairs(data.pairs, args.train_count, args.valid_count, args.test_count)
    os.makedirs(args.out_dir, exist_ok=True)
    save_vocab(os.path.join(args.out_dir, "vocab_src.txt"), data.src_vocab)
    save_vocab(os.path.join(args.out_dir, "vocab_tgt.txt"), data.tgt_vocab)
    for name, pairs in zip(("train", "valid", "test"), splits):
        if pairs:
            save_pairs(os.path.join(args.out_dir, f"{name}.tsv"), pairs,
                       data.src_vocab, data.tgt_vocab)
    return 0


def cmd_train(args) -> int:
    src_vocab = load_vocab(args.vocab_src)
    tgt_vocab = load_vocab(args.vocab_tgt)
    dataset = load_pairs(args.input, src_vocab, tgt_vocab)
    valid = load_pairs(args.valid, src_vocab, tgt_vocab)
    dims = Dims(d_emb=args.d_emb, d_hid=args.d_hid, n_src=len(src_vocab), n_tgt=len(tgt_vocab))
    params = init_params(RngStream(args.seed), dims)
    cfg = TrainConfig(epochs=args.epochs, lr=args.lr, lr_decay=args.lr_decay,
                      clip_norm=args.clip_norm, batch_size=args.batch_size,
                      patience=args.patience, seed=args.seed,
                      adaptive=not args.plain_sgd, stop_below_token_nll=args.stop_below)
    best, trace = train(params, dataset, valid, cfg)
    save_model(args.model, best)
    if args.trace:
        with atomic_write(args.trace) as f:
            f.write("epoch,train_nll,valid_nll\n")
            for row in trace:
                f.write(f"{row.epoch},{row.train_nll!r},{row.valid_nll!r}\n")
    last = trace[-1]
    print(f"trained {len(trace)} epochs; valid NLL {last.valid_nll:.4f} "
          f"({last.valid_nll_token:.4f}/token)", file=sys.stderr)
    return 0


def _cell_from_args(parser_error, args) -> Cell:
    needs_seed = args.strategy in ("sample", "npad")
    if needs_seed and args.seed is None:
        parser_error(f"--seed is required for --strategy {args.strategy}")
    if args.strategy == "npad" and args.chains is None:
        parser_error("--chains is required for --strategy npad")
    if args.strategy == "npad" and args.sigma0 is None:
        parser_error("--sigma0 is required for --strategy npad")
    if args.strategy == "beam" and args.beam_width is None:
        parser_error("--beam-width is required for --strategy beam")
    if args.strategy == "diverse" and (args.beam_width is None or args.eta is None):
        parser_error("--beam-width and --eta are required for --strategy diverse")
    return Cell(strategy=args.strategy, beam_width=args.beam_width, sigma0=args.sigma0,
                chains=args.chains, eta=args.eta,
                include_zero_chain=not args.no_zero_chain)


def cmd_decode(args) -> int:
    parser = build_parser()
    cell = _cell_from_args(parser.error, args)
    params = load_model(args.model)
    src_vocab = load_vocab(args.vocab_src)
    tgt_vocab = load_vocab(args.vocab_tgt)
    sources = load_sources(args.input, src_vocab)
    base_seed = args.seed if args.seed is not None else 0
    records = decode_corpus(params, sources, None, cell, base_seed,
                            args.max_len, args.workers)
    lines = []
    for r in records:
        lines.append(json.dumps({
            "input_id": r.input_id, "strategy": r.strategy,
            "tokens": tgt_vocab.decode(r.tokens), "logp": r.rescored_logp,
            "complete": r.complete, "steps": len(r.tokens), "seed": args.seed,
        }))
    _write_lines(args.output, lines)
    if args.trace_chains:
        if cell.strategy not in ("sample", "npad"):
            print("note: --trace-chains only applies to npad/sample; ignored", file=sys.stderr)
        else:
            _write_chain_trace(args, params, sources, cell, base_seed)
    return 0


def _write_chain_trace(args, params, sources, cell: Cell, base_seed: int) -> None:
    lines = []
    for i, source in enumerate(sources):
        model = BoundModel(params, source)
        limits = DecodeLimits(args.max_len) if args.max_len else default_limits(model.source_len)
        if cell.strategy == "sample":
            cfg = NpadConfig(chains=cell.chains or 1, schedule=NoiseSchedule(0.0),
                             inner="sample", include_zero_chain=False,
                             base_seed=derive_seed(base_seed, i), limits=limits)
        else:
            cfg = NpadConfig(chains=cell.chains, schedule=NoiseSchedule(cell.sigma0),
                             inner="beam" if (cell.beam_width or 1) > 1 else "greedy",
                             beam_width=cell.beam_width or 1,
                             include_zero_chain=cell.include_zero_chain,
                             base_seed=derive_seed(base_seed, i), limits=limits)
        _, results = npad_search(model, cfg)
        for r in results:
            lines.append(json.dumps({
                "chain_index": r.chain_index, "sigma0_effective": r.sigma0_effective,
                "tokens": r.hypothesis.tokens, "noisy_logp": r.noisy_logp,
                "rescored_logp": r.rescored_logp, "input_id": i,
            }))
    _write_lines(args.trace_chains, lines)


def cmd_score(args) -> int:
    params = load_model(args.model)
    src_vocab = load_vocab(args.vocab_src)
    tgt_vocab = load_vocab(args.vocab_tgt)
    pairs = load_pairs(args.input, src_vocab, tgt_vocab)
    lines = []
    for i, pair in enumerate(pairs):
        logp = score_sequence(params, pair.source, pair.target)
        lines.append(json.dumps({"input_id": i, "logp": logp,
                                 "n_target_tokens": len(pair.target)}))
    _write_lines(args.output, lines)
    return 0


def cmd_experiment(args) -> int:
    spec = load_spec(args.spec)
    results = run_experiment(spec, workers=args.workers, base_seed=args.seed)
    for r in results:
        if r.error:
            print(f"warning: cell {r.cell} failed: {r.error}", file=sys.stderr)
    if args.output:
        with atomic_write(args.output) as f:
            write_results_csv(f, results)
    else:
        write_results_csv(sys.stdout, results)
    return 0


REPORT_HEADER = ("strategy", "width", "sigma0", "chains", "eta",
                 "NLL↓", "NLL/tok↓", "BLEU↑")


def render_report(rows: list[list[str]]) -> str:
    """Aligned table, rows grouped by strategy with sigma0 (then width,
    chains, eta) ascending; metric columns carry better-direction markers.
    """
    def sort_key(row):
        def num(x, default=-1.0):
            return float(x) if x else default
        return (STRATEGIES.index(row[0]), num(row[1]), num(row[2]), num(row[3]), num(row[4]))

    def disp(value, col):
        if col >= 5 and value:
            return f"{float(value):.4f}"
        return value

    table = [list(REPORT_HEADER)]
    for row in sorted(rows, key=sort_key):
        table.append([disp(v, c) for c, v in enumerate(row)])
    widths = [max(len(r[c]) for r in table) for c in range(len(REPORT_HEADER))]
    lines = []
    for i, row in enumerate(table):
        lines.append("  ".join(cell.ljust(w) if c == 0 else cell.rjust(w)
                               for c, (cell, w) in enumerate(zip(row, widths))).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def cmd_report(args) -> int:
    with open(args.input, encoding="utf-8") as f:
        lines = [line.rstrip("\n") for line in f if line.strip()]
    if not lines or lines[0].split(",") != list(RESULT_COLUMNS):
        raise FormatError(f"{args.input}: expected header {','.join(RESULT_COLUMNS)}")
    rows = []
    for ln, line in enumerate(lines[1:], start=2):
        cols = line.split(",")
        if len(cols) != len(RESULT_COLUMNS):
            raise FormatError(f"{args.input}:{ln}: expected {len(RESULT_COLUMNS)} columns")
        rows.append(cols)
    text = render_report(rows)
    if args.output:
        with atomic_write(args.output) as f:
            f.write(text + "\n")
    else:
        print(text)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as e:
        return int(e.code or 0)
    except FileNotFoundError as e:
        print(f"error: file not found: {e.filename}", file=sys.stderr)
    except FormatError as e:
        print(f"error: format: {e}", file=sys.stderr)
    except ConfigError as e:
        print(f"error: config: {e}", file=sys.stderr)
    except VocabError as e:
        print(f"error: vocab: {e}", file=sys.stderr)
    except DivergenceError as e:
        print(f"error: training diverged: {e}", file=sys.stderr)
    except ContractError as e:
        print(f"error: invalid arguments: {e}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
