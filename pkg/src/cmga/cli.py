"""Command-line entry point: ``cmga {gen-data,train,eval,ablate,gradcheck}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error
(missing file, malformed dataset or checkpoint), 3 numerical failure
(training divergence or a failed gradient check).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .ablation import AblationError, AblationVariant, run_matrix
from .autodiff import ShapeError
from .data import DatasetError, SyntheticSpec, generate_synthetic, load_dataset, save_dataset
from .metrics import EvalResult
from .model import (
    DEFAULT_PAIRS,
    MODALITY_ORDER,
    CheckpointError,
    MissingModalityError,
    Modality,
    ModelConfig,
    init_parameters,
    load_checkpoint,
    save_checkpoint,
)
from .training import DEFAULT_BATCH_SIZE, DEFAULT_LR, DivergenceError, evaluate_model, gradient_check_model, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

DEFAULT_VARIANTS = ("none", "drop:text", "drop:video", "drop:audio", "no_cross_attention", "no_forget_gate", "bidirectional")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; this CLI reserves 2 for data errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _dims(text: str) -> dict[str, int]:
    """``16`` for every modality, or ``t=5,v=6,a=7``."""
    text = text.strip()
    try:
        if "=" not in text:
            return {m.value: int(text) for m in MODALITY_ORDER}
        out = {}
        for part in text.split(","):
            k, _, v = part.partition("=")
            out[Modality.parse(k.strip()).value] = int(v)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad dimension spec {text!r}: {exc}") from None
    missing = [m.value for m in MODALITY_ORDER if m.value not in out]
    if missing:
        raise argparse.ArgumentTypeError(f"dimension spec {text!r} lacks {', '.join(missing)}")
    return out


def _seeds(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}") from None


def _pairs(text: str) -> list[str]:
    return [p.strip() for p in text.split(";") if p.strip()]


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--d-k", type=int, default=128, help="attention and fusion width (default 128)")
    g.add_argument("--n-heads", type=int, default=2, help="fusion heads (default 2)")
    g.add_argument(
        "--pairs", type=_pairs, default=[f"{p.source.short},{p.query.short}" for p in DEFAULT_PAIRS],
        help="';'-separated source,query pairs (default 't,v;v,a;t,a')",
    )
    g.add_argument("--no-cross-attention", action="store_true")
    g.add_argument("--no-forget-gate", action="store_true")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=int, default=50)
    g.add_argument("--batch-size", type=int, default=DEFAULT_BATCH_SIZE)
    g.add_argument("--lr", type=float, default=DEFAULT_LR)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cmga", description="Cross-modality gated-attention fusion toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen-data", help="write a synthetic dataset")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n", type=int, default=1000, help="number of utterances")
    p.add_argument("--dims", type=_dims, default=_dims("16"), help="raw widths: N or t=N,v=N,a=N (default 16)")
    p.add_argument("--seq-len", type=int, default=8)
    p.add_argument("--alpha", type=float, default=0.5, help="share of pairwise signal in [0, 1]")
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train a model and write a checkpoint and loss report")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--report", type=Path, required=True, help="per-epoch JSONL records")
    p.add_argument("--validation", type=Path, help="optional dataset scored after every epoch")
    p.add_argument("--seed", type=int, default=0, help="root seed for init and shuffling")
    _add_model_flags(p)
    _add_train_flags(p)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--name", default="CMGA", help="row label")
    p.add_argument("--report", type=Path, help="also write the metrics as one JSONL record")

    p = sub.add_parser("ablate", help="retrain and score a set of variants over several seeds")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--test-data", type=Path, help="score here and train on all of --data")
    p.add_argument("--variants", nargs="+", default=list(DEFAULT_VARIANTS),
                   help="e.g. none drop:text no_cross_attention no_forget_gate bidirectional reverse:v,a")
    p.add_argument("--seeds", type=_seeds, default=[1, 2, 3])
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--out", type=Path, help="write the text table here as well as stdout")
    p.add_argument("--records", type=Path, help="per-seed JSONL records")
    p.add_argument("--threads", type=int, default=1, help="worker processes (default 1)")
    _add_model_flags(p)
    _add_train_flags(p)

    p = sub.add_parser("gradcheck", help="compare tape gradients with finite differences")
    p.add_argument("--d-k", type=int, default=8)
    p.add_argument("--n-heads", type=int, default=2)
    p.add_argument("--seq-len", type=int, default=2)
    p.add_argument("--dims", type=_dims, default=_dims("6"))
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--h", type=float, default=1e-5, help="finite-difference step")
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--no-cross-attention", action="store_true")
    p.add_argument("--no-forget-gate", action="store_true")
    p.add_argument("--seed", type=int, default=7)
    return parser


def _header(args: argparse.Namespace, **resolved) -> None:
    """Print every flag, defaulted or not, before any work starts."""
    cfg = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "verbose"}
    cfg.update(resolved)
    print(f"# cmga {args.command} " + json.dumps(cfg, sort_keys=True), flush=True)


def _model_config(args, dataset, seed: int) -> ModelConfig:
    return ModelConfig(
        raw_dims=dataset.raw_dims,
        d_k=args.d_k,
        n_heads=args.n_heads,
        seq_len=dataset.seq_len,
        pairs=tuple(args.pairs),
        use_cross_attention=not args.no_cross_attention,
        use_forget_gate=not args.no_forget_gate,
        seed=seed,
    )


def cmd_gen_data(args) -> int:
    spec = SyntheticSpec(args.n, args.dims, args.seq_len, args.alpha, args.noise, args.seed)
    _header(args, spec=spec.to_dict())
    data = generate_synthetic(spec)
    save_dataset(data, args.out)
    print(f"wrote {len(data)} utterances to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    data = load_dataset(args.data)
    val = load_dataset(args.validation) if args.validation else None
    config = _model_config(args, data, args.seed)
    _header(args, model=config.to_dict())
    model = init_parameters(config)
    report = train(model, data, epochs=args.epochs, batch_size=args.batch_size, seed=args.seed, lr=args.lr,
                   validation=val)
    save_checkpoint(model, args.checkpoint)
    report.write(args.report)
    final = report.epoch_losses[-1] if report.epoch_losses else report.initial_loss
    print(f"initial mse {report.initial_loss:.6g}  final mse {final:.6g}  ({args.epochs} epochs)")
    print(f"wrote {args.checkpoint} and {args.report}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    data = load_dataset(args.data)
    _header(args, model=model.config.to_dict())
    want = {m: model.config.raw_dims[m] for m in model.config.used_modalities}
    have = data.raw_dims
    if data.seq_len != model.config.seq_len or any(have[m] != d for m, d in want.items()):
        raise DatasetError(
            f"dataset (L={data.seq_len}, dims {[have[m] for m in MODALITY_ORDER]}) does not fit the checkpoint "
            f"(L={model.config.seq_len}, dims {[model.config.raw_dims[m] for m in MODALITY_ORDER]})"
        )
    result = evaluate_model(model, data)
    print(EvalResult.header_row())
    print(result.format_row(args.name))
    if args.report:
        with open(args.report, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps({"name": args.name, **result.to_record()}, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_ablate(args) -> int:
    if args.threads < 1:
        raise UsageError(f"--threads must be >= 1, got {args.threads}")
    variants = [AblationVariant.parse(v) for v in args.variants]
    data = load_dataset(args.data)
    test = load_dataset(args.test_data) if args.test_data else None
    base = _model_config(args, data, seed=args.seeds[0] if args.seeds else 0)
    _header(args, model=base.to_dict(), variants=[v.token for v in variants])
    result = run_matrix(base, data, variants, args.seeds, epochs=args.epochs, batch_size=args.batch_size,
                        lr=args.lr, split_seed=args.split_seed, test_set=test, workers=args.threads)
    table = result.to_text()
    sys.stdout.write(table)
    if args.out:
        args.out.write_text(table, encoding="utf-8")
    if args.records:
        args.records.write_text(result.to_records(), encoding="utf-8")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    config = ModelConfig(
        raw_dims=args.dims, d_k=args.d_k, n_heads=args.n_heads, seq_len=args.seq_len,
        use_cross_attention=not args.no_cross_attention, use_forget_gate=not args.no_forget_gate, seed=args.seed,
    )
    _header(args, model=config.to_dict())
    report = gradient_check_model(config, tolerance=args.tolerance, batch=args.batch, h=args.h)
    print("\n".join(report.lines()))
    return EXIT_OK if report.passed else EXIT_NUMERIC


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
}


def _one_line(exc: BaseException) -> str:
    text = str(exc.args[0]) if isinstance(exc, KeyError) and exc.args else str(exc)
    return " ".join(text.split()) or type(exc).__name__


def _classify(exc: BaseException) -> int:
    if isinstance(exc, AblationError) and exc.__cause__ is not None:
        return _classify(exc.__cause__)
    if isinstance(exc, DivergenceError):
        return EXIT_NUMERIC
    if isinstance(exc, (DatasetError, CheckpointError, ShapeError, MissingModalityError, OSError)):
        return EXIT_DATA
    return EXIT_USAGE


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (ArithmeticError, ValueError, OSError, UsageError, AblationError, MissingModalityError) as exc:
        print(f"cmga {args.command}: error: {_one_line(exc)}", file=sys.stderr)
        return _classify(exc)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
