"""Command-line entry point binding the library into batch workflows.

Numeric work is imported lazily inside handlers so --threads can pin the
BLAS thread-pool environment variables before numpy first loads. Stdout is
deterministic for fixed argv and inputs except lines prefixed "wall",
which carry timing. Data errors exit 1 with a single machine-parsable
line (code=NAME msg=...); usage errors exit 2.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

_THREAD_ENV_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
)

_EVAL_MODES = ("tip", "zeroshot", "mlp-form", "clip-adapter", "linear-probe")
_ABLATION_NAMES = ("alpha", "beta", "cache-size", "more-shots", "finetune-modules")
_UNFREEZE_CHOICES = {
    "keys": frozenset({"keys"}),
    "values": frozenset({"values"}),
    "both": frozenset({"keys", "values"}),
}


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(tok) for tok in text.split(",") if tok.strip() != "")
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated floats, got {text!r}") from exc


def _add_io_flags(p: argparse.ArgumentParser, *, train=False, val=False, test=False, clf=False):
    if train:
        p.add_argument("--train", help="training TIPEMB path")
    if val:
        p.add_argument("--val", help="validation TIPEMB path")
    if test:
        p.add_argument("--test", help="test TIPEMB path")
    if clf:
        p.add_argument("--clf", help="text-classifier TIPEMB path")


def _add_common_flags(p: argparse.ArgumentParser):
    p.add_argument("--alpha", type=float, default=None, help="cache blend weight (>= 0)")
    p.add_argument("--beta", type=float, default=None, help="affinity sharpness (> 0)")
    p.add_argument("--seed", type=int, default=0, help="seed for all randomness")
    p.add_argument("--out", help="output path (file or directory per subcommand)")
    p.add_argument("--format", choices=("csv", "json"), default="csv", help="report format")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tipcache",
        description="Training-free cache-model few-shot classification over "
        "precomputed embeddings, with optional cache fine-tuning.",
    )
    parser.add_argument(
        "--threads",
        type=int,
        default=None,
        help="cap BLAS/OpenMP threads (default: all cores); must precede numpy import",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("synth", help="generate a synthetic train/test/classifier triple")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--shots", type=int, default=16)
    p.add_argument("--test-per-class", type=int, default=50)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--noise-sigma", type=float, default=0.3)
    p.add_argument("--misalignment", type=float, default=0.4)
    _add_common_flags(p)

    p = sub.add_parser("build-cache", help="build and save a key-value cache from a training set")
    _add_io_flags(p, train=True)
    _add_common_flags(p)

    p = sub.add_parser("eval", help="evaluate a classifier on a test set")
    _add_io_flags(p, train=True, test=True, clf=True)
    p.add_argument("--cache", help="cache stem written by build-cache/finetune (alternative to --train)")
    p.add_argument("--mode", choices=_EVAL_MODES, default="tip")
    p.add_argument("--epochs", type=int, default=None, help="training budget for trained baselines")
    _add_common_flags(p)

    p = sub.add_parser("finetune", help="fine-tune cache parameters on the training set")
    _add_io_flags(p, train=True, test=True, clf=True)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--optimizer", choices=("sgd", "sgd-momentum", "adam"), default="sgd-momentum")
    p.add_argument("--unfreeze", choices=tuple(_UNFREEZE_CHOICES), default="keys")
    p.add_argument("--trace", help="optional CSV path for the per-epoch training trace")
    _add_common_flags(p)

    p = sub.add_parser("sweep", help="grid-search alpha/beta, then evaluate once on test")
    _add_io_flags(p, train=True, val=True, test=True, clf=True)
    p.add_argument("--alphas", type=_float_list, default=None, help="comma-separated grid")
    p.add_argument("--betas", type=_float_list, default=None, help="comma-separated grid")
    p.add_argument("--selection", choices=("heldout-val", "train-set"), default="heldout-val")
    _add_common_flags(p)

    p = sub.add_parser("ablate", help="run one named sensitivity study")
    p.add_argument("--name", choices=_ABLATION_NAMES, required=True)
    _add_io_flags(p, train=True, test=True, clf=True)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--lr", type=float, default=0.001)
    _add_common_flags(p)

    p = sub.add_parser("export-report", help="re-emit a JSON report table as csv or json")
    p.add_argument("--in", dest="infile", required=True, help="JSON report array path")
    _add_common_flags(p)

    return parser


def _usage_error(msg: str) -> int:
    print(f"usage error: {msg}", file=sys.stderr)
    return 2


def _ensure_parent_dir(path: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)


def _print_report(report) -> None:
    print(
        f"method={report.method} shots={report.shots} alpha={report.alpha:g} "
        f"beta={report.beta:g} top1={report.top1:.4f} num_test={report.num_test} "
        f"seed={report.seed} config={report.config_hash}"
    )
    print(f"wall train_time_s={report.train_time_s:.3f} eval_time_s={report.eval_time_s:.3f}")


def _emit_reports(reports, args, inputs: dict) -> None:
    """Write the report table plus its config-hash index when --out is set."""
    if not args.out:
        return
    from .harness import write_report_index, write_reports

    write_reports(reports, args.out, args.format)
    index = {r.config_hash: dict(inputs) for r in reports}
    write_report_index(index, f"{args.out}.index.json")
    print(f"wrote {args.out} and {args.out}.index.json")


def _require(args, names: tuple[str, ...], ctx: str) -> str | None:
    missing = [f"--{n}" for n in names if getattr(args, n) is None]
    if missing:
        return f"{ctx} requires {', '.join(missing)}"
    return None


def cmd_synth(args) -> int:
    from .embedding_store import save_classifier, save_embeddings, synth_generate

    if not args.out:
        return _usage_error("synth requires --out DIR")
    train, test, clf = synth_generate(
        args.classes,
        args.shots,
        args.test_per_class,
        args.dim,
        args.noise_sigma,
        args.misalignment,
        args.seed,
    )
    os.makedirs(args.out, exist_ok=True)
    paths = {
        "train": os.path.join(args.out, "train.emb"),
        "test": os.path.join(args.out, "test.emb"),
        "clf": os.path.join(args.out, "clf.emb"),
    }
    save_embeddings(train, paths["train"])
    save_embeddings(test, paths["test"])
    save_classifier(clf, paths["clf"])
    print(
        f"synth classes={args.classes} shots={args.shots} test_per_class={args.test_per_class} "
        f"dim={args.dim} noise_sigma={args.noise_sigma:g} misalignment={args.misalignment:g} "
        f"seed={args.seed}"
    )
    for kind in ("train", "test", "clf"):
        print(f"wrote {paths[kind]}")
    return 0


def _resolve_params(args, fallback_alpha, fallback_beta) -> tuple[float, float]:
    alpha = args.alpha if args.alpha is not None else fallback_alpha
    beta = args.beta if args.beta is not None else fallback_beta
    return alpha, beta


def cmd_build_cache(args) -> int:
    msg = _require(args, ("train", "out"), "build-cache")
    if msg:
        return _usage_error(msg)
    from .cache_model import DEFAULT_ALPHA, DEFAULT_BETA, build_cache, cache_paths, save_cache
    from .embedding_store import load_embeddings

    alpha, beta = _resolve_params(args, DEFAULT_ALPHA, DEFAULT_BETA)
    train = load_embeddings(args.train)
    cache = build_cache(train, alpha=alpha, beta=beta)
    _ensure_parent_dir(args.out)
    save_cache(cache, args.out, seed=args.seed)
    keys_path, values_path, meta_path = cache_paths(args.out)
    print(
        f"cache shots={cache.shots_effective} classes={cache.num_classes} dim={cache.dim} "
        f"alpha={alpha:g} beta={beta:g} seed={args.seed}"
    )
    for path in (keys_path, values_path, meta_path):
        print(f"wrote {path}")
    return 0


def _load_or_build_cache(args):
    from .cache_model import DEFAULT_ALPHA, DEFAULT_BETA, build_cache, load_cache
    from .embedding_store import load_embeddings

    if args.cache:
        cache, _meta = load_cache(args.cache)
        alpha, beta = _resolve_params(args, cache.alpha, cache.beta)
        return cache.with_params(alpha=alpha, beta=beta)
    train = load_embeddings(args.train)
    alpha, beta = _resolve_params(args, DEFAULT_ALPHA, DEFAULT_BETA)
    return build_cache(train, alpha=alpha, beta=beta)


def cmd_eval(args) -> int:
    msg = _require(args, ("test", "clf"), "eval")
    if msg:
        return _usage_error(msg)
    if args.mode in ("tip", "mlp-form") and not (args.train or args.cache):
        return _usage_error(f"eval --mode {args.mode} requires --train or --cache")
    if args.mode in ("clip-adapter", "linear-probe") and not args.train:
        return _usage_error(f"eval --mode {args.mode} requires --train")

    import time

    from .embedding_store import load_classifier, load_embeddings
    from .harness import _make_report, top1_accuracy
    from .inference import blended_logits, mlp_form_logits, predict, zero_shot_logits

    test = load_embeddings(args.test)
    clf = load_classifier(args.clf)
    extra = {"mode": args.mode, "test": args.test, "clf": args.clf}
    train_time = 0.0
    t0 = time.perf_counter()

    if args.mode == "zeroshot":
        shots, alpha, beta = 0, 0.0, _resolve_params(args, 0.0, 5.5)[1]
        t1 = time.perf_counter()
        logits = zero_shot_logits(test, clf)
    elif args.mode in ("tip", "mlp-form"):
        cache = _load_or_build_cache(args)
        shots, alpha, beta = cache.shots_effective, cache.alpha, cache.beta
        train_time = time.perf_counter() - t0
        t1 = time.perf_counter()
        fn = blended_logits if args.mode == "tip" else mlp_form_logits
        logits = fn(test, cache, clf)
    elif args.mode == "clip-adapter":
        from .baselines import clip_adapter_logits, train_clip_adapter
        from .finetune import TrainConfig

        train_set = load_embeddings(args.train)
        shots = int(min(train_set.class_counts()))
        alpha = args.alpha if args.alpha is not None else 0.2
        beta = 0.0 if args.beta is None else args.beta
        cfg = TrainConfig(epochs=args.epochs or 200, seed=args.seed)
        adapter = train_clip_adapter(train_set, clf, cfg, alpha=alpha)
        train_time = time.perf_counter() - t0
        t1 = time.perf_counter()
        logits = clip_adapter_logits(test, adapter, clf)
        extra["epochs"] = cfg.epochs
    else:  # linear-probe
        from .baselines import linear_probe_logits, train_linear_probe
        from .finetune import TrainConfig

        train_set = load_embeddings(args.train)
        shots = int(min(train_set.class_counts()))
        alpha, beta = 0.0, 0.0 if args.beta is None else args.beta
        cfg = (
            TrainConfig(epochs=args.epochs, base_lr=0.5, schedule="constant", seed=args.seed)
            if args.epochs
            else None
        )
        probe = train_linear_probe(train_set, train_set.num_classes, cfg=cfg)
        train_time = time.perf_counter() - t0
        t1 = time.perf_counter()
        logits = linear_probe_logits(test, probe)

    pred = predict(logits)
    top1 = top1_accuracy(pred, test.labels)
    eval_time = time.perf_counter() - t1
    report = _make_report(
        args.mode, shots, alpha, beta, top1, test.rows, args.seed,
        train_time, eval_time, extra,
    )
    _print_report(report)
    _emit_reports([report], args, {k: v for k, v in extra.items()})
    return 0


def cmd_finetune(args) -> int:
    msg = _require(args, ("train", "clf", "out"), "finetune")
    if msg:
        return _usage_error(msg)

    import time

    from .cache_model import DEFAULT_ALPHA, DEFAULT_BETA, build_cache, cache_paths, save_cache
    from .embedding_store import load_classifier, load_embeddings
    from .finetune import TrainConfig, train
    from .harness import _make_report
    from .inference import blended_logits, predict

    alpha, beta = _resolve_params(args, DEFAULT_ALPHA, DEFAULT_BETA)
    train_set = load_embeddings(args.train)
    clf = load_classifier(args.clf)
    cache = build_cache(train_set, alpha=alpha, beta=beta)
    cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        base_lr=args.lr,
        optimizer=args.optimizer.replace("-", "_"),
        seed=args.seed,
        unfreeze=_UNFREEZE_CHOICES[args.unfreeze],
    )
    t0 = time.perf_counter()
    tuned, trace = train(train_set, cache, clf, cfg)
    train_time = time.perf_counter() - t0
    _ensure_parent_dir(args.out)
    save_cache(
        tuned,
        args.out,
        seed=args.seed,
        extra={
            "finetuned": "1",
            "epochs": str(cfg.epochs),
            "batch_size": str(cfg.batch_size),
            "base_lr": repr(cfg.base_lr),
            "optimizer": cfg.optimizer,
            "unfreeze": "+".join(sorted(cfg.unfreeze)),
        },
    )
    if args.trace:
        trace.to_csv(args.trace)
    print(
        f"finetune epochs={cfg.epochs} batch={cfg.batch_size} lr={cfg.base_lr:g} "
        f"optimizer={cfg.optimizer} unfreeze={'+'.join(sorted(cfg.unfreeze))} "
        f"alpha={alpha:g} beta={beta:g} seed={args.seed} "
        f"final_loss={trace.losses[-1]:.6f} final_train_acc={trace.train_accs[-1]:.4f}"
    )
    for path in cache_paths(args.out):
        print(f"wrote {path}")
    print(f"wall train_time_s={train_time:.3f}")

    if args.test:
        from .harness import top1_accuracy

        test = load_embeddings(args.test)
        t1 = time.perf_counter()
        top1 = top1_accuracy(predict(blended_logits(test, tuned, clf)), test.labels)
        eval_time = time.perf_counter() - t1
        report = _make_report(
            "tip_f", cache.shots_effective, alpha, beta, top1, test.rows, args.seed,
            train_time, eval_time,
            {
                "epochs": cfg.epochs, "batch_size": cfg.batch_size, "base_lr": cfg.base_lr,
                "optimizer": cfg.optimizer, "unfreeze": sorted(cfg.unfreeze),
                "train": args.train, "test": args.test, "clf": args.clf,
            },
        )
        _print_report(report)
        _emit_reports([report], args, {"train": args.train, "test": args.test, "clf": args.clf})
    return 0


def cmd_sweep(args) -> int:
    msg = _require(args, ("train", "test", "clf"), "sweep")
    if msg:
        return _usage_error(msg)
    from .embedding_store import load_classifier, load_embeddings
    from .harness import ALPHA_GRID, BETA_GRID, SweepGrid, sweep

    train_set = load_embeddings(args.train)
    val = load_embeddings(args.val) if args.val else None
    test = load_embeddings(args.test)
    clf = load_classifier(args.clf)
    grid = SweepGrid(
        args.alphas if args.alphas is not None else ALPHA_GRID,
        args.betas if args.betas is not None else BETA_GRID,
        args.selection.replace("-", "_"),
    )
    best_alpha, best_beta, report = sweep(train_set, val, test, clf, grid, seed=args.seed)
    print(f"best alpha={best_alpha:g} beta={best_beta:g}")
    _print_report(report)
    _emit_reports(
        [report], args,
        {"train": args.train, "val": args.val, "test": args.test, "clf": args.clf,
         "alphas": list(grid.alphas), "betas": list(grid.betas), "selection": grid.selection},
    )
    return 0


def cmd_ablate(args) -> int:
    msg = _require(args, ("train", "test", "clf"), "ablate")
    if msg:
        return _usage_error(msg)
    from .cache_model import DEFAULT_ALPHA, DEFAULT_BETA
    from .embedding_store import load_classifier, load_embeddings
    from .finetune import TrainConfig
    from .harness import run_ablation

    name = args.name.replace("-", "_")
    alpha, beta = _resolve_params(args, DEFAULT_ALPHA, DEFAULT_BETA)
    train_set = load_embeddings(args.train)
    test = load_embeddings(args.test)
    clf = load_classifier(args.clf)
    cfg = None
    if name == "finetune_modules":
        cfg = TrainConfig(
            epochs=args.epochs, batch_size=args.batch, base_lr=args.lr, seed=args.seed
        )
    reports = run_ablation(
        name, train_set, test, clf, alpha=alpha, beta=beta, seed=args.seed, cfg=cfg
    )
    print(f"ablation {args.name}: {len(reports)} rows")
    for report in reports:
        _print_report(report)
    _emit_reports(
        reports, args,
        {"name": args.name, "train": args.train, "test": args.test, "clf": args.clf,
         "alpha": alpha, "beta": beta, "seed": args.seed},
    )
    return 0


def cmd_export_report(args) -> int:
    from .errors import InvalidData, IoError
    from .harness import EvalReport, reports_to_csv, reports_to_json

    try:
        with open(args.infile, "r", encoding="utf-8") as fh:
            rows = json.load(fh)
    except OSError as exc:
        raise IoError(str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise InvalidData(f"not a JSON report table: {exc}") from exc
    if not isinstance(rows, list):
        raise InvalidData("report JSON must be an array of report objects")
    try:
        reports = [EvalReport(**row) for row in rows]
    except TypeError as exc:
        raise InvalidData(f"report row has wrong fields: {exc}") from exc
    text = reports_to_csv(reports) if args.format == "csv" else reports_to_json(reports)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


_HANDLERS = {
    "synth": cmd_synth,
    "build-cache": cmd_build_cache,
    "eval": cmd_eval,
    "finetune": cmd_finetune,
    "sweep": cmd_sweep,
    "ablate": cmd_ablate,
    "export-report": cmd_export_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    if args.threads is not None:
        if args.threads < 1:
            return _usage_error("--threads must be >= 1")
        for var in _THREAD_ENV_VARS:
            os.environ[var] = str(args.threads)

    from .errors import TipCacheError

    try:
        return _HANDLERS[args.command](args)
    except TipCacheError as exc:
        print(f"code={exc.code} msg={exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
