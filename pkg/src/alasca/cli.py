"""Command line entry point: ``gen-data``, ``train`` and ``verify-theory``.

Exit codes: 0 success, 1 failed check, 2 usage or config error, 3 numeric
divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

log = logging.getLogger("alasca")


def _threads() -> int:
    raw = os.environ.get("ALASCA_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        raise SystemExit(_usage(f"ALASCA_THREADS must be a positive integer, got {raw!r}"))
    return n


def _cap_threads(n: int) -> None:
    # only effective if numpy's BLAS has not been loaded yet
    for var in _THREAD_VARS:
        os.environ.setdefault(var, str(n))


def _usage(msg: str) -> int:
    print(f"alasca: error: {msg}", file=sys.stderr)
    return EXIT_USAGE


def _rate(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {v}")
    return v


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be positive, got {v}")
    return v


def _override(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="alasca", description="Noisy-label training with adaptive label smoothing.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic noisy dataset")
    g.add_argument("--n", type=_positive_int, required=True)
    g.add_argument("--classes", type=_positive_int, required=True)
    g.add_argument("--dim", type=_positive_int, required=True)
    g.add_argument("--sep", type=float, default=3.0, help="pairwise distance between class means")
    g.add_argument("--noise", choices=("none", "sym", "asym", "idn"), default="sym")
    g.add_argument("--eps", type=_rate, default=0.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="-", help="output path, '-' for stdout")

    t = sub.add_parser("train", help="train from a key=value config")
    t.add_argument("--config", required=True)
    t.add_argument("--out-dir", required=True)
    t.add_argument("--seed", type=int, default=None, help="overrides train.seed")
    t.add_argument("--set", type=_override, action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry; repeatable")

    v = sub.add_parser("verify-theory", help="run the closed-form checks")
    v.add_argument("--out", default="theory.jsonl")
    v.add_argument("--trials", type=_positive_int, default=1000)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--expect-degenerate", action="store_true",
                   help="feed a classifier with duplicated columns to the witness check")
    v.add_argument("--tolerance", type=float, default=None, help="override every check tolerance")
    return p


def cmd_gen_data(args) -> int:
    from . import noise
    from .errors import ContractError

    try:
        ds = noise.generate(args.n, args.dim, args.classes, args.sep, args.noise, args.eps, args.seed)
    except ContractError as exc:
        return _usage(str(exc))
    text = noise.dumps(ds)
    if args.out == "-":
        sys.stdout.write(text)
        return EXIT_OK
    try:
        Path(args.out).write_text(text)
    except OSError as exc:
        return _usage(f"cannot write {args.out}: {exc.strerror}")
    log.info("wrote %d rows to %s", ds.n, args.out)
    return EXIT_OK


def _datasets(cfg):
    from . import noise
    from .config import ConfigError

    d = cfg.data
    if d["data.file"]:
        try:
            ds = noise.load(d["data.file"])
        except OSError as exc:
            raise ConfigError(f"cannot read data.file {d['data.file']}: {exc.strerror}", "data.file") from exc
        for key, have in (("data.n", ds.n), ("data.dim", ds.dim), ("data.classes", ds.num_classes)):
            if have != d[key]:
                raise ConfigError(f"{key}={d[key]} disagrees with data.file ({have})", key)
    else:
        ds = noise.generate(d["data.n"], d["data.dim"], d["data.classes"], d["data.sep"],
                            d["data.noise"], d["data.eps"], d["data.seed"])
    test = None
    if d["data.test_n"] > 0:
        test = noise.make_gaussian_dataset(d["data.test_n"], d["data.dim"], d["data.classes"], d["data.sep"],
                                           d["data.seed"] + 2)
    return ds, test


def cmd_train(args) -> int:
    from . import checkpoint
    from .config import load
    from .errors import ContractError
    from .probes import export_csv
    from .trainer import DivergenceError, train

    overrides = dict(args.set)
    if args.seed is not None:
        overrides["train.seed"] = str(args.seed)
    try:
        cfg = load(args.config, overrides)
        ds, test = _datasets(cfg)
    except ContractError as exc:  # includes ConfigError
        return _usage(f"config: {exc}")

    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        return _usage(f"cannot create {out}: {exc.strerror}")
    (out / "config.txt").write_text(cfg.canonical())

    jsonl = open(out / "metrics.jsonl", "w")
    try:
        def on_epoch(rec):
            log.info("epoch %d  loss %.4f  acc %.4f", rec["epoch"], rec["mean_loss"], rec["accuracy"])

        try:
            res = train(cfg.train, ds, test, on_epoch=on_epoch)
        except DivergenceError as exc:
            print(f"alasca: diverged: {exc}", file=sys.stderr)
            return EXIT_DIVERGED
        except ContractError as exc:
            return _usage(f"config: {exc}")
        for rec in res.metrics:
            jsonl.write(json.dumps(rec) + "\n")
    finally:
        jsonl.close()
    export_csv(res.metrics, out / "metrics.csv")
    checkpoint.save(out / "checkpoint.bin", res.net.state_dict(), cfg.digest())
    final = [m for m in res.metrics if m["split"] == ("test" if test is not None else "train")][-1]
    print(f"done: {cfg.train.epochs} epochs, final {final['split']} accuracy {final['accuracy']:.4f}")
    return EXIT_OK


def _duplicated_column_W(seed: int):
    import numpy as np

    W = np.random.default_rng(seed).standard_normal((4, 5))
    W[:, 4] = W[:, 1]
    return W


def cmd_verify_theory(args) -> int:
    from .theory import run_theory_suite, write_report

    Wd = _duplicated_column_W(args.seed) if args.expect_degenerate else None
    recs = run_theory_suite(args.trials, args.seed, args.tolerance, Wd)
    try:
        write_report(recs, args.out)
    except OSError as exc:
        return _usage(f"cannot write {args.out}: {exc.strerror}")
    for r in recs:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<24} stat={r.statistic:.3e} tol={r.tolerance:.1e}")
    if args.expect_degenerate:
        wit = next(r for r in recs if r.name == "phi_degenerate_witness")
        if wit.passed:
            print(f"witness direction: {wit.detail.get('witness')}")
    return EXIT_OK if all(r.passed for r in recs) else EXIT_CHECK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "verify-theory": cmd_verify_theory}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _cap_threads(_threads())
    except SystemExit as exc:
        return int(exc.code)
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
