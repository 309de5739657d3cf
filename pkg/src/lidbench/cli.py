"""Command line: synth, analyze, extract, train, evaluate, reproduce.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import pipeline
from .classifier import TdnnConfig, load_model
from .compensation import normalize_method
from .corpus import (generate_synthetic_corpus, parse_key_values, read_manifest, spec_from_text,
                     spec_to_text)

log = logging.getLogger("lidbench")


class ConfigError(Exception):
    """Bad flags, config keys or values: exit code 2."""


# ---------------------------------------------------------------- config helpers

def parse_durations(text: str) -> tuple:
    try:
        values = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"bad --durations {text!r}; expected comma-separated seconds") from None
    if not values or any(v <= 0 for v in values):
        raise ConfigError("durations must be positive")
    return values


def parse_sets(pairs) -> dict:
    out = {}
    for p in pairs or ():
        if "=" not in p:
            raise ConfigError(f"--set expects key=value, got {p!r}")
        k, v = p.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_overrides(config_path, sets) -> dict:
    kv = {}
    if config_path:
        try:
            kv.update(parse_key_values(Path(config_path).read_text()))
        except OSError as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc.strerror}") from None
        except ValueError as exc:
            raise ConfigError(f"{config_path}: {exc}") from None
    kv.update(parse_sets(sets))
    return kv


def coerce_fields(cls, kv: dict) -> dict:
    """Convert text values to the types of ``cls``'s scalar dataclass fields."""
    fields = {f.name: f for f in dataclasses.fields(cls)}
    defaults = cls()
    out = {}
    for k, v in kv.items():
        if k not in fields:
            raise ConfigError(f"unknown config key {k!r}")
        current = getattr(defaults, k)
        try:
            if isinstance(current, bool):
                out[k] = v.lower() in ("1", "true", "yes")
            elif isinstance(current, int):
                out[k] = int(v)
            elif isinstance(current, float):
                out[k] = float(v)
            elif isinstance(current, str):
                out[k] = v
            elif isinstance(current, tuple) and all(isinstance(c, str) for c in current):
                out[k] = tuple(s.strip() for s in v.split(",") if s.strip())
            elif isinstance(current, tuple) and all(isinstance(c, (int, float)) for c in current):
                out[k] = tuple(float(s) for s in v.split(",") if s.strip())
            else:
                raise ConfigError(f"config key {k!r} cannot be set from text")
        except ValueError:
            raise ConfigError(f"bad value {v!r} for {k}") from None
    return out


def tdnn_config(args) -> TdnnConfig:
    overrides = coerce_fields(TdnnConfig, load_overrides(args.config, args.set))
    if args.seed is not None:
        overrides["seed"] = args.seed
    try:
        return TdnnConfig.preset(args.preset, **overrides)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def named_path(text: str) -> tuple:
    name, sep, path = text.partition("=")
    return (name, path) if sep else (None, text)


def open_manifest(path):
    try:
        return read_manifest(path)
    except FileNotFoundError:
        raise ConfigError(f"no such manifest: {path}") from None


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    try:
        text = Path(args.spec).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read spec file {args.spec}: {exc.strerror}") from None
    kv = parse_key_values(text)
    kv.update(parse_sets(args.set))
    if args.seed is not None:
        kv["seed"] = str(args.seed)
    try:
        spec = spec_from_text("\n".join(f"{k}={v}" for k, v in kv.items()))
    except KeyError as exc:
        raise ConfigError(f"spec file is missing required key {exc.args[0]!r}") from None
    except ValueError as exc:
        raise ConfigError(f"bad spec: {exc}") from None
    out = Path(args.out)
    m = generate_synthetic_corpus(spec, out)
    (out / "spec.txt").write_text(spec_to_text(spec))
    print(f"{spec.corpus_name}: {len(m.entries)} utterances -> {out / 'manifest.tsv'}")
    return 0


def cmd_analyze(args) -> int:
    status = 0
    for path in args.manifest:
        res = pipeline.analyze_corpus(open_manifest(path), args.out)
        for utt, msg in res.failures:
            log.warning("%s: unreadable %s: %s", res.corpus_name, utt, msg)
        print(f"{res.corpus_name}: analyzed {res.n_ok} utterances, {len(res.failures)} unreadable")
        if res.failures:
            status = 1
    return status


def cmd_extract(args) -> int:
    try:
        method = normalize_method(args.method)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    res = pipeline.extract_corpus(open_manifest(args.manifest), method, args.out)
    print(f"{res.manifest.corpus_name}: {len(res.manifest.entries)} feature files ({method}), "
          f"{len(res.skipped)} skipped as empty after VAD -> {Path(args.out) / 'features.tsv'}")
    return 0


def cmd_train(args) -> int:
    cfg = tdnn_config(args)
    m = open_manifest(args.manifest)
    progress = (lambda s: log.info("%s", s))
    model, report = pipeline.train_from_manifest(m, cfg, args.out, progress)
    print(f"{m.corpus_name}: trained {report.stopped_epoch} epochs (best {report.best_epoch}) "
          f"-> {Path(args.out) / f'model_{m.corpus_name}.lidm'}")
    return 0


def cmd_evaluate(args) -> int:
    durations = parse_durations(args.durations)
    models = {}
    for text in args.model:
        name, path = named_path(text)
        if not Path(path).is_file():
            log.error("missing model file: %s", path)
            return 1
        if name is None:
            name = Path(path).stem.removeprefix("model_")
        models[name] = load_model(path)
    tests = {}
    for text in args.test:
        name, path = named_path(text)
        m = open_manifest(path)
        tests[name or m.corpus_name] = pipeline.scoring_items(pipeline.load_split(m, "test"))
    cells = pipeline.evaluate_and_write(models, tests, durations, args.out)
    for c in cells:
        print(f"{c.train_corpus} -> {c.test_corpus} {c.duration_s:g}s: EER {c.eer_pct:.2f}%  "
              f"Cavg {c.cavg_x100:.2f}")
    return 0


def cmd_reproduce(args) -> int:
    kv = load_overrides(args.config, args.set)
    overrides = coerce_fields(pipeline.ReproduceConfig, kv)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.preset is not None:
        overrides["preset"] = args.preset
    if args.durations is not None:
        overrides["durations"] = parse_durations(args.durations)
    if args.methods is not None:
        overrides["methods"] = tuple(m for m in args.methods.split(",") if m)
    rc = pipeline.ReproduceConfig(**overrides)
    try:
        for m in rc.methods:
            normalize_method(m)
        TdnnConfig.preset(rc.preset)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    rows = pipeline.reproduce(args.out, rc, progress=lambda s: log.info("%s", s))
    print(f"{'method':<10}{'within EER':>12}{'cross EER':>12}{'within Cavg':>13}{'cross Cavg':>12}")
    for r in rows:
        print(f"{r['method']:<10}{r['within_eer_pct']:>12.2f}{r['cross_eer_pct']:>12.2f}"
              f"{r['within_cavg_x100']:>13.2f}{r['cross_cavg_x100']:>12.2f}")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lidbench", description="Cross-corpora spoken language identification workbench")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic corpus from a key=value spec file")
    s.add_argument("spec")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("analyze", help="corpus LTAS and SNR histogram")
    s.add_argument("--manifest", action="append", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("extract", help="VAD, front end and compensation to LIDF feature files")
    s.add_argument("--manifest", required=True)
    s.add_argument("--method", default="baseline", help="baseline, M0..M5 or cms/cmvn/wcmvn/fw/rasta/pcen")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("train", help="train a TDNN on a feature manifest's train split")
    s.add_argument("--manifest", required=True)
    s.add_argument("--preset", choices=("desk", "paper"), default="desk")
    s.add_argument("--seed", type=int)
    s.add_argument("--config")
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="score test sets with every model; write the results grid")
    s.add_argument("--model", action="append", required=True, metavar="[NAME=]PATH")
    s.add_argument("--test", "--manifest", dest="test", action="append", required=True,
                   metavar="[NAME=]FEATURE_MANIFEST")
    s.add_argument("--durations", default="3,6,9")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("reproduce", help="synthetic two-corpus experiment over all methods")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--preset", choices=("desk", "paper"))
    s.add_argument("--durations")
    s.add_argument("--methods", help="comma-separated subset of baseline,M0..M5")
    s.add_argument("--config")
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"lidbench {args.command}: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"lidbench {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
