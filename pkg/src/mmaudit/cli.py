"""Command-line entry point.

Exit codes: 0 success, 1 validation or acceptance failure, 2 usage or I/O error.
"""
from __future__ import annotations

import argparse
import json
import sys
import uuid
from pathlib import Path

from .config import CliConfig, ConfigError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

_FILE_SAFE = {"Base": "base", "+DMC": "dmc", "+SICS": "sics", "Full": "full"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common(p: argparse.ArgumentParser, with_defaults: bool):
    d = None if with_defaults else argparse.SUPPRESS
    p.add_argument("--seed", type=int, default=d, help="base random seed")
    p.add_argument("--config", default=d, help="flat key = value file, or a JSON artifact")
    p.add_argument("--out", default=d, help="output directory")
    p.add_argument("--set", action="append", default=d, metavar="KEY=VALUE",
                   help="override any configuration key (repeatable)")


def _train_flags(p):
    p.add_argument("--alpha", type=float, help="distillation weight")
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--stab-weight", type=float)
    p.add_argument("--snr-v", type=float)
    p.add_argument("--snr-a", type=float)
    p.add_argument("--n-samples", type=int)
    p.add_argument("--spike-frac", type=float)
    p.add_argument("--spike-gain", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mmaudit", description="Multimodal deception-audit toolkit at desk scale.")
    _common(parser, with_defaults=True)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gradcheck", help="certify every gradient path against finite differences")
    _common(g, with_defaults=False)
    g.add_argument("--tol", type=float)

    t = sub.add_parser("train", help="train one model and write its trace, summary and checkpoint")
    _common(t, with_defaults=False)
    _train_flags(t)
    t.add_argument("--no-sics", action="store_true")
    t.add_argument("--no-dmc", action="store_true")

    a = sub.add_parser("ablate", help="run Base, +DMC, +SICS and Full on shared seeds")
    _common(a, with_defaults=False)
    _train_flags(a)
    a.add_argument("--seeds", type=int, help="number of consecutive seeds starting at --seed")
    a.add_argument("--workers", type=int)

    r = sub.add_parser("reports", help="validate, filter or summarize audit-record corpora")
    _common(r, with_defaults=False)
    r.add_argument("action", choices=["validate", "filter", "stats"])
    r.add_argument("input")
    r.add_argument("--strict", action="store_true", help="exit 1 when any record is dropped")
    r.add_argument("--threshold", type=float)

    m = sub.add_parser("manifest", help="check per-edition counts of a dataset manifest")
    _common(m, with_defaults=False)
    m.add_argument("input", nargs="?", help="manifest CSV (default: the bundled fixture)")
    m.add_argument("--ratio", help="expected deceptive:truthful ratio, e.g. 2:1")
    m.add_argument("--totals", help="expected grand totals as total,deceptive,truthful")
    return parser


_FLAG_KEYS = {
    "alpha": "train.alpha", "steps": "train.steps", "lr": "train.lr", "batch_size": "train.batch_size",
    "stab_weight": "train.stab_weight", "snr_v": "data.snr_v", "snr_a": "data.snr_a",
    "n_samples": "data.n_samples", "spike_frac": "data.spike_frac", "spike_gain": "data.spike_gain",
    "seeds": "ablate.seeds", "workers": "ablate.workers", "threshold": "schema.threshold",
    "tol": "gradcheck.tol", "seed": "seed",
}


def resolve_config(args) -> CliConfig:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    for attr, key in _FLAG_KEYS.items():
        v = getattr(args, attr, None)
        if v is not None:
            overrides[key] = v
    if getattr(args, "no_sics", False):
        overrides["train.use_sics"] = False
    if getattr(args, "no_dmc", False):
        overrides["train.use_dmc"] = False
    return CliConfig.resolve(args.config, overrides)


def _prepare_out(path: str) -> Path:
    """Create the directory and prove it is writable before any compute."""
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / f".probe-{uuid.uuid4().hex}"
        probe.write_text("")
        probe.unlink()
    except OSError as e:
        raise OSError(f"output directory {out} is not writable: {e.strerror or e}") from None
    return out


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# ------------------------------------------------------------ commands

def cmd_gradcheck(args, cfg: CliConfig) -> int:
    from .harness.certify import gradcheck_suite

    tol = cfg["gradcheck.tol"]
    report = gradcheck_suite(seed=cfg["seed"], tol=tol, lam=cfg["train.lam"], alpha=cfg["train.alpha"])
    for (suite, stage), row in report.summary().items():
        flag = "ok  " if row.error <= tol else "FAIL"
        print(f"{flag} {suite:<7} {stage:<8} worst {row.error:.3e} ({row.param})")
    worst = report.worst
    verdict = "PASS" if report.passed else "FAIL"
    print(f"{verdict}: max relative error {worst.error:.3e} at {worst.suite}/{worst.stage}/{worst.param}, tol {tol:g}")
    return EXIT_OK if report.passed else EXIT_FAIL


def _summary_doc(cfg: CliConfig, model, trace, data) -> dict:
    from .harness.experiments import stability_report

    doc = {
        "config": cfg.to_dict(),
        "metrics": trace.epochs[-1].to_dict(),
        "balance_B": trace.balance(),
        "steps": len(trace.steps),
    }
    if model.cfg.use_sics:
        doc["adapter"] = stability_report(model, data)
    return doc


def cmd_train(args, cfg: CliConfig) -> int:
    from .harness.data import gen_synthetic
    from .harness.train import train

    tcfg, spec = cfg.train_config(), cfg.synthetic_spec()
    out = _prepare_out(args.out)
    data = gen_synthetic(spec)
    model, trace = train(data, tcfg, with_head=tcfg.use_dmc)
    _write(out / "resolved_config.txt", cfg.to_text())
    _write(out / "trace.csv", trace.to_csv())
    _write(out / "summary.json", _dump(_summary_doc(cfg, model, trace, data)))
    _write(out / "checkpoint.json", model.to_json())
    m, b = trace.epochs[-1], trace.balance()
    line = f"trained {len(trace.steps)} steps: accuracy {m.accuracy:.4f}, f1 {m.f1:.4f}"
    print(line if b is None else f"{line}, B {b:.4f}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_ablate(args, cfg: CliConfig) -> int:
    from .harness.experiments import run_experiment

    n = cfg["ablate.seeds"]
    if n < 1:
        raise ConfigError("ablate.seeds must be at least 1")
    seeds = list(range(cfg["seed"], cfg["seed"] + n))
    spec, tcfg = cfg.synthetic_spec(), cfg.train_config()
    out = _prepare_out(args.out)
    result = run_experiment(spec, tcfg, seeds, workers=cfg["ablate.workers"])
    _write(out / "resolved_config.txt", cfg.to_text())
    _write(out / "comparison.json", result.to_json(cfg.to_dict()))
    for name, runs in result.runs.items():
        tag = _FILE_SAFE[name]
        for r in runs:
            _write(out / "traces" / f"{tag}_seed{r.seed}.csv", r.trace.to_csv())
            _write(out / "checkpoints" / f"{tag}_seed{r.seed}.json", r.model.to_json())
    report = result.report()
    print(f"{'variant':<7} {'accuracy':>9} {'f1':>7} {'B':>7}")
    for name, row in report.items():
        b = row["mean_balance_B"]
        print(f"{name:<7} {row['mean_accuracy']:>9.4f} {row['mean_f1']:>7.4f} "
              f"{'-' if b is None else f'{b:.4f}':>7}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_reports(args, cfg: CliConfig) -> int:
    from .schema import audit, filters
    from .schema.report import SchemaError, parse_report

    records = filters.load_corpus(args.input)
    if args.action == "stats":
        report = filters.validate_rules(records)
        parsed, tagged = [], []
        for r in records:
            try:
                parsed.append(parse_report(r.line))
            except SchemaError:
                continue
            if r.tags:
                tagged.append(audit.TaggedReport.from_dict(r.tags))
        doc = {"records": len(records), "valid": len(parsed),
               "audit": audit.audit_stats(tagged), "length": audit.length_stats(parsed)}
    else:
        if args.action == "validate":
            report = filters.validate_rules(records)
        else:
            report = filters.filter_corpus(records, threshold=cfg["schema.threshold"])
        doc = report.to_dict()
    doc["config"] = cfg.to_dict()
    text = _dump(doc)
    if args.out is not None:
        out = _prepare_out(args.out)
        _write(out / f"{args.action}.json", text)
    else:
        sys.stdout.write(text)
    for d in report.dropped:
        print(f"line {d.line_no}: dropped ({d.reason}) {d.detail}", file=sys.stderr)
    if args.strict and report.dropped:
        return EXIT_FAIL
    return EXIT_OK


def cmd_manifest(args, cfg: CliConfig) -> int:
    from .schema import manifest

    text = Path(args.input).read_text(encoding="utf-8") if args.input else manifest.bundled_manifest_text()
    entries = manifest.parse_manifest(text)
    ratio = manifest.parse_ratio(args.ratio) if args.ratio else None
    totals = None
    if args.totals:
        try:
            totals = tuple(int(x) for x in args.totals.split(","))
        except ValueError:
            raise ConfigError(f"--totals expects three integers, got {args.totals!r}") from None
        if len(totals) != 3:
            raise ConfigError("--totals expects total,deceptive,truthful")
    result = manifest.validate_manifest(entries, ratio, totals)
    for w in result.warnings:
        print(f"warning: {w}", file=sys.stderr)
    t, d, tr = result.totals
    print(f"{len(entries)} editions, totals {t}/{d}/{tr}")
    for v in result.violations:
        print(f"violation: {v}")
    if args.out is not None:
        out = _prepare_out(args.out)
        _write(out / "manifest.json", _dump({**result.to_dict(), "config": cfg.to_dict()}))
    print("PASS" if result.ok else "FAIL")
    return EXIT_OK if result.ok else EXIT_FAIL


COMMANDS = {"gradcheck": cmd_gradcheck, "train": cmd_train, "ablate": cmd_ablate,
            "reports": cmd_reports, "manifest": cmd_manifest}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command in ("train", "ablate") and args.out is None:
            args.out = "out"
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


__all__ = ["main", "build_parser", "resolve_config"]
