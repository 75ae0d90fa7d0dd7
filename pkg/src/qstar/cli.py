"""Command-line entry point: ``qstar {train,eval,ablate,gradcheck,gen-data}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, load_config
from .harness import (
    ABLATION_ALIASES,
    ABLATIONS,
    NumericalError,
    RunReport,
    ablation_config,
    ablation_table,
    evaluate,
    run_ablation_suite,
    train,
)
from .qcr import UnimplementedVariantError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
log = logging.getLogger("qstar")


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["output_path"] = args.out
    if getattr(args, "prompt_mode", None):
        changes["prompt_mode"] = args.prompt_mode
    if getattr(args, "qgmc_variant", None):
        changes["qgmc_variant"] = args.qgmc_variant
    cfg = cfg.replace(**changes) if changes else cfg
    ablate = getattr(args, "ablate", None)
    if ablate and args.command != "ablate":
        try:
            cfg = ablation_config(cfg, ablate)
        except KeyError as exc:
            raise ConfigError(exc.args[0]) from None
    return cfg


def _cmd_train(args) -> int:
    from .model import save_params
    from .plotting import plot_losses

    cfg = _config(args)
    report, model = train(cfg, progress=lambda e, loss: log.info("epoch %d loss %.4f", e, loss))
    out = Path(cfg.output_path)
    path = report.write(out, "report")
    save_params(model, out / "params.npz")
    plot_losses([("train", report)], out / "loss.png")
    print(report.document(), end="")
    log.info("wrote %s", path)
    return EXIT_OK


def _cmd_eval(args) -> int:
    from .model import build_model, load_params
    from .synth import build_split

    cfg = _config(args)
    model = build_model(cfg)
    if args.params:
        load_params(model, args.params)
    metrics = evaluate(model, build_split(cfg, "val"))
    doc = json.dumps({"seed": cfg.seed, "config": cfg.as_dict(), **metrics}, indent=2, sort_keys=True) + "\n"
    out = Path(cfg.output_path)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval.json").write_text(doc)
    print(doc, end="")
    return EXIT_OK


def _cmd_ablate(args) -> int:
    from .plotting import plot_ablation, plot_losses

    cfg = _config(args)
    names = None
    if args.ablate:
        names = [n.strip() for n in args.ablate.split(",") if n.strip()]
        for n in names:
            try:
                ablation_config(cfg, n)
            except KeyError as exc:
                raise ConfigError(exc.args[0]) from None
    out = Path(cfg.output_path)

    def done(name: str, report: RunReport) -> None:
        report.write(out, name)
        log.info("%s overall %.4f", name, report.accuracy["overall"])

    rows = run_ablation_suite(cfg, names, progress=done)
    table = ablation_table(rows)
    (out / "ablation.csv").write_text(table)
    plot_ablation(rows, out / "ablation.png")
    plot_losses(rows, out / "ablation_losses.png")
    print(table, end="")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    from .gradsuite import run_gradient_suite

    seeds = [args.seed] if args.seed is not None else list(range(5))
    failed = False
    lines = []
    for seed in seeds:
        for rep in run_gradient_suite(seed):
            lines.append(f"seed {seed} {rep}")
            print(lines[-1])
            failed |= not rep.passed
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "gradcheck.txt").write_text("\n".join(lines) + "\n")
    return EXIT_NUMERICAL if failed else EXIT_OK


def _cmd_gen_data(args) -> int:
    from .fixture import write_fixture
    from .synth import Codebooks, make_sample

    cfg = _config(args)
    out = Path(cfg.output_path)
    out.mkdir(parents=True, exist_ok=True)
    books = Codebooks.from_config(cfg)
    rows = ["index,file,template,question_type,label,frequency_critical"]
    for i in range(args.count):
        s = make_sample(i, cfg, books)
        name = f"sample_{i:05d}.qstf"
        write_fixture(s.bundle, out / name)
        rows.append(f"{i},{name},{s.question.template_id},{s.bundle.question_type},{s.bundle.label},{int(s.frequency_critical)}")
    (out / "manifest.csv").write_text("\n".join(rows) + "\n")
    print(f"wrote {args.count} fixtures to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qstar", description="Desk-scale audio-visual question answering experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, ablation=True):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int, help="run seed (overrides the config)")
        p.add_argument("--out", help="output directory (overrides output_path)")
        if ablation:
            p.add_argument("--prompt-mode", dest="prompt_mode", help="none, keywords, declarative_translation or caption")
            p.add_argument("--qgmc-variant", dest="qgmc_variant", help="early-stage strategy a, b, c or d")

    names = ", ".join([*ABLATIONS, *ABLATION_ALIASES])
    p = sub.add_parser("train", help="train one model and write its report")
    common(p)
    p.add_argument("--ablate", help=f"one ablation row: {names}")
    p = sub.add_parser("eval", help="evaluate saved parameters on the validation split")
    common(p)
    p.add_argument("--ablate", help="ablation row the parameters were trained with")
    p.add_argument("--params", help="parameters saved by train (params.npz)")
    p = sub.add_parser("ablate", help="run the ablation grid and write the comparison table")
    common(p)
    p.add_argument("--ablate", help="comma-separated subset of rows (default: all)")
    p = sub.add_parser("gradcheck", help="finite-difference checks of every block at toy sizes")
    p.add_argument("--seed", type=int, help="single seed (default: seeds 0-4)")
    p.add_argument("--out", help="directory for gradcheck.txt")
    p = sub.add_parser("gen-data", help="write synthetic samples as fixture files")
    common(p, ablation=False)
    p.add_argument("--count", type=int, default=16, help="number of samples")
    return parser


COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "gradcheck": _cmd_gradcheck,
    "gen-data": _cmd_gen_data,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, UnimplementedVariantError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
