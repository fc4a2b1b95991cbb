"""``knitc`` command line: one subcommand per pipeline stage, file-based I/O, exit codes 0/1/2."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Sequence

from . import dataset, experiments, instructions, machine, metrics, render, theory
from .neural import nets
from .neural.train import (IMG2PROG, REFINER, BadInputSize, DivergedLoss, EmptyCorpus, TrainingConfig, decode,
                           infer, train)

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_USAGE = 2

DOMAIN_ERRORS = (instructions.KnitFormatError, instructions.AmbiguousStackSide, instructions.EmptyInput,
                 machine.MachineError, machine.KopsFormatError, render.PgmFormatError,
                 dataset.InsufficientCount, dataset.CorpusFormatError, nets.WeightFormatError,
                 nets.ShapeMismatch, EmptyCorpus, DivergedLoss, BadInputSize,
                 metrics.ImageTooSmall, theory.DegenerateMix, theory.MissingDomain, ValueError)


class UsageError(Exception):
    pass


def _existing(path: str, kind: str = "file") -> Path:
    p = Path(path)
    ok = p.is_dir() if kind == "dir" else p.is_file()
    if not ok:
        raise UsageError(f"{kind} not found: {path}")
    return p


def _report_issues(report: machine.ValidationReport) -> None:
    for issue in report.issues:
        print(issue, file=sys.stderr)


def cmd_validate(a) -> int:
    report = machine.validate(instructions.read_map(_existing(a.map)))
    _report_issues(report)
    print("ok" if report.ok else f"{len(report.errors)} error(s)")
    return EXIT_OK if report.ok else EXIT_DOMAIN


def cmd_repair(a) -> int:
    fixed, log = machine.repair(instructions.read_map(_existing(a.input)), seed=a.seed)
    instructions.write_map(a.output, fixed)
    for act in log.actions:
        print(f"{act.kind}\trow {act.row}\tcol {act.col}\t"
              f"{instructions.CODES[act.before]} -> {instructions.CODES[act.after]}")
    return EXIT_OK


def cmd_compile(a) -> int:
    m = instructions.read_map(_existing(a.input))
    report = machine.validate(m)
    if not report.ok:
        if not a.repair:
            _report_issues(report)
            return EXIT_DOMAIN
        m, _ = machine.repair(m, seed=a.seed)
    text = machine.serialize_program(machine.compile_map(m))
    if a.output:
        Path(a.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_simulate(a) -> int:
    program = machine.parse_program(_existing(a.input).read_text())
    sys.stdout.write(machine.simulate(program, cast_on=a.cast_on).describe())
    return EXIT_OK


def cmd_mirror(a) -> int:
    instructions.write_map(a.output, instructions.mirror_to_back(instructions.read_map(_existing(a.input))))
    return EXIT_OK


def cmd_render(a) -> int:
    m = instructions.read_map(_existing(a.input))
    render.write_pgm(a.output, render.render(m, render.default_atlas(a.tile)))
    return EXIT_OK


def cmd_gen(a) -> int:
    freq = dataset.FrequencyTable.read_tsv(_existing(a.freq)) if a.freq else dataset.FrequencyTable.paper()
    out = Path(a.output)
    out.mkdir(parents=True, exist_ok=True)
    for i, m in enumerate(dataset.generate_valid(a.count, freq, a.seed, a.size)):
        instructions.write_map(out / f"{i:05d}.kp", m)
    return EXIT_OK


def cmd_corpus(a) -> int:
    corpus = dataset.make_corpus(a.synthetic, a.pseudo_real, a.seed, oversample=a.oversample)
    dataset.write_corpus(corpus, a.output)
    return EXIT_OK


def cmd_train(a) -> int:
    corpus = dataset.read_corpus(_existing(a.corpus, "dir"))
    cfg = TrainingConfig(alpha=a.alpha, mode=a.mode, iterations=a.iters, seed=a.seed, lr=a.lr,
                         skips=a.skips)
    result = train(cfg, corpus["train"], log_every=a.log_every)
    nets.save_model(a.output, result.model)
    print(f"final loss {result.final_loss:.6f}")
    return EXIT_OK


def cmd_infer(a) -> int:
    model = nets.load_model(_existing(a.weights))
    probs = infer(model, render.read_pgm(_existing(a.image)), use_refiner=not a.no_refiner)
    instructions.write_map(a.output, decode(probs))
    print(f"pseudo-confidence {metrics.pseudo_confidence(probs):.6f}")
    return EXIT_OK


def cmd_eval(a) -> int:
    pred_dir, gt_dir = _existing(a.pred, "dir"), _existing(a.gt, "dir")
    names = sorted(p.name for p in gt_dir.glob("*.kp"))
    missing = [n for n in names if not (pred_dir / n).is_file()]
    if not names or missing:
        raise UsageError(f"no ground-truth maps in {gt_dir}" if not names
                         else f"missing predictions: {', '.join(missing[:5])}")
    report = metrics.shift_accuracy([instructions.read_map(pred_dir / n) for n in names],
                                    [instructions.read_map(gt_dir / n) for n in names])
    sys.stdout.write(report.to_tsv())
    if a.report:
        report.write_tsv(a.report)
    return EXIT_OK


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def cmd_scale_sweep(a) -> int:
    model = nets.load_model(_existing(a.weights))
    result = metrics.scale_sweep(model, render.read_pgm(_existing(a.image)), a.scales)
    sys.stdout.write(result.to_tsv())
    print(f"# best scale {result.best_scale:g}")
    return EXIT_OK


def cmd_epsilon(a) -> int:
    print(f"{theory.epsilon(a.m, a.alpha, a.beta, a.delta):.10g}")
    return EXIT_OK


def cmd_bound_sim(a) -> int:
    curve = theory.bound_curve(a.alpha, a.trials, theory.ShiftedThresholdTask(shift=a.shift), a.m, a.beta,
                               a.delta, seed=a.seed)
    curve.write_tsv(a.output)
    for row in curve.rows:
        print(f"alpha {row.alpha:g}: bound held in {100 * row.fraction:.1f}% of trials")
    return EXIT_OK


def cmd_experiment(a) -> int:
    base = TrainingConfig(iterations=a.iters)
    seeds = list(range(a.seeds))
    if a.kind == "alpha":
        curve = experiments.alpha_sweep(seeds, base=base)
    else:
        curve = experiments.data_size_sweep(seeds, base=base)
    sys.stdout.write(curve.to_tsv())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="knitc", description="Knitting instruction toolchain.")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(fn=fn)
        return sp

    sp = add("validate", cmd_validate, "check a map for compile errors")
    sp.add_argument("map")
    sp = add("repair", cmd_repair, "rewrite a map so it validates")
    sp.add_argument("input")
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp = add("compile", cmd_compile, "compile a map to machine operations")
    sp.add_argument("input")
    sp.add_argument("-o", "--output")
    sp.add_argument("--repair", action="store_true")
    sp.add_argument("--seed", type=int, default=0)
    sp = add("simulate", cmd_simulate, "run a machine program and print the needle state")
    sp.add_argument("input")
    sp.add_argument("--cast-on", type=int, default=0, help="front needles holding a loop at the start")
    sp = add("mirror", cmd_mirror, "swap front and back instructions")
    sp.add_argument("input")
    sp.add_argument("-o", "--output", required=True)
    sp = add("render", cmd_render, "render a map to a PGM image")
    sp.add_argument("input")
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--tile", type=int, default=render.TILE_SIZE)
    sp = add("gen", cmd_gen, "generate valid random maps")
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--freq")
    sp.add_argument("--size", type=int, default=dataset.MAP_SIZE)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("-o", "--output", required=True)
    sp = add("corpus", cmd_corpus, "build a synthetic and pseudo-real training corpus")
    sp.add_argument("--synthetic", type=int, required=True)
    sp.add_argument("--pseudo-real", type=int, required=True)
    sp.add_argument("--oversample", action="store_true")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("-o", "--output", required=True)
    sp = add("train", cmd_train, "train a model on a corpus")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--alpha", type=float, default=0.5)
    sp.add_argument("--mode", choices=(IMG2PROG, REFINER), default=IMG2PROG)
    sp.add_argument("--iters", type=int, default=1000)
    sp.add_argument("--lr", type=float, default=5e-4)
    sp.add_argument("--skips", action="store_true")
    sp.add_argument("--log-every", type=int, default=0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("-o", "--output", required=True)
    sp = add("infer", cmd_infer, "predict a map from a 160x160 image")
    sp.add_argument("--weights", required=True)
    sp.add_argument("--image", required=True)
    sp.add_argument("--no-refiner", action="store_true")
    sp.add_argument("-o", "--output", required=True)
    sp = add("eval", cmd_eval, "score predicted maps against ground truth")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--report")
    sp = add("scale-sweep", cmd_scale_sweep, "pick the pixel scale with the highest pseudo-confidence")
    sp.add_argument("--weights", required=True)
    sp.add_argument("--image", required=True)
    sp.add_argument("--scales", type=_floats, default=list(experiments.SCALES))
    sp = add("epsilon", cmd_epsilon, "evaluate the sample-complexity term")
    sp.add_argument("--m", type=int, required=True)
    sp.add_argument("--alpha", type=float, required=True)
    sp.add_argument("--beta", type=float, required=True)
    sp.add_argument("--delta", type=float, required=True)
    sp = add("bound-sim", cmd_bound_sim, "Monte-Carlo check of the mixed-domain bound")
    sp.add_argument("--trials", type=int, required=True)
    sp.add_argument("--m", type=int, required=True)
    sp.add_argument("--alpha", type=_floats, required=True, help="one value or a comma-separated curve")
    sp.add_argument("--beta", type=float, required=True)
    sp.add_argument("--delta", type=float, required=True)
    sp.add_argument("--shift", type=float, default=0.2)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("-o", "--output", required=True)
    sp = add("experiment", cmd_experiment, "run the alpha or data-size trend experiment")
    sp.add_argument("kind", choices=("alpha", "size"))
    sp.add_argument("--seeds", type=int, default=5)
    sp.add_argument("--iters", type=int, default=300)
    return p


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"knitc: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except machine.InvalidMap as exc:
        _report_issues(exc.report)
        return EXIT_DOMAIN
    except DOMAIN_ERRORS as exc:
        print(f"knitc: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except OSError as exc:
        print(f"knitc: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
