"""Command-line surface: generate, rank, select, train, eval, pipeline.

Exit codes: 0 success, 1 domain or configuration error, 2 I/O error.
Every successful command appends one provenance line (command, seed,
config hash) to ``run.log`` in its output directory; output files are
reproducible from that line plus the referenced inputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

from . import bandselect, evalkit, models
from .dataset import PROTOCOLS, load_manifest, manifest_sha256, select_protocol
from .swirdiff import DEFAULT_EPSILON, parse_spec_list
from .synthgen import GeneratorConfig, generate_dataset

MODEL_KINDS = {"pixbis": "pixbis", "mccnn": "mccnn", "pixel-svm": "pixel_svm"}


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_common(p, data_required=True):
    p.add_argument("--data", required=data_required, help="dataset root directory")
    p.add_argument("--protocol", choices=PROTOCOLS, default="grand_test")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=0,
                   help="worker/thread cap (0 = library default)")


def build_parser() -> _Parser:
    parser = _Parser(prog="swirpad", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthgen", help="generate a synthetic dataset")
    p.add_argument("--config", help="generator.json overriding the defaults")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config seed")
    p.add_argument("--out", required=True)

    p = sub.add_parser("rank", help="rank ordered band differences")
    _add_common(p)
    p.add_argument("--frames", type=int, default=4,
                   help="sampled frames per presentation used as examples")

    p = sub.add_parser("select", help="rank then run floating subset selection")
    _add_common(p)
    p.add_argument("--model", choices=MODEL_KINDS, default="pixbis")
    p.add_argument("--rank-frames", type=int, default=4)
    p.add_argument("--select-epochs", type=int, default=4)
    p.add_argument("--select-frames", type=int, default=3)
    p.add_argument("--top", type=int, default=12,
                   help="restrict selection to the top-N ranked differences "
                        "(0 = all)")

    p = sub.add_parser("train", help="train a scorer on fixed channels")
    _add_common(p)
    p.add_argument("--model", choices=MODEL_KINDS, default="pixbis")
    p.add_argument("--channels", help='difference list, e.g. "1450-940,1550-1200"')
    p.add_argument("--selection", help="selection.json to read channels from")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--frames", type=int, default=10)

    p = sub.add_parser("eval", help="score a protocol and write reports")
    _add_common(p)
    p.add_argument("--model-file", required=True)
    p.add_argument("--svg", action="store_true", help="also write roc.svg")

    p = sub.add_parser("pipeline",
                       help="generate -> rank -> select -> train -> eval")
    _add_common(p, data_required=False)
    p.add_argument("--config", help="generator.json (ignored when --data given)")
    p.add_argument("--model", choices=MODEL_KINDS, default="pixbis")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--frames", type=int, default=10)
    p.add_argument("--rank-frames", type=int, default=4)
    p.add_argument("--select-epochs", type=int, default=4)
    p.add_argument("--select-frames", type=int, default=3)
    p.add_argument("--top", type=int, default=12)
    p.add_argument("--svg", action="store_true")
    return parser


def _log_run(out_dir, command: str, seed, args: argparse.Namespace) -> None:
    payload = {k: v for k, v in sorted(vars(args).items()) if k != "command"}
    digest = hashlib.sha256(
        json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "run.log"), "a", encoding="utf-8") as fh:
        fh.write(f"command={command} seed={seed} config_sha256={digest} "
                 f"args={json.dumps(payload, sort_keys=True, default=str)}\n")


def _apply_jobs(jobs: int) -> None:
    if jobs and jobs > 0:
        import torch
        torch.set_num_threads(jobs)


def _load_view(data_root, protocol):
    presentations = load_manifest(data_root)
    return select_protocol(presentations, protocol)


def _data_input_size(view) -> int:
    for split in (view.train, view.dev, view.test):
        for p in split:
            return p.frames[0].height
    raise ValueError("protocol view is empty")


def _wavelengths(view) -> tuple[int, ...]:
    for split in (view.train, view.dev, view.test):
        for p in split:
            return p.frames[0].wavelengths
    raise ValueError("protocol view is empty")


def _model_config(kind: str, input_size: int, seed: int, epochs, frames):
    cfg = models.default_config(kind)
    if kind in ("pixbis", "mccnn"):
        from dataclasses import replace
        cfg = replace(cfg, input_size=input_size, seed=seed, frames=frames)
        if epochs is not None:
            cfg = replace(cfg, epochs=epochs)
    else:
        from dataclasses import replace
        cfg = replace(cfg, seed=seed, frames=frames)
    return cfg


def _selection_config(kind: str, input_size: int, seed: int, epochs: int,
                      frames: int):
    from dataclasses import replace
    cfg = models.default_config(kind)
    if kind in ("pixbis", "mccnn"):
        # cheap throwaway trainings: few epochs/frames, bigger batch, hot lr
        return replace(cfg, input_size=input_size, seed=seed, epochs=epochs,
                       frames=frames, batch_size=32, learning_rate=1e-3)
    return replace(cfg, seed=seed, train_frames=1, frames=frames)


def write_roc_svg(points, path, size: int = 400, margin: int = 45) -> None:
    """Self-contained SVG of APCER (x) vs BPCER (y), both in percent."""
    span = size - 2 * margin

    def sx(apcer):
        return margin + span * apcer / 100.0

    def sy(bpcer):
        return size - margin - span * bpcer / 100.0

    coords = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for _, a, b in points)
    ticks = []
    for v in (0, 25, 50, 75, 100):
        ticks.append(f'<text x="{sx(v):.0f}" y="{size - margin + 16}" '
                     f'font-size="10" text-anchor="middle">{v}</text>')
        ticks.append(f'<text x="{margin - 8}" y="{sy(v):.0f}" font-size="10" '
                     f'text-anchor="end" dominant-baseline="middle">{v}</text>')
    svg = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">\n'
        f'<rect width="{size}" height="{size}" fill="white"/>\n'
        f'<rect x="{margin}" y="{margin}" width="{span}" height="{span}" '
        f'fill="none" stroke="black"/>\n'
        f'<polyline points="{coords}" fill="none" stroke="crimson" '
        f'stroke-width="1.5"/>\n'
        + "\n".join(ticks) + "\n"
        f'<text x="{size / 2:.0f}" y="{size - 8}" font-size="11" '
        f'text-anchor="middle">APCER [%]</text>\n'
        f'<text x="12" y="{size / 2:.0f}" font-size="11" text-anchor="middle" '
        f'transform="rotate(-90 12 {size / 2:.0f})">BPCER [%]</text>\n'
        "</svg>\n")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(svg)


# ---------------------------------------------------------------------------
# Command handlers

def _cmd_synthgen(args) -> None:
    cfg = GeneratorConfig.from_json(args.config) if args.config else GeneratorConfig()
    if args.seed is not None:
        from dataclasses import replace
        cfg = replace(cfg, seed=args.seed)
    generate_dataset(cfg, args.out)
    _log_run(args.out, "synthgen", cfg.seed, args)


def _rank(view, frames, epsilon):
    examples = bandselect.examples_from_split(view.train, frames=frames)
    return bandselect.rank_differences(examples, epsilon)


def _cmd_rank(args) -> None:
    view = _load_view(args.data, args.protocol)
    ranked = _rank(view, args.frames, args.epsilon)
    os.makedirs(args.out, exist_ok=True)
    bandselect.write_ranking(ranked, os.path.join(args.out, "ranking.csv"))
    _log_run(args.out, "rank", args.seed, args)


def _truncated(ranked, top):
    if top and top > 0 and top < len(ranked.entries):
        return bandselect.RankedDiffs(entries=ranked.entries[:top],
                                      k_bf=ranked.k_bf, k_a=ranked.k_a)
    return ranked


def _cmd_select(args) -> None:
    _apply_jobs(args.jobs)
    view = _load_view(args.data, args.protocol)
    kind = MODEL_KINDS[args.model]
    ranked = _rank(view, args.rank_frames, args.epsilon)
    os.makedirs(args.out, exist_ok=True)
    bandselect.write_ranking(ranked, os.path.join(args.out, "ranking.csv"))
    cfg = _selection_config(kind, _data_input_size(view), args.seed,
                            args.select_epochs, args.select_frames)
    criterion = bandselect.acer_criterion(kind, cfg, view, args.seed,
                                          args.epsilon)
    result = bandselect.sffs_select(_truncated(ranked, args.top), criterion)
    bandselect.write_selection(result, args.protocol, args.model,
                               os.path.join(args.out, "selection.json"))
    _log_run(args.out, "select", args.seed, args)


def _resolve_channels(args, view, kind):
    if args.channels and args.selection:
        raise UsageError("give either --channels or --selection, not both")
    if args.channels:
        return parse_spec_list(args.channels)
    if args.selection:
        specs, _ = bandselect.read_selection(args.selection)
        return specs
    if kind == "pixel_svm":
        return models.default_svm_specs(_wavelengths(view))
    raise UsageError(f"model {args.model} needs --channels or --selection")


def _train(view, kind, specs, cfg, epsilon, data_root):
    return models.train_scorer(kind, cfg, specs, view.train, view.dev,
                               epsilon=epsilon,
                               manifest_hash=manifest_sha256(data_root))


def _cmd_train(args) -> None:
    _apply_jobs(args.jobs)
    view = _load_view(args.data, args.protocol)
    kind = MODEL_KINDS[args.model]
    specs = _resolve_channels(args, view, kind)
    cfg = _model_config(kind, _data_input_size(view), args.seed, args.epochs,
                        args.frames)
    scorer = _train(view, kind, specs, cfg, args.epsilon, args.data)
    os.makedirs(args.out, exist_ok=True)
    models.save_scorer(scorer, os.path.join(args.out, "model.spad"))
    _log_run(args.out, "train", args.seed, args)


def _evaluate(view, scorer, out, epsilon, svg=False):
    dev_scores = models.score_split(scorer, view.dev, split="dev",
                                    protocol=view.protocol, epsilon=epsilon)
    test_scores = models.score_split(scorer, view.test, split="test",
                                     protocol=view.protocol, epsilon=epsilon)
    paths = evalkit.write_report(dev_scores, test_scores, out)
    if svg:
        write_roc_svg(evalkit.roc_points(test_scores),
                      os.path.join(out, "roc.svg"))
    return paths


def _cmd_eval(args) -> None:
    _apply_jobs(args.jobs)
    view = _load_view(args.data, args.protocol)
    scorer = models.load_scorer(args.model_file)
    os.makedirs(args.out, exist_ok=True)
    _evaluate(view, scorer, args.out, args.epsilon, args.svg)
    _log_run(args.out, "eval", args.seed, args)


def _cmd_pipeline(args) -> None:
    _apply_jobs(args.jobs)
    os.makedirs(args.out, exist_ok=True)
    if args.data:
        data_root = args.data
    else:
        cfg = (GeneratorConfig.from_json(args.config) if args.config
               else GeneratorConfig())
        if args.seed is not None:
            from dataclasses import replace
            cfg = replace(cfg, seed=args.seed)
        data_root = os.path.join(args.out, "data")
        generate_dataset(cfg, data_root)

    view = _load_view(data_root, args.protocol)
    kind = MODEL_KINDS[args.model]
    input_size = _data_input_size(view)

    ranked = _rank(view, args.rank_frames, args.epsilon)
    bandselect.write_ranking(ranked, os.path.join(args.out, "ranking.csv"))

    sel_cfg = _selection_config(kind, input_size, args.seed,
                                args.select_epochs, args.select_frames)
    criterion = bandselect.acer_criterion(kind, sel_cfg, view, args.seed,
                                          args.epsilon)
    result = bandselect.sffs_select(_truncated(ranked, args.top), criterion)
    bandselect.write_selection(result, args.protocol, args.model,
                               os.path.join(args.out, "selection.json"))
    specs = result.selected
    if not specs:
        raise ValueError("selection kept no channels; cannot train")

    cfg = _model_config(kind, input_size, args.seed, args.epochs, args.frames)
    scorer = _train(view, kind, specs, cfg, args.epsilon, data_root)
    models.save_scorer(scorer, os.path.join(args.out, "model.spad"))
    _evaluate(view, scorer, args.out, args.epsilon, args.svg)
    _log_run(args.out, "pipeline", args.seed, args)


_HANDLERS = {
    "synthgen": _cmd_synthgen,
    "rank": _cmd_rank,
    "select": _cmd_select,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "pipeline": _cmd_pipeline,
}


def run(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"swirpad: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    try:
        _HANDLERS[args.command](args)
        return 0
    except UsageError as exc:
        print(f"swirpad: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"swirpad: I/O error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError) as exc:
        print(f"swirpad: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
