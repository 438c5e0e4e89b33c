"""Command-line entry point: ``stfusion <command> ...``.

Commands
    synth       write a seeded synthetic scene in the trajectory text format
    train       fit the model; writes checkpoints, history.csv and config.txt
    evaluate    metrics CSV for a checkpoint or a prediction file
    predict     write ``frame agent x y`` predictions from a checkpoint
    graph-dump  integrated adjacency of one window
    plot        weighted RMSE versus horizon as SVG

Every command is deterministic in its inputs and flags.  Errors print one
line to stderr and exit with status 1; bad usage exits with status 2.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError
from .config import ConfigError, RunConfig
from .data import (ParseError, ScenarioSpec, SceneWindow, build_windows, generate_synthetic,
                   normalize_window, parse_predictions, parse_records, write_predictions, write_records)
from .graph import build_graph, dump_graph
from .metrics import EvaluationError, evaluate, read_metrics_csv
from .plot import render_svg, rmse_series
from .training import fit, load_checkpoint, predict, write_history

log = logging.getLogger("stfusion")

MOTIONS = {"cv": "constant_velocity", "turn": "constant_turn", "yield": "approach_yield"}


class CommandError(RuntimeError):
    pass


# -- helpers -----------------------------------------------------------------------------


def data_files(path) -> list[Path]:
    """A single file, or every ``*.txt`` file of a directory in name order."""
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.txt"))
        if not files:
            raise CommandError(f"no .txt files in {path}")
        return files
    if not path.exists():
        raise CommandError(f"no such file: {path}")
    return [path]


def load_windows(path, config: RunConfig, stride: int | None = None) -> list[SceneWindow]:
    """Normalized windows of every sequence file under ``path``; files are never joined."""
    windows = []
    for file in data_files(path):
        with open(file, encoding="utf-8") as fh:
            records = parse_records(fh)
        windows += build_windows(records, config.t_his, config.t_pred, stride or config.stride, config.n_max)
    if not windows:
        raise CommandError(f"{path}: no complete {config.t_his + config.t_pred}-frame window")
    return [normalize_window(w) for w in windows]


def scoring_windows(path, config: RunConfig) -> list[SceneWindow]:
    # futures of consecutive windows must not overlap, or a prediction file would be ambiguous
    return load_windows(path, config, stride=config.t_pred)


def resolve_config(path, seed: int | None) -> RunConfig:
    config = RunConfig.load(path) if path else RunConfig()
    return config.with_updates(seed=seed) if seed is not None else config


def predictions_from_file(path, windows: list[SceneWindow]) -> list[np.ndarray]:
    """Look up each scored agent's future in a ``frame agent x y`` file (normalized frame)."""
    with open(path, encoding="utf-8") as fh:
        table = parse_predictions(fh)
    out = []
    for w in windows:
        pos = np.zeros((w.t_pred, w.n_agents, 2))
        for n in np.flatnonzero(w.predicted):
            for k in range(w.t_pred):
                key = (int(w.frame_ids[w.t_his + k]), int(w.agent_ids[n]))
                if key in table:
                    pos[k, n] = np.asarray(table[key]) - w.anchor
                elif w.mask[w.t_his + k, n]:
                    raise CommandError(f"{path}: no prediction for frame {key[0]} agent {key[1]}")
        out.append(pos)
    return out


def _open_out(path):
    if path is None or str(path) == "-":
        return sys.stdout
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", encoding="utf-8", newline="")


def _write_text(path, text: str) -> None:
    sink = _open_out(path)
    try:
        sink.write(text)
    finally:
        if sink is not sys.stdout:
            sink.close()


# -- commands --------------------------------------------------------------------------------


def cmd_synth(args) -> None:
    kinds = []
    for name in args.motion.split(","):
        if name not in MOTIONS:
            raise CommandError(f"unknown motion {name!r}; choose from {', '.join(MOTIONS)}")
        kinds.append(MOTIONS[name])
    try:
        spec = ScenarioSpec(n_agents=args.agents, motion_kinds=tuple(kinds), noise_sigma=args.noise,
                            duration=args.frames, seed=args.seed,
                            speed_range=(args.min_speed, args.max_speed))
    except ValueError as exc:
        raise CommandError(str(exc)) from None
    sink = _open_out(args.out)
    try:
        write_records(generate_synthetic(spec), sink)
    finally:
        if sink is not sys.stdout:
            sink.close()


def cmd_train(args) -> None:
    config = resolve_config(args.config, args.seed)
    windows = load_windows(args.data, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config.to_text(), encoding="utf-8")
    log.info("training on %d windows for %d epochs", len(windows), config.epochs)
    result = fit(windows, config, out_dir=out, resume=args.resume)
    with open(out / "history.csv", "w", encoding="utf-8", newline="") as fh:
        write_history(result.history, fh)
    epoch, value, wsade = result.history[-1]
    log.info("epoch %d: loss %.6g, held-out WSADE %.6g", epoch, value, wsade)


def _checkpoint_config(args):
    params, _, config, _, _ = load_checkpoint(args.checkpoint)
    if args.config:
        given = RunConfig.load(args.config)
        if given.model_config() != config.model_config():
            raise CommandError(f"{args.config} does not describe the model stored in {args.checkpoint}")
        config = config.with_updates(t_his=given.t_his, t_pred=given.t_pred, n_max=given.n_max,
                                     d_close=given.d_close, stride=given.stride)
    return params, config


def cmd_evaluate(args) -> None:
    if (args.checkpoint is None) == (args.predictions is None):
        raise CommandError("evaluate needs exactly one of --checkpoint or --predictions")
    if args.checkpoint is not None:
        params, config = _checkpoint_config(args)
        windows = scoring_windows(args.data, config)
        preds = predict(windows, params, config.model_config(), config.graph_config())
    else:
        config = resolve_config(args.config, None)
        windows = scoring_windows(args.data, config)
        preds = predictions_from_file(args.predictions, windows)
    _write_text(args.out, evaluate(preds, windows).to_csv())


def cmd_predict(args) -> None:
    params, config = _checkpoint_config(args)
    windows = scoring_windows(args.data, config)
    preds = predict(windows, params, config.model_config(), config.graph_config())
    sink = _open_out(args.out)
    try:
        write_predictions(windows, preds, sink)
    finally:
        if sink is not sys.stdout:
            sink.close()


def cmd_graph_dump(args) -> None:
    config = resolve_config(args.config, None)
    windows = load_windows(args.data, config)
    if not 0 <= args.window < len(windows):
        raise CommandError(f"window index {args.window} out of range (0..{len(windows) - 1})")
    w = windows[args.window]
    graph = build_graph(w.history, w.mask[:w.t_his], config.d_close)
    sink = _open_out(args.out)
    try:
        dump_graph(graph, sink)
    finally:
        if sink is not sys.stdout:
            sink.close()


def cmd_plot(args) -> None:
    with open(args.metrics, encoding="utf-8") as fh:
        rows = read_metrics_csv(fh)
    points = rmse_series(rows, "weighted")
    if not points:
        raise CommandError(f"{args.metrics}: no weighted RMSE rows")
    _write_text(args.out, render_svg(points))


# -- parser --------------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stfusion", description="Spatial-temporal fusion trajectory prediction.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        return p

    p = command("synth", cmd_synth, "write a synthetic scene")
    p.add_argument("--agents", type=int, default=4)
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--motion", default="cv,turn", help="comma list of cv, turn, yield")
    p.add_argument("--noise", type=float, default=0.0, help="position noise sigma in meters")
    p.add_argument("--min-speed", type=float, default=0.5)
    p.add_argument("--max-speed", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="-")

    p = command("train", cmd_train, "train a model")
    p.add_argument("--data", required=True, help="trajectory file or directory of them")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--out", required=True, help="output directory")

    p = command("evaluate", cmd_evaluate, "write a metrics CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--predictions", help="frame agent x y file instead of a checkpoint")
    p.add_argument("--config")
    p.add_argument("--out", default="-")

    p = command("predict", cmd_predict, "write predictions")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config")
    p.add_argument("--out", default="-")

    p = command("graph-dump", cmd_graph_dump, "dump one window's integrated adjacency")
    p.add_argument("--data", required=True)
    p.add_argument("--window", type=int, default=0)
    p.add_argument("--config")
    p.add_argument("--out", default="-")

    p = command("plot", cmd_plot, "plot weighted RMSE against horizon")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out", default="-")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except (CommandError, ConfigError, CheckpointError, EvaluationError, ParseError, ValueError, OSError) as exc:
        print(f"stfusion {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
