"""Command-line entry point: render, dataset, match, sweep, bench, gradcheck.

Exit codes: 0 success, 1 runtime failure, 2 input or validation error.
Logs go to stderr; machine-readable outputs (WAV/CSV/JSON) go only to
the named output files.

Run configuration is a flat ``key = value`` text file; '#' starts a
comment.  Keys are dotted ``section.field`` names mirroring the config
dataclasses::

    render.sample_rate = 16000
    render.duration = 1.0
    loss.cells = output            # or: all
    loss.windows = 512,1024
    loss.processings = identity    # identity,log,cumsum_time,cumsum_freq
    loss.norm_p = 1
    loss.transform = spectrogram   # or: mel
    loss.beta = 1.0
    loss.regression_kind = L1
    loss.cumsum_normalize = false
    loss.n_mels = 128
    optimizer.steps = 500
    optimizer.learning_rate = 0.05
    optimizer.algorithm = adam     # or: sgd
    optimizer.beta_schedule = none # or: 0:0.0,200:1.0
    optimizer.restarts = 8
    optimizer.seed = 0
    optimizer.jobs = 1
    paths.out_dir = .
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .audio import AudioIOError, RenderConfig, read_wav, write_wav
from .autodiff import finite_difference_check
from .chains import (
    AssignmentError,
    CellAddress,
    ChainParseError,
    ChainSpec,
    ChainValidationError,
    ParameterAssignment,
    generate_signal,
    parse_chain_file,
    validate,
)
from .datasets import (
    DatasetFormatError,
    assignment_payload,
    generate_dataset,
    parse_assignment,
    sample_assignment,
)
from .experiments import (
    BenchmarkResult,
    _format_distance,
    export_csv,
    loss_surface_sweep,
    perturbation_benchmark,
)
from .losses import LossConfig, LossConfigError, signal_chain_loss
from .matching import MatcherConfigError, OptimizerConfig, match
from .modules import (
    CATALOG,
    LOG_SCALE_PARAMS,
    MissingInputError,
    ParameterRangeError,
    resolve_range,
)
from .spectral import SpectralConfigError

__all__ = ["ConfigError", "RunConfig", "load_run_config", "main"]

log = logging.getLogger("gradsynth")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


class ConfigError(Exception):
    """Run-configuration file is malformed; message names file and key."""


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs: render, loss, optimizer settings and paths."""

    render: RenderConfig = RenderConfig()
    loss: LossConfig = LossConfig()
    optimizer: OptimizerConfig = OptimizerConfig()
    paths: Mapping = field(default_factory=dict)


def _parse_bool(raw: str) -> bool:
    lowered = raw.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    raise ValueError(f"expected true or false, got {raw!r}")


def _parse_schedule(raw: str):
    if raw.lower() == "none":
        return None
    pairs = []
    for piece in raw.split(","):
        step_text, _, beta_text = piece.partition(":")
        if not _:
            raise ValueError(f"schedule entries are step:beta, got {piece!r}")
        pairs.append((int(step_text), float(beta_text)))
    return tuple(pairs)


def _parse_cells(raw: str):
    if raw in ("all", "output"):
        return raw
    raise ValueError(f"cells must be 'all' or 'output', got {raw!r}")


def _int_tuple(raw: str) -> tuple:
    return tuple(int(piece) for piece in raw.split(","))


def _str_tuple(raw: str) -> tuple:
    return tuple(piece.strip() for piece in raw.split(","))


# dotted key -> (section, parser); parsers raise ValueError on bad input
CONFIG_FIELDS = {
    "render.sample_rate": ("render", int),
    "render.duration": ("render", float),
    "loss.cells": ("loss", _parse_cells),
    "loss.windows": ("loss", _int_tuple),
    "loss.processings": ("loss", _str_tuple),
    "loss.norm_p": ("loss", int),
    "loss.transform": ("loss", str),
    "loss.beta": ("loss", float),
    "loss.regression_kind": ("loss", str),
    "loss.cumsum_normalize": ("loss", _parse_bool),
    "loss.n_mels": ("loss", int),
    "optimizer.steps": ("optimizer", int),
    "optimizer.learning_rate": ("optimizer", float),
    "optimizer.algorithm": ("optimizer", str),
    "optimizer.beta_schedule": ("optimizer", _parse_schedule),
    "optimizer.restarts": ("optimizer", int),
    "optimizer.seed": ("optimizer", int),
    "optimizer.jobs": ("optimizer", int),
}


def load_run_config(path) -> tuple:
    """Parse a run-config file; returns (RunConfig, set of keys present).

    Raises :class:`ConfigError` naming the offending line and key for
    unknown keys, unparsable values, and out-of-range fields.
    """
    sections: dict = {"render": {}, "loss": {}, "optimizer": {}}
    paths: dict = {}
    present: set = set()
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stmt = raw.split("#", 1)[0].strip()
        if not stmt:
            continue
        key, eq, value = (piece.strip() for piece in stmt.partition("="))
        if not eq or not key:
            raise ConfigError(f"{path} line {lineno}: expected 'key = value', got {stmt!r}")
        if key.startswith("paths."):
            paths[key[len("paths."):]] = value
            present.add(key)
            continue
        entry = CONFIG_FIELDS.get(key)
        if entry is None:
            raise ConfigError(f"{path} line {lineno}: unknown config key {key!r}")
        section, parser = entry
        try:
            sections[section][key.split(".", 1)[1]] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"{path} line {lineno}: {key}: {exc}") from exc
        present.add(key)
    try:
        run = RunConfig(
            render=RenderConfig(**sections["render"]),
            loss=LossConfig(**sections["loss"]),
            optimizer=OptimizerConfig(**sections["optimizer"]),
            paths=paths,
        )
    except (ValueError, LossConfigError, MatcherConfigError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return run, present


# -- shared helpers -------------------------------------------------------------


def _load_chain(path) -> ChainSpec:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError:
        raise ChainParseError(0, f"{path} is not a text file") from None
    chain = parse_chain_file(text)
    violations = validate(chain)
    if violations:
        raise ChainValidationError(violations)
    return chain


def _load_or_sample_assignment(chain, args, render_config) -> ParameterAssignment:
    if args.params is not None:
        payload = json.loads(Path(args.params).read_text(encoding="utf-8"))
        return parse_assignment(chain, payload)
    rng = np.random.default_rng(args.seed)
    return sample_assignment(chain, rng, render_config)


def _parse_param_key(raw: str) -> tuple:
    """'ch,ly.name' -> (CellAddress, name)."""
    address_text, dot, name = raw.partition(".")
    channel_text, comma, layer_text = address_text.partition(",")
    if not dot or not comma or not name:
        raise ValueError(f"expected 'channel,layer.param', got {raw!r}")
    return CellAddress(int(channel_text), int(layer_text)), name


def _render_flags(parser) -> None:
    parser.add_argument("--sample-rate", type=int, default=16000, help="render sample rate (Hz)")
    parser.add_argument("--duration", type=float, default=1.0, help="render length (seconds)")


def _target_flags(parser) -> None:
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument("--params", help="JSON parameter file (dataset metadata schema)")
    group.add_argument("--random", action="store_true", help="sample parameters randomly")
    parser.add_argument("--seed", type=int, default=0, help="seed for --random")


# -- commands -------------------------------------------------------------------


def cmd_render(args) -> int:
    chain = _load_chain(args.chain)
    render_config = RenderConfig(sample_rate=args.sample_rate, duration=args.duration)
    assignment = _load_or_sample_assignment(chain, args, render_config)
    trace = generate_signal(chain, assignment, render_config)
    out = Path(args.out)
    write_wav(trace.output, out)
    log.info("wrote %s (%d samples at %d Hz)", out, len(trace.output), render_config.sample_rate)
    if args.trace:
        for address, signal in sorted(trace.cell_outputs.items()):
            cell_path = out.parent / f"cell_{address.channel}_{address.layer}.wav"
            write_wav(signal, cell_path)
            log.info("wrote %s", cell_path)
    return EXIT_OK


def cmd_dataset(args) -> int:
    chain = _load_chain(args.chain)
    render_config = RenderConfig(sample_rate=args.sample_rate, duration=args.duration)
    records = generate_dataset(
        chain, args.n, args.seed, args.out, render_config=render_config, jobs=args.jobs
    )
    log.info("wrote %d records to %s", len(records), args.out)
    return EXIT_OK


def cmd_match(args) -> int:
    chain = _load_chain(args.chain)
    if args.config is not None:
        run, present = load_run_config(args.config)
    else:
        run, present = RunConfig(loss=LossConfig(cells="output")), set()
    target = read_wav(args.target)

    render_config = run.render
    wav_duration = len(target) / target.sample_rate
    explicit = {"render.sample_rate", "render.duration"} & present
    if (
        render_config.sample_rate != target.sample_rate
        or render_config.num_samples != len(target)
    ):
        if explicit:
            raise MatcherConfigError(
                f"target WAV is {len(target)} samples at {target.sample_rate} Hz but the "
                f"config asks for {render_config.num_samples} at {render_config.sample_rate} Hz"
            )
        render_config = RenderConfig(sample_rate=target.sample_rate, duration=wav_duration)
        log.info(
            "render settings taken from target WAV: %d Hz, %.3f s",
            render_config.sample_rate,
            wav_duration,
        )

    loss_cfg = run.loss
    if loss_cfg.cells != "output":
        # a bare WAV exposes only the final signal
        loss_cfg = LossConfig(
            cells="output",
            windows=loss_cfg.windows,
            processings=loss_cfg.processings,
            norm_p=loss_cfg.norm_p,
            transform=loss_cfg.transform,
            beta=loss_cfg.beta,
            regression_kind=loss_cfg.regression_kind,
            cumsum_normalize=loss_cfg.cumsum_normalize,
            n_mels=loss_cfg.n_mels,
        )
        log.info("loss cells forced to 'output' for WAV matching")
    opt_cfg = run.optimizer
    if args.jobs is not None:
        opt_cfg = OptimizerConfig(
            steps=opt_cfg.steps,
            learning_rate=opt_cfg.learning_rate,
            algorithm=opt_cfg.algorithm,
            beta_schedule=opt_cfg.beta_schedule,
            restarts=opt_cfg.restarts,
            seed=opt_cfg.seed,
            jobs=args.jobs,
        )

    result = match(target, chain, loss_cfg, opt_cfg, render_config=render_config)

    out_dir = Path(args.out_dir if args.out_dir is not None else run.paths.get("out_dir", "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    matched = generate_signal(chain, result.best, render_config)
    write_wav(matched.output, out_dir / "match.wav")
    report = {
        "best": assignment_payload(chain, result.best),
        "final_loss": result.final_loss,
        "final_spectral": result.final_spectral,
        "final_lsd": result.final_lsd,
        "wall_time": result.wall_time,
        "branches": len(result.branches),
        "diverged_branches": list(result.diverged_branches),
    }
    (out_dir / "result.json").write_text(
        json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    log.info(
        "match done: loss %.6g, lsd %.6g, %.1f s; results in %s",
        result.final_loss,
        result.final_lsd,
        result.wall_time,
        out_dir,
    )
    return EXIT_OK


def cmd_sweep(args) -> int:
    chain = _load_chain(args.chain)
    render_config = RenderConfig(sample_rate=args.sample_rate, duration=args.duration)
    address, name = _parse_param_key(args.param)
    kind = chain.cell_map().get(address)
    if kind is None:
        raise ValueError(f"no cell at {address}")
    spec = next((p for p in CATALOG[kind].continuous if p.name == name), None)
    if spec is None:
        raise ValueError(f"{kind} has no continuous parameter {name!r}")
    low, high = resolve_range(spec, render_config)
    low = args.low if args.low is not None else low
    high = args.high if args.high is not None else high
    if not low < high:
        raise ValueError(f"need low < high, got {low} >= {high}")
    if (kind, name) in LOG_SCALE_PARAMS:
        grid = np.exp(np.linspace(np.log(low), np.log(high), args.points))
    else:
        grid = np.linspace(low, high, args.points)
    target = _load_or_sample_assignment(chain, args, render_config)
    if args.config is not None:
        loss_cfg = load_run_config(args.config)[0].loss
    else:
        loss_cfg = LossConfig(cells="output", windows=(1024,), processings=("identity",))
    sweep = loss_surface_sweep(chain, target, (address, name), grid, loss_cfg, render_config)
    export_csv(sweep, args.out)
    log.info(
        "swept %s over %d points: %d local minima; wrote %s",
        args.param,
        args.points,
        sweep.local_minima,
        args.out,
    )
    return EXIT_OK


def cmd_bench(args) -> int:
    processing = args.processing.replace("-", "_")
    distance = "epsilon" if args.distance == "epsilon" else float(args.distance)
    accuracy = perturbation_benchmark(
        args.waveform,
        distance,
        args.transform,
        processing,
        trials=args.trials,
        seed=args.seed,
        jobs=args.jobs,
    )
    row = BenchmarkResult(
        waveform=args.waveform,
        transform=args.transform,
        processing=processing,
        distance=_format_distance(distance),
        trials=args.trials,
        accuracy=accuracy,
    )
    export_csv([row], args.out)
    log.info(
        "%s %s+%s at %s: accuracy %.4f over %d trials; wrote %s",
        args.waveform,
        args.transform,
        processing,
        args.distance,
        accuracy,
        args.trials,
        args.out,
    )
    return EXIT_OK


# Relative finite-difference step (fraction of each parameter's range).
GRADCHECK_REL_STEP = 1e-6


def _gradcheck_assignment(chain, seed, render_config) -> ParameterAssignment:
    """Random interior assignment with every code path live and smooth.

    Square and saw render through jump discontinuities, so central
    differences there measure the jumps, not the surrogate gradients the
    optimizer actually uses; sine exercises every smooth path.  All
    activations are pinned on and all connections kept, otherwise
    switched-off cells would leave their parameters without gradients to
    check.
    """
    rng = np.random.default_rng(seed)
    assignment = sample_assignment(chain, rng, render_config)
    cmap = chain.cell_map()
    values = {}
    for address, params in assignment.values.items():
        params = dict(params)
        if "waveform" in params:
            params["waveform"] = "sine"
        cat = CATALOG[cmap[address]]
        for name in cat.activation:
            params[name] = "on"
        margined = {}
        for spec in cat.continuous:
            low, high = resolve_range(spec, render_config)
            margin = max((high - low) * GRADCHECK_REL_STEP * 10, 1e-12)
            margined[spec.name] = min(max(params[spec.name], low + margin), high - margin)
        budgeted = [p.name for p in cat.continuous if p.high is None]
        if budgeted:
            slack = 10 * GRADCHECK_REL_STEP * render_config.duration * len(budgeted)
            total = sum(margined[name] for name in budgeted)
            limit = render_config.duration - slack
            if total > limit:
                scale = limit / total
                for name in budgeted:
                    margined[name] *= scale
        params.update(margined)
        values[address] = params
    return ParameterAssignment(values, None)


def cmd_gradcheck(args) -> int:
    chain = _load_chain(args.chain)
    render_config = RenderConfig(sample_rate=args.sample_rate, duration=args.duration)
    target = _gradcheck_assignment(chain, args.seed, render_config)
    prediction = _gradcheck_assignment(chain, args.seed + 1, render_config)
    target_trace = generate_signal(chain, target, render_config)
    loss_cfg = LossConfig(cells="output", windows=(1024,), processings=("identity",))
    cmap = chain.cell_map()

    rows = []
    worst = 0.0
    for address in sorted(prediction.values):
        cat = CATALOG[cmap[address]]
        for spec in cat.continuous:
            key = f"{address.channel},{address.layer}.{spec.name}"
            base = prediction.values[address][spec.name]
            low, high = resolve_range(spec, render_config)

            def build(tracked, _address=address, _name=spec.name):
                values = {a: dict(p) for a, p in prediction.values.items()}
                values[_address][_name] = tracked[key]
                assignment = ParameterAssignment(values, prediction.connections_on)
                trace = generate_signal(chain, assignment, render_config)
                return signal_chain_loss(trace, target_trace, loss_cfg)

            # Hz-scaled parameters get a step relative to the value: the
            # loss wiggles on a cents scale, so a span-relative step is
            # far too coarse at high frequencies.
            scale = base if (cmap[address], spec.name) in LOG_SCALE_PARAMS else high - low
            step = max(scale * GRADCHECK_REL_STEP, 1e-12)
            error = finite_difference_check(build, {key: base}, step)
            rows.append((key, base, error))
            worst = max(worst, error)

    width = max(len(key) for key, _, _ in rows) if rows else 9
    print(f"{'parameter':<{width}}  {'value':>12}  {'max rel err':>12}")
    for key, base, error in rows:
        print(f"{key:<{width}}  {base:>12.6g}  {error:>12.3e}")
    print(f"worst: {worst:.3e} (tolerance {args.tolerance:g})")
    if worst > args.tolerance:
        log.error("gradient check failed: %.3e > %g", worst, args.tolerance)
        return EXIT_RUNTIME
    return EXIT_OK


# -- argument parsing -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gradsynth",
        description="Differentiable modular synthesizer: render, datasets, "
        "sound matching, loss-surface studies.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings only")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="render a chain to WAV")
    p.add_argument("chain", help="chain definition file")
    p.add_argument("--out", required=True, help="output WAV path")
    _target_flags(p)
    _render_flags(p)
    p.add_argument("--trace", action="store_true", help="also write per-cell WAVs")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("dataset", help="generate a random dataset")
    p.add_argument("chain", help="chain definition file")
    p.add_argument("--n", type=int, required=True, help="number of records")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--out", required=True, help="output directory")
    _render_flags(p)
    p.add_argument("--jobs", type=int, default=1, help="parallel render workers")
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("match", help="fit chain parameters to a target WAV")
    p.add_argument("target", help="target WAV file")
    p.add_argument("chain", help="chain definition file")
    p.add_argument("--config", help="run configuration file")
    p.add_argument("--out-dir", help="where to write result.json and match.wav")
    p.add_argument("--jobs", type=int, help="parallel branch workers")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("sweep", help="1-D loss surface along one parameter")
    p.add_argument("chain", help="chain definition file")
    p.add_argument("--param", required=True, help="parameter as 'channel,layer.name'")
    p.add_argument("--points", type=int, default=500, help="grid size")
    p.add_argument("--low", type=float, help="grid start (default: catalog range)")
    p.add_argument("--high", type=float, help="grid end (default: catalog range)")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--config", help="run configuration file (loss section)")
    _target_flags(p)
    _render_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", help="gradient-direction perturbation benchmark")
    p.add_argument("--waveform", choices=("square", "saw"), required=True)
    p.add_argument("--distance", required=True, help="'epsilon' or cents, e.g. 300")
    p.add_argument("--transform", choices=("spectrogram", "mel"), default="spectrogram")
    p.add_argument(
        "--processing",
        required=True,
        help="identity, cumsum-time, or cumsum-freq",
    )
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1, help="parallel trial workers")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcheck", help="finite-difference check of every parameter")
    p.add_argument("--chain", required=True, help="chain definition file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-3, help="max relative error")
    _render_flags(p)
    p.set_defaults(func=cmd_gradcheck)

    return parser


USAGE_ERRORS = (
    AssignmentError,
    ChainParseError,
    ChainValidationError,
    ConfigError,
    DatasetFormatError,
    LossConfigError,
    MatcherConfigError,
    MissingInputError,
    ParameterRangeError,
    SpectralConfigError,
    ValueError,
)


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except USAGE_ERRORS as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (AudioIOError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME
    except MemoryError:
        log.error("out of memory")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
