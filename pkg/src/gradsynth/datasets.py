"""Random dataset generation: sampled assignments, rendered WAVs, metadata.

A generated dataset directory looks like::

    out_dir/
      chain.txt        # the chain in its line grammar
      metadata.jsonl   # one JSON record per line, in index order
      000000.wav ...   # one mono float32 WAV per record

Every record derives its own generator from the master seed with a
counter-based split (``SeedSequence(seed, spawn_key=(index,))``), so
record k comes out the same whether generated alone, as part of a batch
of 10, or a batch of 10,000 — and batches can render records in
parallel without changing the result.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .audio import RenderConfig, Signal, write_wav
from .chains import (
    CellAddress,
    ChainSpec,
    ChainValidationError,
    ParameterAssignment,
    format_chain,
    generate_signal,
    resolve_optional,
    validate,
)
from .modules import CATALOG, LOG_SCALE_PARAMS, resolve_range

__all__ = [
    "DatasetFormatError",
    "DatasetRecord",
    "assignment_payload",
    "generate_dataset",
    "load_records",
    "parse_assignment",
    "record_rng",
    "render_record",
    "sample_assignment",
    "sample_record",
]

log = logging.getLogger(__name__)

METADATA_NAME = "metadata.jsonl"
CHAIN_NAME = "chain.txt"


class DatasetFormatError(Exception):
    """metadata.jsonl contents do not match the chain or the schema."""


@dataclass(frozen=True)
class DatasetRecord:
    """Ground truth for one rendered sound.

    ``(seed, index)`` replays the record exactly: they rebuild the
    per-record generator, which redraws the same connections and values.
    """

    index: int
    seed: int
    assignment: ParameterAssignment
    wav_name: str

    @property
    def connections_on(self) -> Optional[Mapping]:
        return self.assignment.connections_on


def record_rng(seed: int, index: int) -> np.random.Generator:
    """Per-record generator, independent of batch size and render order."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def sample_assignment(
    chain: ChainSpec,
    rng: np.random.Generator,
    render_config: RenderConfig = RenderConfig(),
) -> ParameterAssignment:
    """Draw one full random assignment for ``chain``.

    Continuous parameters are uniform over their catalog range, except
    Hz-valued ones which are log-uniform so every octave gets equal
    mass.  Envelope segment lengths (range bounded by the render
    duration) are redrawn together until their sum fits the duration.
    Categorical labels are uniform.  Optional connections are resolved
    first; forced activation states override the sampled labels.
    """
    resolution = resolve_optional(chain, rng)
    values: dict = {}
    for cell in sorted(chain.cells, key=lambda c: (c.address.layer, c.address.channel)):
        if cell.kind == "empty":
            continue
        cat = CATALOG[cell.kind]
        params: dict = {}
        budgeted = [p for p in cat.continuous if p.high is None]
        if budgeted:
            while True:
                draws = {
                    p.name: float(rng.uniform(*resolve_range(p, render_config)))
                    for p in budgeted
                }
                if sum(draws.values()) <= render_config.duration:
                    break
            params.update(draws)
        for spec in cat.continuous:
            if spec.name in params:
                continue
            low, high = resolve_range(spec, render_config)
            if (cell.kind, spec.name) in LOG_SCALE_PARAMS:
                params[spec.name] = float(
                    np.exp(rng.uniform(np.log(low), np.log(high)))
                )
            else:
                params[spec.name] = float(rng.uniform(low, high))
        for spec in cat.categorical:
            params[spec.name] = spec.choices[int(rng.integers(len(spec.choices)))]
        values[cell.address] = params
    for (address, name), label in resolution.forced_activations.items():
        values[address][name] = label
    return ParameterAssignment(values, resolution.connections_on)


def sample_record(
    chain: ChainSpec,
    seed: int,
    index: int,
    render_config: RenderConfig = RenderConfig(),
) -> DatasetRecord:
    """Record ``index`` of the dataset keyed by ``seed``."""
    assignment = sample_assignment(chain, record_rng(seed, index), render_config)
    return DatasetRecord(index, seed, assignment, f"{index:06d}.wav")


def render_record(
    chain: ChainSpec,
    record: DatasetRecord,
    render_config: RenderConfig = RenderConfig(),
) -> Signal:
    return generate_signal(chain, record.assignment, render_config).output


def assignment_payload(chain: ChainSpec, assignment: ParameterAssignment) -> dict:
    """JSON-ready dict with ``connections`` and ``params`` keys."""
    connections = [
        {
            "source": [c.source.channel, c.source.layer],
            "dest": [c.dest.channel, c.dest.layer],
            "optional": c.optional,
            "on": assignment.connection_on(c),
        }
        for c in chain.connections
    ]
    params = {
        f"{address.channel},{address.layer}": dict(sorted(cell_params.items()))
        for address, cell_params in sorted(assignment.values.items())
    }
    return {"connections": connections, "params": params}


def parse_assignment(chain: ChainSpec, payload: Mapping) -> ParameterAssignment:
    """Inverse of :func:`assignment_payload`; ``connections`` may be absent."""
    try:
        values = {}
        for key, cell_params in payload["params"].items():
            channel, layer = key.split(",")
            values[CellAddress(int(channel), int(layer))] = dict(cell_params)
        connections_on = None
        if "connections" in payload:
            lookup = {(c.source, c.dest): c for c in chain.connections}
            connections_on = {}
            for entry in payload["connections"]:
                ends = (CellAddress(*entry["source"]), CellAddress(*entry["dest"]))
                if ends not in lookup:
                    raise DatasetFormatError(
                        f"connection {ends[0]} -> {ends[1]} not declared by the chain"
                    )
                connections_on[lookup[ends]] = bool(entry["on"])
        return ParameterAssignment(values, connections_on)
    except DatasetFormatError:
        raise
    except (AttributeError, KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(f"malformed assignment payload: {exc}") from exc


def _record_to_json(chain: ChainSpec, record: DatasetRecord) -> str:
    payload = assignment_payload(chain, record.assignment)
    payload.update(index=record.index, seed=record.seed, wav=record.wav_name)
    return json.dumps(payload, sort_keys=True)


def _record_from_json(chain: ChainSpec, line: str, lineno: int) -> DatasetRecord:
    try:
        payload = json.loads(line)
        return DatasetRecord(
            int(payload["index"]),
            int(payload["seed"]),
            parse_assignment(chain, payload),
            str(payload["wav"]),
        )
    except DatasetFormatError as exc:
        raise DatasetFormatError(f"metadata line {lineno}: {exc}") from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(f"metadata line {lineno}: {exc}") from exc


def load_records(chain: ChainSpec, path) -> list:
    """Parse a metadata.jsonl written by generate_dataset."""
    records = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if line.strip():
                records.append(_record_from_json(chain, line, lineno))
    return records


def _make_record(args: tuple) -> DatasetRecord:
    chain, seed, index, render_config, out_dir = args
    record = sample_record(chain, seed, index, render_config)
    write_wav(render_record(chain, record, render_config), Path(out_dir) / record.wav_name)
    return record


def generate_dataset(
    chain: ChainSpec,
    n: int,
    seed: int,
    out_dir,
    render_config: RenderConfig = RenderConfig(),
    jobs: int = 1,
) -> list:
    """Sample and render ``n`` records into ``out_dir``.

    Writes ``chain.txt``, one WAV per record, and ``metadata.jsonl`` (in
    index order).  Failures partway through leave the files already
    written; the warning log line says which directory to clean up.
    """
    violations = validate(chain)
    if violations:
        raise ChainValidationError(violations)
    if n < 0:
        raise ValueError(f"record count must be >= 0, got {n}")
    out = Path(out_dir)
    job_args = [(chain, seed, index, render_config, str(out)) for index in range(n)]
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / CHAIN_NAME).write_text(format_chain(chain), encoding="utf-8")
        if jobs > 1 and n > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                records = list(pool.map(_make_record, job_args))
        else:
            records = [_make_record(args) for args in job_args]
        with open(out / METADATA_NAME, "w", encoding="utf-8") as handle:
            for record in records:
                handle.write(_record_to_json(chain, record) + "\n")
    except OSError as exc:
        log.warning("dataset generation aborted, partial output left in %s: %s", out, exc)
        raise
    return records
