"""Cell-matrix chain definitions: parsing, validation, and layer-ordered
sound generation.

A chain is a 2-D matrix of cells addressed by (channel, layer).  Cells
host at most one module; connections only run from lower to strictly
higher layers.  Generation walks layers in ascending order and averages
the final layer's cell outputs across channels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, NamedTuple, Optional, Sequence

import numpy as np

from gradsynth.audio import RenderConfig, Signal, zeros
from gradsynth.modules import (
    CATALOG,
    MissingInputError,
    apply_adsr,
    apply_lowpass,
    apply_tremolo,
    mix,
    render_fm_oscillator,
    render_lfo,
    render_oscillator,
)

__all__ = [
    "AssignmentError",
    "Cell",
    "CellAddress",
    "ChainParseError",
    "ChainSpec",
    "ChainValidationError",
    "Connection",
    "ParameterAssignment",
    "RenderTrace",
    "Resolution",
    "Violation",
    "format_chain",
    "generate_signal",
    "parse_chain_file",
    "resolve_optional",
    "validate",
]

CELL_KINDS = tuple(CATALOG) + ("empty",)


class ChainParseError(Exception):
    """Chain file text violates the grammar; carries the offending line."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ChainValidationError(Exception):
    """A structurally invalid chain was passed where a valid one is required."""

    def __init__(self, violations: Sequence["Violation"]):
        super().__init__("; ".join(v.message for v in violations))
        self.violations = tuple(violations)


class AssignmentError(Exception):
    """Parameter assignment does not cover the chain's catalog exactly."""


class CellAddress(NamedTuple):
    channel: int
    layer: int

    def __str__(self):
        return f"({self.channel},{self.layer})"


@dataclass(frozen=True)
class Connection:
    source: CellAddress
    dest: CellAddress
    optional: bool = False


@dataclass(frozen=True)
class Cell:
    address: CellAddress
    kind: str


@dataclass(frozen=True)
class ChainSpec:
    name: str
    cells: tuple
    connections: tuple

    def cell_map(self) -> dict:
        return {c.address: c.kind for c in self.cells}

    def max_layer(self) -> int:
        return max(c.address.layer for c in self.cells)

    def incoming(self, address: CellAddress) -> tuple:
        """Connections into a cell, ordered by source (layer, channel)."""
        found = [c for c in self.connections if c.dest == address]
        found.sort(key=lambda c: (c.source.layer, c.source.channel))
        return tuple(found)


@dataclass(frozen=True)
class Violation:
    code: str
    message: str


@dataclass(frozen=True)
class ParameterAssignment:
    """Values per cell plus resolved optional-connection states.

    ``connections_on`` maps Connection -> bool; None keeps every declared
    connection on (the all-fixed interpretation).
    """

    values: Mapping
    connections_on: Optional[Mapping] = None

    def connection_on(self, conn: Connection) -> bool:
        if self.connections_on is None:
            return True
        return self.connections_on.get(conn, not conn.optional)


@dataclass(frozen=True)
class Resolution:
    """Concrete draw of optional connections + forced activation states."""

    connections_on: Mapping
    forced_activations: Mapping  # (CellAddress, param name) -> label


@dataclass(frozen=True)
class RenderTrace:
    """Output of every non-empty cell plus the averaged final signal."""

    cell_outputs: Mapping
    output: Signal


def _parse_address(token: str, line: int) -> CellAddress:
    parts = token.split(",")
    if len(parts) != 2:
        raise ChainParseError(line, f"malformed address {token!r}; expected <ch>,<ly>")
    try:
        channel, layer = int(parts[0]), int(parts[1])
    except ValueError:
        raise ChainParseError(
            line, f"malformed address {token!r}; channel and layer must be integers"
        ) from None
    if channel < 0 or layer < 0:
        raise ChainParseError(line, f"malformed address {token!r}; indices must be >= 0")
    return CellAddress(channel, layer)


def parse_chain_file(text: str) -> ChainSpec:
    """Parse the line-oriented chain grammar.

    Statements: ``chain <name>``, ``cell <ch> <ly> <kind>``,
    ``connect <ch>,<ly> -> <ch>,<ly> [optional]``.  '#' starts a comment.
    """
    name = None
    cells: list = []
    seen: dict = {}
    connections: list = []
    connection_lines: list = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stmt = raw.split("#", 1)[0].strip()
        if not stmt:
            continue
        tokens = stmt.split()
        head = tokens[0]
        if head == "chain":
            if name is not None:
                raise ChainParseError(lineno, "chain already declared")
            if len(tokens) != 2:
                raise ChainParseError(lineno, "expected: chain <name>")
            name = tokens[1]
        elif head == "cell":
            if name is None:
                raise ChainParseError(lineno, "cell before chain declaration")
            if len(tokens) != 4:
                raise ChainParseError(lineno, "expected: cell <channel> <layer> <kind>")
            try:
                channel, layer = int(tokens[1]), int(tokens[2])
            except ValueError:
                raise ChainParseError(
                    lineno, "malformed address; channel and layer must be integers"
                ) from None
            if channel < 0 or layer < 0:
                raise ChainParseError(lineno, "malformed address; indices must be >= 0")
            kind = tokens[3]
            if kind not in CELL_KINDS:
                raise ChainParseError(
                    lineno,
                    f"unknown module kind {kind!r}; expected one of {', '.join(CELL_KINDS)}",
                )
            address = CellAddress(channel, layer)
            if address in seen:
                raise ChainParseError(
                    lineno, f"duplicate cell {address} (first declared on line {seen[address]})"
                )
            seen[address] = lineno
            cells.append(Cell(address, kind))
        elif head == "connect":
            if name is None:
                raise ChainParseError(lineno, "connect before chain declaration")
            if len(tokens) not in (4, 5) or tokens[2] != "->":
                raise ChainParseError(
                    lineno, "expected: connect <ch>,<ly> -> <ch>,<ly> [optional]"
                )
            optional = False
            if len(tokens) == 5:
                if tokens[4] != "optional":
                    raise ChainParseError(
                        lineno, f"unexpected token {tokens[4]!r}; expected 'optional'"
                    )
                optional = True
            source = _parse_address(tokens[1], lineno)
            dest = _parse_address(tokens[3], lineno)
            connections.append(Connection(source, dest, optional))
            connection_lines.append(lineno)
        else:
            raise ChainParseError(
                lineno, f"unknown directive {head!r}; expected chain, cell, or connect"
            )
    if name is None:
        raise ChainParseError(0, "no chain declared")
    declared = set(seen)
    for conn, lineno in zip(connections, connection_lines):
        for end, label in ((conn.source, "source"), (conn.dest, "destination")):
            if end not in declared:
                raise ChainParseError(
                    lineno, f"dangling connection: {label} cell {end} not declared"
                )
    return ChainSpec(name, tuple(cells), tuple(connections))


def format_chain(chain: ChainSpec) -> str:
    """Render a chain back to the line grammar. parse(format(c)) == c."""
    lines = [f"chain {chain.name}"]
    for cell in chain.cells:
        lines.append(f"cell {cell.address.channel} {cell.address.layer} {cell.kind}")
    for conn in chain.connections:
        suffix = " optional" if conn.optional else ""
        lines.append(
            f"connect {conn.source.channel},{conn.source.layer}"
            f" -> {conn.dest.channel},{conn.dest.layer}{suffix}"
        )
    return "\n".join(lines) + "\n"


def validate(chain: ChainSpec) -> list:
    """Collect structural violations; an empty list means the chain is valid."""
    violations: list = []
    if not chain.cells:
        violations.append(Violation("no_cells", "chain declares no cells"))
        return violations
    seen: set = set()
    cmap: dict = {}
    for cell in chain.cells:
        addr = cell.address
        if addr.channel < 0 or addr.layer < 0:
            violations.append(
                Violation("bad_address", f"cell {addr} has negative indices")
            )
        if addr in seen:
            violations.append(
                Violation("cell_occupied", f"cell {addr} hosts more than one module")
            )
        seen.add(addr)
        if cell.kind not in CELL_KINDS:
            violations.append(
                Violation("unknown_kind", f"cell {addr} has unknown kind {cell.kind!r}")
            )
        cmap.setdefault(addr, cell.kind)
    seen_conns: set = set()
    for conn in chain.connections:
        dangling = False
        for end, label in ((conn.source, "source"), (conn.dest, "destination")):
            if end not in cmap:
                violations.append(
                    Violation(
                        "dangling_connection",
                        f"connection {conn.source}->{conn.dest}: {label} {end} not declared",
                    )
                )
                dangling = True
        if not dangling and conn.source.layer >= conn.dest.layer:
            violations.append(
                Violation(
                    "backward_connection",
                    f"connection {conn.source}->{conn.dest} does not advance layers",
                )
            )
        key = (conn.source, conn.dest)
        if key in seen_conns:
            violations.append(
                Violation(
                    "duplicate_connection",
                    f"connection {conn.source}->{conn.dest} declared twice",
                )
            )
        seen_conns.add(key)
    for cell in chain.cells:
        if cell.kind == "empty" or cell.kind not in CATALOG:
            continue
        cat = CATALOG[cell.kind]
        sources = [c.source for c in chain.incoming(cell.address) if c.source in cmap]
        count = len(sources)
        if count < cat.min_inputs or (cat.max_inputs is not None and count > cat.max_inputs):
            if cat.max_inputs == 0:
                detail = "accepts no inputs"
            elif cat.max_inputs is None:
                detail = f"requires at least {cat.min_inputs} input(s)"
            elif cat.min_inputs == cat.max_inputs:
                detail = f"requires exactly {cat.min_inputs} input(s)"
            else:
                detail = f"requires {cat.min_inputs}..{cat.max_inputs} input(s)"
            violations.append(
                Violation("arity", f"{cell.kind} cell {cell.address} {detail}, got {count}")
            )
        if cell.kind == "tremolo" and count == 2:
            lfo_inputs = sum(1 for s in sources if cmap.get(s) == "lfo")
            if lfo_inputs != 1:
                violations.append(
                    Violation(
                        "missing_required_input",
                        f"tremolo cell {cell.address} requires exactly one LFO input "
                        f"and one audio input, got {lfo_inputs} LFO input(s)",
                    )
                )
    return violations


def resolve_optional(chain: ChainSpec, rng: np.random.Generator) -> Resolution:
    """Draw optional connections on/off (p = 0.5 each) and force consistent
    activation states.

    Draws that would strand a cell below its minimum input arity (or strip
    a tremolo's only LFO) are repaired by re-enabling the dropped optional
    connections in source order, so the resolved chain always renders.
    A generator whose modulator connection resolved off is forced to
    bypass (fm_active = "off").
    """
    states: dict = {}
    for conn in chain.connections:
        states[conn] = True if not conn.optional else bool(rng.random() < 0.5)
    cmap = chain.cell_map()
    for cell in sorted(chain.cells, key=lambda c: (c.address.layer, c.address.channel)):
        if cell.kind == "empty" or cell.kind not in CATALOG:
            continue
        cat = CATALOG[cell.kind]
        incoming = chain.incoming(cell.address)
        def on_sources():
            return [c.source for c in incoming if states[c]]
        for conn in incoming:
            if len(on_sources()) >= cat.min_inputs:
                break
            if not states[conn]:
                states[conn] = True
        if cell.kind == "tremolo":
            has_lfo = any(cmap.get(s) == "lfo" for s in on_sources())
            if not has_lfo:
                for conn in incoming:
                    if not states[conn] and cmap.get(conn.source) == "lfo":
                        states[conn] = True
                        break
    forced: dict = {}
    for cell in sorted(chain.cells, key=lambda c: (c.address.layer, c.address.channel)):
        if cell.kind == "fm_osc":
            live = [c for c in chain.incoming(cell.address) if states[c]]
            if not live:
                forced[(cell.address, "fm_active")] = "off"
    return Resolution(states, forced)


def _check_assignment(kind: str, address: CellAddress, params: Mapping) -> None:
    expected = set(CATALOG[kind].param_names())
    got = set(params)
    missing = expected - got
    extra = got - expected
    if missing:
        raise AssignmentError(
            f"cell {address} ({kind}): missing parameter(s) {sorted(missing)}"
        )
    if extra:
        raise AssignmentError(
            f"cell {address} ({kind}): unknown parameter(s) {sorted(extra)}"
        )


def generate_signal(
    chain: ChainSpec, assignment: ParameterAssignment, config: RenderConfig
) -> RenderTrace:
    """Evaluate cells in ascending layer order and average the final layer.

    Inactive sources (switched-off generators, empty cells) emit the zero
    signal; processors whose live inputs are all inactive are skipped and
    likewise emit zeros.
    """
    violations = validate(chain)
    if violations:
        raise ChainValidationError(violations)
    cmap = chain.cell_map()
    outputs: dict = {}
    active: dict = {}
    for cell in sorted(chain.cells, key=lambda c: (c.address.layer, c.address.channel)):
        addr, kind = cell.address, cell.kind
        if kind == "empty":
            outputs[addr] = zeros(config)
            active[addr] = False
            continue
        params = assignment.values.get(addr)
        if params is None:
            raise AssignmentError(f"cell {addr} ({kind}): no parameters assigned")
        _check_assignment(kind, addr, params)
        live = [c for c in chain.incoming(addr) if assignment.connection_on(c)]
        in_sigs = [outputs[c.source] for c in live]
        in_active = [active[c.source] for c in live]
        if kind == "osc":
            out = render_oscillator(params, config)
            is_active = params["active"] == "on"
        elif kind == "lfo":
            out = render_lfo(params, config)
            is_active = params["active"] == "on"
        elif kind == "fm_osc":
            modulator = in_sigs[0] if in_sigs else None
            out = render_fm_oscillator(params, modulator, config)
            is_active = True
        elif kind == "mix":
            if any(in_active):
                out = mix(in_sigs)
                is_active = True
            else:
                out, is_active = zeros(config), False
        elif kind == "tremolo":
            lfo_pos = [i for i, c in enumerate(live) if cmap.get(c.source) == "lfo"]
            if not lfo_pos or len(live) != 2:
                raise MissingInputError(
                    f"tremolo cell {addr}: needs one live LFO and one audio input"
                )
            audio_pos = 1 - lfo_pos[0]
            if in_active[audio_pos]:
                out = apply_tremolo(in_sigs[audio_pos], in_sigs[lfo_pos[0]], params)
                is_active = True
            else:
                out, is_active = zeros(config), False
        elif kind in ("lowpass", "adsr"):
            if in_sigs and any(in_active):
                fn = apply_lowpass if kind == "lowpass" else apply_adsr
                out = fn(in_sigs[0], params, config)
                is_active = True
            else:
                out, is_active = zeros(config), False
        else:  # pragma: no cover - validate() rejects unknown kinds
            raise AssignmentError(f"cell {addr}: unknown kind {kind!r}")
        outputs[addr] = out
        active[addr] = is_active
    last = chain.max_layer()
    finals = [c.address for c in chain.cells if c.address.layer == last]
    finals.sort(key=lambda a: a.channel)
    acc = outputs[finals[0]].samples
    for addr in finals[1:]:
        acc = acc + outputs[addr].samples
    final = Signal(acc * (1.0 / len(finals)), config.sample_rate)
    non_empty = {c.address: outputs[c.address] for c in chain.cells if c.kind != "empty"}
    return RenderTrace(non_empty, final)
