"""Loss functions for sound matching.

Three differentiable pieces — a parameter-space loss, a spectral loss
summed over chain cells, and their weighted combination — plus the
non-differentiable log-spectral distance used only for evaluation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .audio import RenderConfig, Signal
from .autodiff import DiffScalar, absolute, bsum, sqrt
from .chains import (
    AssignmentError,
    CellAddress,
    ChainSpec,
    ParameterAssignment,
    RenderTrace,
)
from .modules import CATALOG, resolve_range
from .spectral import PROCESSINGS, WINDOW_SIZES, mel_spectrogram, process, stft_magnitude

__all__ = [
    "CATEGORICAL_SMOOTHING",
    "LossConfig",
    "LossConfigError",
    "combined_loss",
    "log_spectral_distance",
    "parameter_loss",
    "signal_chain_loss",
]

# Hard categorical predictions enter cross-entropy as an indicator
# smoothed by this amount, keeping -ln(q) finite on mismatches.
CATEGORICAL_SMOOTHING = 1e-6

Scalar = Union[DiffScalar, float]


class LossConfigError(ValueError):
    """Loss configuration inconsistent with the chain or catalog."""


@dataclass(frozen=True)
class LossConfig:
    """Which cells, windows, and processings the spectral loss sums over.

    ``cells`` is "all" (every non-empty cell), "output" (final mix only),
    or an explicit tuple of addresses. ``beta`` weights the spectral term
    inside :func:`combined_loss`.
    """

    cells: Union[str, tuple[CellAddress, ...]] = "all"
    windows: tuple[int, ...] = (512, 1024)
    processings: tuple[str, ...] = ("identity",)
    norm_p: int = 1
    transform: str = "spectrogram"
    beta: float = 1.0
    regression_kind: str = "L1"
    cumsum_normalize: bool = False
    n_mels: int = 128

    def __post_init__(self) -> None:
        if isinstance(self.cells, str):
            if self.cells not in ("all", "output"):
                raise LossConfigError(f"unknown cell selector {self.cells!r}")
        elif len(self.cells) == 0:
            raise LossConfigError("cell set must be non-empty")
        if len(self.windows) == 0:
            raise LossConfigError("window set must be non-empty")
        for w in self.windows:
            if w not in WINDOW_SIZES:
                raise LossConfigError(f"unsupported window size {w}")
        if len(self.processings) == 0:
            raise LossConfigError("processing set must be non-empty")
        for k in self.processings:
            if k not in PROCESSINGS:
                raise LossConfigError(f"unknown processing {k!r}")
        if self.norm_p not in (1, 2):
            raise LossConfigError(f"norm_p must be 1 or 2, got {self.norm_p}")
        if self.transform not in ("spectrogram", "mel"):
            raise LossConfigError(f"unknown transform {self.transform!r}")
        if self.beta < 0:
            raise LossConfigError(f"beta must be >= 0, got {self.beta}")
        if self.regression_kind not in ("L1", "L2"):
            raise LossConfigError(
                f"regression_kind must be 'L1' or 'L2', got {self.regression_kind!r}"
            )


def parameter_loss(
    chain: ChainSpec,
    predicted: ParameterAssignment,
    target: ParameterAssignment,
    regression_kind: str = "L1",
    render_config: RenderConfig = RenderConfig(),
) -> DiffScalar:
    """Range-normalized regression loss plus categorical cross-entropy.

    Continuous parameters are mapped to [0, 1] by their catalog range
    before differencing so Hz-scaled and unit-scaled parameters weigh
    comparably. Categorical predictions are hard labels; the matching
    indicator is smoothed by ``CATEGORICAL_SMOOTHING``.
    """
    if regression_kind not in ("L1", "L2"):
        raise LossConfigError(f"regression_kind must be 'L1' or 'L2', got {regression_kind!r}")
    if set(predicted.values) != set(target.values):
        raise AssignmentError("predicted and target assignments cover different cells")

    cell_map = chain.cell_map()
    total: Scalar = 0.0
    for address in sorted(predicted.values):
        kind = cell_map.get(address)
        if kind is None:
            raise AssignmentError(f"assignment names cell {address} absent from chain")
        catalog = CATALOG[kind]
        pred_params = predicted.values[address]
        targ_params = target.values[address]
        if set(pred_params) != set(targ_params):
            raise AssignmentError(f"parameter keys differ at cell {address}")
        for param in catalog.continuous:
            low, high = resolve_range(param, render_config)
            span = high - low
            diff = (pred_params[param.name] - low) / span - (
                float(targ_params[param.name]) - low
            ) / span
            if regression_kind == "L1":
                total = total + absolute(diff)
            else:
                total = total + diff * diff
        for param in catalog.categorical:
            match = pred_params[param.name] == targ_params[param.name]
            q = 1.0 - CATEGORICAL_SMOOTHING if match else CATEGORICAL_SMOOTHING
            total = total + (-math.log(q))
    if isinstance(total, DiffScalar):
        return total
    return DiffScalar(float(total), None)


def _select_signals(
    trace: RenderTrace, target_trace: RenderTrace, cfg: LossConfig
) -> list[tuple[Signal, Signal]]:
    if cfg.cells == "output":
        return [(trace.output, target_trace.output)]
    if cfg.cells == "all":
        addresses = sorted(trace.cell_outputs)
    else:
        addresses = list(cfg.cells)
    pairs = []
    for address in addresses:
        if address not in trace.cell_outputs or address not in target_trace.cell_outputs:
            raise LossConfigError(f"cell {address} missing from a trace")
        pairs.append((trace.cell_outputs[address], target_trace.cell_outputs[address]))
    return pairs


def signal_chain_loss(
    trace: RenderTrace, target_trace: RenderTrace, cfg: LossConfig
) -> DiffScalar:
    """Spectral distance summed over cells x windows x processings.

    Each term is the entrywise p-norm of the processed-spectrogram
    difference; p = 2 uses the Frobenius norm.
    """
    total: Scalar = 0.0
    for predicted, target in _select_signals(trace, target_trace, cfg):
        for window in cfg.windows:
            if cfg.transform == "mel":
                spec_a = mel_spectrogram(predicted, window, cfg.n_mels)
                spec_b = mel_spectrogram(target, window, cfg.n_mels)
            else:
                spec_a = stft_magnitude(predicted, window)
                spec_b = stft_magnitude(target, window)
            for kind in cfg.processings:
                fa = process(spec_a, kind, normalize=cfg.cumsum_normalize)
                fb = process(spec_b, kind, normalize=cfg.cumsum_normalize)
                diff = fa.magnitudes - fb.magnitudes
                if cfg.norm_p == 1:
                    total = total + bsum(absolute(diff))
                else:
                    total = total + sqrt(bsum(diff * diff))
    if isinstance(total, DiffScalar):
        return total
    return DiffScalar(float(total), None)


def combined_loss(param_part: Scalar, chain_part: Scalar, beta: float) -> Scalar:
    """Total loss: parameter part plus beta-weighted spectral part."""
    if beta < 0:
        raise LossConfigError(f"beta must be >= 0, got {beta}")
    return param_part + beta * chain_part


def log_spectral_distance(x: Signal, x_hat: Signal, window: int = 1024) -> float:
    """Frobenius norm of the log-spectrogram difference (floor 1e-5).

    Evaluation metric only: computed on raw magnitude arrays, outside
    the tape.
    """
    if len(x) != len(x_hat):
        raise ValueError(f"signal lengths differ: {len(x)} vs {len(x_hat)}")
    if x.sample_rate != x_hat.sample_rate:
        raise ValueError("sample rates differ")
    a = stft_magnitude(x, window).values
    b = stft_magnitude(x_hat, window).values
    diff = np.log(np.maximum(a, 1e-5)) - np.log(np.maximum(b, 1e-5))
    return float(np.sqrt(np.sum(diff * diff)))
