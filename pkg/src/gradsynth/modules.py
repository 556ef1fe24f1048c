"""Sound generators and processors: each a pure differentiable function
from parameters (plus optional input signals) to one signal.

Continuous parameters accept floats or tracked :class:`DiffScalar`
values; categorical and activation parameters are plain string labels
and are never differentiated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from gradsynth import autodiff as ad
from gradsynth.autodiff import DiffScalar
from gradsynth.audio import RenderConfig, Signal, zeros

__all__ = [
    "CATALOG",
    "CategoricalParam",
    "ContinuousParam",
    "LOG_SCALE_PARAMS",
    "MissingInputError",
    "ModuleCatalog",
    "ParameterRangeError",
    "apply_adsr",
    "apply_lowpass",
    "apply_tremolo",
    "mix",
    "render_fm_oscillator",
    "render_lfo",
    "render_oscillator",
    "resolve_range",
]

TWO_PI = 2.0 * math.pi

SQUARE_SURROGATE_STEEPNESS = 100.0

LOWPASS_TAPS = 101


class ParameterRangeError(Exception):
    """A continuous parameter lies outside its catalog range."""


class MissingInputError(Exception):
    """A module was invoked without a required input signal."""


@dataclass(frozen=True)
class ContinuousParam:
    """Range of one differentiable parameter; high=None means the render
    duration T (envelope segment lengths)."""

    name: str
    low: float
    high: Optional[float]


@dataclass(frozen=True)
class CategoricalParam:
    name: str
    choices: tuple


@dataclass(frozen=True)
class ModuleCatalog:
    """Declared interface of one module kind."""

    kind: str
    continuous: tuple
    categorical: tuple
    min_inputs: int
    max_inputs: Optional[int]  # None = unbounded
    activation: tuple  # categorical names acting as on/off switches

    def continuous_names(self) -> tuple:
        return tuple(p.name for p in self.continuous)

    def categorical_names(self) -> tuple:
        return tuple(p.name for p in self.categorical)

    def param_names(self) -> tuple:
        return self.continuous_names() + self.categorical_names()


CATALOG: dict = {
    "osc": ModuleCatalog(
        kind="osc",
        continuous=(
            ContinuousParam("amp", 0.0, 1.0),
            ContinuousParam("freq", 20.0, 20000.0),
        ),
        categorical=(
            CategoricalParam("waveform", ("sine", "square", "saw")),
            CategoricalParam("active", ("on", "off")),
        ),
        min_inputs=0,
        max_inputs=0,
        activation=("active",),
    ),
    "lfo": ModuleCatalog(
        kind="lfo",
        continuous=(ContinuousParam("freq", 0.5, 20.0),),
        categorical=(CategoricalParam("active", ("on", "off")),),
        min_inputs=0,
        max_inputs=0,
        activation=("active",),
    ),
    "fm_osc": ModuleCatalog(
        kind="fm_osc",
        continuous=(
            ContinuousParam("amp_c", 0.0, 1.0),
            ContinuousParam("freq_c", 20.0, 20000.0),
            ContinuousParam("mod_index", 0.0, 100.0),
        ),
        categorical=(
            CategoricalParam("waveform", ("sine", "square", "saw")),
            CategoricalParam("fm_active", ("on", "off")),
        ),
        min_inputs=0,
        max_inputs=1,
        activation=("fm_active",),
    ),
    "lowpass": ModuleCatalog(
        kind="lowpass",
        continuous=(ContinuousParam("cutoff", 20.0, 8000.0),),
        categorical=(),
        min_inputs=1,
        max_inputs=1,
        activation=(),
    ),
    "adsr": ModuleCatalog(
        kind="adsr",
        continuous=(
            ContinuousParam("attack", 0.0, None),
            ContinuousParam("decay", 0.0, None),
            ContinuousParam("sustain", 0.0, 1.0),
            ContinuousParam("release", 0.0, None),
        ),
        categorical=(),
        min_inputs=1,
        max_inputs=1,
        activation=(),
    ),
    "mix": ModuleCatalog(
        kind="mix",
        continuous=(),
        categorical=(),
        min_inputs=1,
        max_inputs=None,
        activation=(),
    ),
    "tremolo": ModuleCatalog(
        kind="tremolo",
        continuous=(ContinuousParam("depth", 0.0, 1.0),),
        categorical=(),
        min_inputs=2,
        max_inputs=2,
        activation=(),
    ),
}


# Hz-valued parameters whose useful range spans decades; samplers and
# optimizers treat these on a log scale.
LOG_SCALE_PARAMS = {
    ("osc", "freq"),
    ("lfo", "freq"),
    ("fm_osc", "freq_c"),
    ("lowpass", "cutoff"),
}


def resolve_range(param: ContinuousParam, config: RenderConfig) -> tuple:
    """Concrete (low, high), substituting the render duration for None."""
    high = config.duration if param.high is None else param.high
    return param.low, high


Paramlike = Union[DiffScalar, float, int]


def _as_scalar(value: Paramlike) -> DiffScalar:
    return value if isinstance(value, DiffScalar) else DiffScalar(float(value))


def _checked(kind: str, name: str, value: Paramlike, config: RenderConfig) -> DiffScalar:
    spec = next(p for p in CATALOG[kind].continuous if p.name == name)
    low, high = resolve_range(spec, config)
    scalar = _as_scalar(value)
    # Generator frequencies render at any positive value below the catalog
    # ceiling (the low bound constrains sampling and matching, not the
    # sampling grid itself); every other parameter is held to its range.
    if name in ("freq", "freq_c"):
        if not (0.0 < scalar.value <= high):
            raise ParameterRangeError(
                f"{kind}.{name} = {scalar.value} outside (0, {high}]"
            )
    elif not (low <= scalar.value <= high):
        raise ParameterRangeError(
            f"{kind}.{name} = {scalar.value} outside [{low}, {high}]"
        )
    return scalar


def _label(params: Mapping, name: str, kind: str) -> str:
    value = params[name]
    choices = next(p for p in CATALOG[kind].categorical if p.name == name).choices
    if value not in choices:
        raise ParameterRangeError(f"{kind}.{name} = {value!r} not in {choices}")
    return value


def _wave_from_cycles(waveform: str, cycles, amp) -> "ad.DiffBuffer":
    """Waveform value at a running cycle count (phase / 2π)."""
    if waveform == "sine":
        return ad.sin(cycles * TWO_PI) * amp
    if waveform == "saw":
        return (ad.mod(cycles, 1.0) * 2.0 - 1.0) * amp
    if waveform == "square":
        return ad.sign_surrogate(ad.sin(cycles * TWO_PI), SQUARE_SURROGATE_STEEPNESS) * amp
    raise ParameterRangeError(f"unknown waveform {waveform!r}")


def render_oscillator(params: Mapping, config: RenderConfig) -> Signal:
    """sine: amp*sin(2*pi*f*t); saw: amp*(2*frac(f*t)-1); square:
    amp*sgn(sin(2*pi*f*t)) with a tanh surrogate on the backward pass."""
    if _label(params, "active", "osc") == "off":
        return zeros(config)
    amp = _checked("osc", "amp", params["amp"], config)
    freq = _checked("osc", "freq", params["freq"], config)
    waveform = _label(params, "waveform", "osc")
    cycles = ad.buffer(config.times()) * freq
    return Signal(_wave_from_cycles(waveform, cycles, amp), config.sample_rate)


def render_lfo(params: Mapping, config: RenderConfig) -> Signal:
    """Sub-audible sine control signal in [-1, 1]."""
    if _label(params, "active", "lfo") == "off":
        return zeros(config)
    freq = _checked("lfo", "freq", params["freq"], config)
    phase = ad.buffer(config.times()) * freq * TWO_PI
    return Signal(ad.sin(phase), config.sample_rate)


def render_fm_oscillator(
    params: Mapping, modulator: Optional[Signal], config: RenderConfig
) -> Signal:
    """Phase modulation: cycles_k = f_c*t_k + (mod_index/sr)*cumsum(m)_k.

    fm_active=off bypasses modulation and renders the plain carrier.
    """
    amp = _checked("fm_osc", "amp_c", params["amp_c"], config)
    freq = _checked("fm_osc", "freq_c", params["freq_c"], config)
    waveform = _label(params, "waveform", "fm_osc")
    fm_on = _label(params, "fm_active", "fm_osc") == "on"
    cycles = ad.buffer(config.times()) * freq
    if fm_on:
        if modulator is None:
            raise MissingInputError("fm_osc: fm_active=on requires a modulator input")
        index = _checked("fm_osc", "mod_index", params["mod_index"], config)
        integral = ad.cumsum(modulator.samples) * (1.0 / config.sample_rate)
        cycles = cycles + integral * index
    return Signal(_wave_from_cycles(waveform, cycles, amp), config.sample_rate)


def apply_adsr(input_signal: Signal, params: Mapping, config: RenderConfig) -> Signal:
    """Multiply by the piecewise-linear attack/decay/sustain/release envelope."""
    attack = _checked("adsr", "attack", params["attack"], config)
    decay = _checked("adsr", "decay", params["decay"], config)
    sustain = _checked("adsr", "sustain", params["sustain"], config)
    release = _checked("adsr", "release", params["release"], config)
    total = attack.value + decay.value + release.value
    if total > config.duration + 1e-12:
        raise ParameterRangeError(
            f"adsr: attack+decay+release = {total} exceeds duration {config.duration}"
        )
    t = ad.buffer(config.times())
    duration = config.duration

    if attack.value > 0.0:
        env = ad.clamp(t / attack, 0.0, 1.0)
    else:
        env = ad.buffer(np.ones(config.num_samples))
    if decay.value > 0.0:
        ramp = ad.clamp((t - attack) / decay, 0.0, 1.0)
    else:
        # instant drop to sustain once the attack completes
        ramp = ad.buffer((config.times() >= attack.value) * 1.0)
    env = env * (ramp * (sustain - 1.0) + 1.0)
    if release.value > 0.0:
        env = env * ad.clamp((duration - t) / release, 0.0, 1.0)
    return Signal(input_signal.samples * env, config.sample_rate)


def _lowpass_kernel(cutoff: DiffScalar, sample_rate: int):
    """Hamming-windowed sinc taps, closed-form in the cutoff frequency,
    normalized to unit DC gain."""
    half = (LOWPASS_TAPS - 1) // 2
    offsets = np.arange(LOWPASS_TAPS, dtype=np.float64) - half
    center = offsets == 0.0
    safe = np.where(center, 1.0, offsets)
    omega = cutoff * (TWO_PI / sample_rate)
    off_taps = ad.sin(omega * ad.buffer(safe)) / ad.buffer(np.pi * safe)
    carved = off_taps * ad.buffer(np.where(center, 0.0, 1.0))
    peak = (omega * (1.0 / np.pi)) * ad.buffer(center * 1.0)
    window = np.hamming(LOWPASS_TAPS)
    taps = (carved + peak) * ad.buffer(window)
    return taps / ad.bsum(taps)


def apply_lowpass(input_signal: Signal, params: Mapping, config: RenderConfig) -> Signal:
    """Zero-padded 'same' convolution with a 101-tap windowed-sinc kernel."""
    cutoff = _checked("lowpass", "cutoff", params["cutoff"], config)
    if cutoff.value > config.sample_rate / 2:
        raise ParameterRangeError(
            f"lowpass.cutoff = {cutoff.value} above Nyquist {config.sample_rate / 2}"
        )
    kernel = _lowpass_kernel(cutoff, config.sample_rate)
    return Signal(ad.convolve_same(input_signal.samples, kernel), config.sample_rate)


def mix(inputs: Sequence[Signal]) -> Signal:
    """Elementwise arithmetic mean of the inputs."""
    if not inputs:
        raise MissingInputError("mix: requires at least one input")
    rates = {s.sample_rate for s in inputs}
    lengths = {len(s) for s in inputs}
    if len(rates) != 1 or len(lengths) != 1:
        raise MissingInputError("mix: inputs disagree on rate or length")
    acc = inputs[0].samples
    for s in inputs[1:]:
        acc = acc + s.samples
    return Signal(acc * (1.0 / len(inputs)), inputs[0].sample_rate)


def apply_tremolo(input_signal: Signal, lfo: Optional[Signal], params: Mapping) -> Signal:
    """Amplitude pulse: out = in * ((1-depth) + depth*(lfo+1)/2)."""
    if lfo is None:
        raise MissingInputError("tremolo: requires an LFO input")
    depth = _as_scalar(params["depth"])
    if not (0.0 <= depth.value <= 1.0):
        raise ParameterRangeError(f"tremolo.depth = {depth.value} outside [0, 1]")
    gain = (lfo.samples + 1.0) * 0.5 * depth + (1.0 - depth)
    return Signal(input_signal.samples * gain, input_signal.sample_rate)
