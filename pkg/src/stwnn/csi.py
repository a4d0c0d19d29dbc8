"""WiFi channel model and label-controlled synthetic CSI generation.

A received packet on subcarrier s is modeled as the transmitted symbol
multiplied by the complex channel matrix entry for that antenna pair and
subcarrier, plus additive noise. Synthetic streams superpose a static
channel with Doppler-modulated motion components so that class identity is
controlled exactly by the component frequencies.

All CSI entries are complex128; streams are immutable after construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionError, ValidationError


def _check_finite(array, what: str) -> None:
    if not np.all(np.isfinite(array)):
        raise ValidationError(f"{what} contains non-finite entries")


@dataclass(frozen=True)
class CsiFrame:
    """One received packet's channel matrix.

    Attributes:
        h: complex channel matrix of shape (n_tx, n_rx, n_sub).
        packet_index: position of the packet in its stream, starting at 0.
        timestamp: capture time in seconds.
    """

    h: np.ndarray
    packet_index: int
    timestamp: float

    def __post_init__(self):
        h = np.ascontiguousarray(self.h, dtype=np.complex128)
        if h.ndim != 3:
            raise DimensionError(f"frame matrix must be 3-D, got shape {h.shape}")
        if self.packet_index < 0:
            raise ValidationError(f"packet_index must be >= 0, got {self.packet_index}")
        _check_finite(h, "CSI frame")
        h.flags.writeable = False
        object.__setattr__(self, "h", h)


@dataclass(frozen=True)
class CsiStream:
    """Time-ordered CSI frames plus acquisition metadata."""

    frames: tuple
    n_tx: int
    n_rx: int
    n_sub: int
    sample_rate_hz: float
    label: Optional[int] = None

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise ValidationError("a stream needs at least one frame")
        if self.sample_rate_hz <= 0:
            raise ValidationError(f"sample_rate_hz must be > 0, got {self.sample_rate_hz}")
        shape = (self.n_tx, self.n_rx, self.n_sub)
        for i, frame in enumerate(frames):
            if frame.h.shape != shape:
                raise DimensionError(
                    f"frame {i} has shape {frame.h.shape}, stream header says {shape}")
            if frame.packet_index != i:
                raise ValidationError(
                    f"packet_index must increase by 1 from 0; frame {i} has {frame.packet_index}")
        object.__setattr__(self, "frames", frames)

    def __len__(self):
        return len(self.frames)

    def as_array(self) -> np.ndarray:
        """Stack frames into a complex array of shape (I, n_tx, n_rx, n_sub)."""
        return np.stack([f.h for f in self.frames])


@dataclass(frozen=True)
class MotionComponent:
    """One Doppler-modulated contribution to the synthetic channel."""

    doppler_hz: float
    delay_weight: float
    antenna_pattern: tuple

    def __post_init__(self):
        if self.delay_weight < 0:
            raise ValidationError(f"delay_weight must be >= 0, got {self.delay_weight}")
        pattern = tuple(float(p) for p in self.antenna_pattern)
        if not all(math.isfinite(p) for p in pattern):
            raise ValidationError("antenna_pattern contains non-finite entries")
        object.__setattr__(self, "antenna_pattern", pattern)


@dataclass(frozen=True)
class ActivitySpec:
    """Recipe for one synthetic activity recording."""

    class_id: int
    duration_s: float
    motion_components: tuple
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ValidationError(f"duration_s must be > 0, got {self.duration_s}")
        components = tuple(self.motion_components)
        if not components:
            raise ValidationError("an activity needs at least one motion component")
        if not math.isfinite(self.noise_std) or self.noise_std < 0:
            raise ValidationError(f"noise_std must be finite and >= 0, got {self.noise_std}")
        object.__setattr__(self, "motion_components", components)


def channel_apply(tx, frame: CsiFrame, noise, tx_ant: int, rx_ant: int) -> np.ndarray:
    """Pass a per-subcarrier symbol vector through one antenna pair of a frame.

    Returns received[s] = h[tx_ant, rx_ant, s] * tx[s] + noise[s].
    """
    tx = np.asarray(tx, dtype=np.complex128)
    noise = np.asarray(noise, dtype=np.complex128)
    n_tx, n_rx, n_sub = frame.h.shape
    if not (0 <= tx_ant < n_tx and 0 <= rx_ant < n_rx):
        raise DimensionError(
            f"antenna pair ({tx_ant}, {rx_ant}) out of range for {n_tx}x{n_rx}")
    if tx.shape != (n_sub,) or noise.shape != (n_sub,):
        raise DimensionError(
            f"tx/noise must have shape ({n_sub},), got {tx.shape}/{noise.shape}")
    _check_finite(tx, "tx symbols")
    _check_finite(noise, "noise")
    return frame.h[tx_ant, rx_ant] * tx + noise


def synth_stream(spec: ActivitySpec, n_tx: int, n_rx: int, n_sub: int,
                 sample_rate_hz: float) -> CsiStream:
    """Generate a deterministic synthetic CSI stream for one activity.

    The channel at packet i is a static per-(antenna, subcarrier) draw plus,
    for every motion component, a complex sinusoid rotating at its Doppler
    frequency, scaled by the component weight and antenna pattern, with a
    per-subcarrier phase profile drawn once per component. Complex Gaussian
    noise of standard deviation ``spec.noise_std`` is added per entry.

    Identical (spec, shape, rate) inputs always produce identical streams.
    """
    if n_tx < 1 or n_rx < 1 or n_sub < 1:
        raise ValidationError(f"antenna/subcarrier counts must be >= 1, got {n_tx}/{n_rx}/{n_sub}")
    if sample_rate_hz <= 0:
        raise ValidationError(f"sample_rate_hz must be > 0, got {sample_rate_hz}")
    n_frames = int(math.floor(spec.duration_s * sample_rate_hz))
    if n_frames < 1:
        raise ValidationError(
            f"duration {spec.duration_s}s at {sample_rate_hz}Hz yields a zero-length stream")

    n_ant = n_tx * n_rx
    for k, comp in enumerate(spec.motion_components):
        if len(comp.antenna_pattern) != n_ant:
            raise DimensionError(
                f"component {k} antenna_pattern has length {len(comp.antenna_pattern)}, "
                f"need n_tx*n_rx = {n_ant}")

    rng = np.random.default_rng(spec.seed)
    base = (rng.standard_normal((n_tx, n_rx, n_sub))
            + 1j * rng.standard_normal((n_tx, n_rx, n_sub))) / math.sqrt(2.0)

    t = np.arange(n_frames) / sample_rate_hz
    h = np.broadcast_to(base, (n_frames, n_tx, n_rx, n_sub)).copy()
    for comp in spec.motion_components:
        sub_phase = rng.uniform(0.0, 2.0 * math.pi, size=n_sub)
        pattern = np.asarray(comp.antenna_pattern).reshape(n_tx, n_rx)
        rotation = np.exp(1j * (2.0 * math.pi * comp.doppler_hz * t[:, None] + sub_phase[None, :]))
        h += comp.delay_weight * pattern[None, :, :, None] * rotation[:, None, None, :]

    if spec.noise_std > 0:
        shape = (n_frames, n_tx, n_rx, n_sub)
        h += (spec.noise_std / math.sqrt(2.0)) * (
            rng.standard_normal(shape) + 1j * rng.standard_normal(shape))

    frames = tuple(
        CsiFrame(h=h[i], packet_index=i, timestamp=i / sample_rate_hz)
        for i in range(n_frames))
    return CsiStream(frames=frames, n_tx=n_tx, n_rx=n_rx, n_sub=n_sub,
                     sample_rate_hz=sample_rate_hz, label=spec.class_id)


def amplitude(stream: CsiStream) -> np.ndarray:
    """Magnitude of every CSI entry, arranged as (n_sub, I, n_tx, n_rx)."""
    stacked = stream.as_array()  # (I, n_tx, n_rx, n_sub)
    return np.ascontiguousarray(np.abs(stacked).transpose(3, 0, 1, 2))


def doppler_activity_spec(class_id: int, *, n_ant: int, duration_s: float = 1.0,
                          doppler_base_hz: float = 4.0, doppler_step_hz: float = 6.0,
                          noise_std: float = 0.1, seed: int = 0) -> ActivitySpec:
    """Build an activity whose class identity is carried by its Doppler band.

    Class c gets a dominant component at ``doppler_base_hz + c * doppler_step_hz``
    plus a weaker component at 1.6x that frequency; antenna patterns are drawn
    from the seed so recordings of one class still vary.
    """
    rng = np.random.default_rng(seed)
    f = doppler_base_hz + doppler_step_hz * class_id
    components = (
        MotionComponent(doppler_hz=f, delay_weight=1.0,
                        antenna_pattern=tuple(rng.uniform(0.5, 1.5, size=n_ant))),
        MotionComponent(doppler_hz=1.6 * f, delay_weight=0.4,
                        antenna_pattern=tuple(rng.uniform(0.5, 1.5, size=n_ant))),
    )
    return ActivitySpec(class_id=class_id, duration_s=duration_s,
                        motion_components=components, noise_std=noise_std, seed=seed)
