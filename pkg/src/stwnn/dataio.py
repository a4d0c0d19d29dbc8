"""On-disk formats: CSI streams, volume sets, model weights, and manifests.

All binary formats are little-endian with a 4-byte magic:

CSI1  stream file
    magic "CSI1"
    header: n_tx u32, n_rx u32, n_sub u32, frame_count u32, sample_rate f64
    body:   frame_count frames, each n_tx*n_rx*n_sub complex entries in
            (tx, rx, sub) row-major order, stored as interleaved f64 (re, im)

VOL1  volume set
    magic "VOL1"
    count u32, then per volume:
    d_sub u32, d_time u32, d_ant u32, scale u32, source_segment u32,
    label i32 (-1 means unlabeled), then d_sub*d_time*d_ant f64 row-major

WGT1  weight archive
    magic "WGT1", format_version u32 (currently 1)
    config echo: n_classes u32, in_channels u32, block count u32 then
    channel u32 each, kernel u32 x3, n_feature_vectors u32, feature_dim u32,
    score_fn u8, variant u8, seed i64
    tensor count u32, then per tensor: name length u16 + utf-8 name,
    ndim u8, dims u32 each, f64 values row-major

Manifests are UTF-8 text: "#" starts a comment, "@key<TAB>value..." lines
carry dataset-level fields (n_classes, shape, sample_rate_hz), and entry
lines are "path<TAB>label<TAB>split" with split in {train, val, test}.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .csi import CsiFrame, CsiStream
from .errors import (CompatibilityError, CorruptionError, FormatError,
                     ValidationError)
from .network import SCORE_FNS, VARIANTS, Model, NetworkConfig
from .volumes import Volume3D

_SPLITS = ("train", "val", "test")
WEIGHTS_VERSION = 1


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CorruptionError(f"truncated file: expected {n} bytes for {what}, got {len(data)}")
    return data


def _read_struct(f, fmt: str, what: str):
    return struct.unpack(fmt, _read_exact(f, struct.calcsize(fmt), what))


def _expect_magic(f, magic: bytes):
    got = f.read(len(magic))
    if got != magic:
        raise FormatError(f"bad magic: expected {magic!r}, got {got!r}")


def _expect_eof(f):
    if f.read(1):
        raise CorruptionError("trailing bytes after declared content")


# ---------------------------------------------------------------------------
# CSI streams
# ---------------------------------------------------------------------------

def save_stream(path, stream: CsiStream) -> None:
    stacked = stream.as_array()  # (I, n_tx, n_rx, n_sub) complex128
    interleaved = np.empty(stacked.shape + (2,), dtype="<f8")
    interleaved[..., 0] = stacked.real
    interleaved[..., 1] = stacked.imag
    with open(path, "wb") as f:
        f.write(b"CSI1")
        f.write(struct.pack("<IIII", stream.n_tx, stream.n_rx, stream.n_sub, len(stream)))
        f.write(struct.pack("<d", stream.sample_rate_hz))
        f.write(interleaved.tobytes())


def load_stream(path) -> CsiStream:
    with open(path, "rb") as f:
        _expect_magic(f, b"CSI1")
        n_tx, n_rx, n_sub, n_frames = _read_struct(f, "<IIII", "stream header")
        (sample_rate,) = _read_struct(f, "<d", "sample rate")
        if n_frames < 1 or min(n_tx, n_rx, n_sub) < 1:
            raise CorruptionError(
                f"header declares empty stream: {n_tx}x{n_rx}x{n_sub}, {n_frames} frames")
        body = _read_exact(f, n_frames * n_tx * n_rx * n_sub * 16, "frame data")
        _expect_eof(f)
    flat = np.frombuffer(body, dtype="<f8").reshape(n_frames, n_tx, n_rx, n_sub, 2)
    h = flat[..., 0] + 1j * flat[..., 1]
    frames = tuple(
        CsiFrame(h=h[i], packet_index=i, timestamp=i / sample_rate)
        for i in range(n_frames))
    return CsiStream(frames=frames, n_tx=n_tx, n_rx=n_rx, n_sub=n_sub,
                     sample_rate_hz=sample_rate)


# ---------------------------------------------------------------------------
# volume sets
# ---------------------------------------------------------------------------

def save_volumes(path, volumes) -> None:
    volumes = list(volumes)
    with open(path, "wb") as f:
        f.write(b"VOL1")
        f.write(struct.pack("<I", len(volumes)))
        for v in volumes:
            d_sub, d_time, d_ant = v.data.shape
            label = -1 if v.label is None else int(v.label)
            f.write(struct.pack("<IIIIIi", d_sub, d_time, d_ant,
                                v.scale, v.source_segment, label))
            f.write(np.ascontiguousarray(v.data, dtype="<f8").tobytes())


def load_volumes(path) -> list:
    with open(path, "rb") as f:
        _expect_magic(f, b"VOL1")
        (count,) = _read_struct(f, "<I", "volume count")
        out = []
        for i in range(count):
            d_sub, d_time, d_ant, scale, source_segment, label = _read_struct(
                f, "<IIIIIi", f"volume {i} header")
            if min(d_sub, d_time, d_ant) < 1 or scale < 1:
                raise CorruptionError(f"volume {i} header has invalid dims/scale")
            body = _read_exact(f, d_sub * d_time * d_ant * 8, f"volume {i} data")
            data = np.frombuffer(body, dtype="<f8").reshape(d_sub, d_time, d_ant)
            out.append(Volume3D(data=data.copy(), scale=scale,
                                source_segment=source_segment,
                                label=None if label < 0 else label))
        _expect_eof(f)
    return out


# ---------------------------------------------------------------------------
# weight archives
# ---------------------------------------------------------------------------

_SCORE_CODE = {name: i for i, name in enumerate(SCORE_FNS)}
_VARIANT_CODE = {name: i for i, name in enumerate(VARIANTS)}


def _pack_config(cfg: NetworkConfig) -> bytes:
    parts = [struct.pack("<III", cfg.n_classes, cfg.in_channels, len(cfg.block_channels))]
    parts.append(struct.pack(f"<{len(cfg.block_channels)}I", *cfg.block_channels))
    parts.append(struct.pack("<III", *cfg.kernel))
    parts.append(struct.pack("<II", cfg.n_feature_vectors, cfg.feature_dim))
    parts.append(struct.pack("<BBq", _SCORE_CODE[cfg.score_fn],
                             _VARIANT_CODE[cfg.variant], cfg.seed))
    return b"".join(parts)


def _unpack_config(f) -> NetworkConfig:
    n_classes, in_channels, n_blocks = _read_struct(f, "<III", "config header")
    if n_blocks < 1 or n_blocks > 10_000:
        raise CorruptionError(f"implausible block count {n_blocks}")
    channels = _read_struct(f, f"<{n_blocks}I", "block channels")
    kernel = _read_struct(f, "<III", "kernel dims")
    n_vec, feature_dim = _read_struct(f, "<II", "attention dims")
    score_code, variant_code, seed = _read_struct(f, "<BBq", "config tail")
    if score_code >= len(SCORE_FNS) or variant_code >= len(VARIANTS):
        raise CorruptionError("unknown score_fn or variant code")
    return NetworkConfig(n_classes=n_classes, in_channels=in_channels,
                         block_channels=channels, kernel=kernel,
                         n_feature_vectors=n_vec, feature_dim=feature_dim,
                         score_fn=SCORE_FNS[score_code],
                         variant=VARIANTS[variant_code], seed=seed)


def save_weights(path, model: Model) -> None:
    params = model.parameters()
    with open(path, "wb") as f:
        f.write(b"WGT1")
        f.write(struct.pack("<I", WEIGHTS_VERSION))
        f.write(_pack_config(model.config))
        f.write(struct.pack("<I", len(params)))
        for name, tensor in params.items():
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", tensor.values.ndim))
            f.write(struct.pack(f"<{tensor.values.ndim}I", *tensor.values.shape))
            f.write(np.ascontiguousarray(tensor.values, dtype="<f8").tobytes())


def peek_weights_config(path) -> NetworkConfig:
    """Read just the config echo from a weight archive."""
    with open(path, "rb") as f:
        _expect_magic(f, b"WGT1")
        (version,) = _read_struct(f, "<I", "format version")
        if version > WEIGHTS_VERSION:
            raise FormatError(f"unsupported weight format version {version}")
        return _unpack_config(f)


def load_weights(path, model: Model) -> Model:
    """Load parameters into ``model``; its config must match the archive echo."""
    with open(path, "rb") as f:
        _expect_magic(f, b"WGT1")
        (version,) = _read_struct(f, "<I", "format version")
        if version > WEIGHTS_VERSION:
            raise FormatError(f"unsupported weight format version {version}")
        stored = _unpack_config(f)
        if stored != model.config:
            raise CompatibilityError(
                f"archive was written for config {stored}, model has {model.config}")
        params = model.parameters()
        (count,) = _read_struct(f, "<I", "tensor count")
        if count != len(params):
            raise CorruptionError(f"archive has {count} tensors, model needs {len(params)}")
        for _ in range(count):
            (name_len,) = _read_struct(f, "<H", "tensor name length")
            name = _read_exact(f, name_len, "tensor name").decode("utf-8")
            (ndim,) = _read_struct(f, "<B", "tensor rank")
            shape = _read_struct(f, f"<{ndim}I", "tensor shape")
            body = _read_exact(f, int(np.prod(shape)) * 8, f"tensor {name} data")
            if name not in params:
                raise CorruptionError(f"archive names unknown tensor {name!r}")
            target = params[name]
            if tuple(shape) != target.values.shape:
                raise CorruptionError(
                    f"tensor {name!r} has shape {tuple(shape)}, model expects "
                    f"{target.values.shape}")
            target.values = np.frombuffer(body, dtype="<f8").reshape(shape).copy()
        _expect_eof(f)
    return model


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: int
    split: str


@dataclass
class DatasetManifest:
    entries: list
    n_classes: int
    n_tx: Optional[int] = None
    n_rx: Optional[int] = None
    n_sub: Optional[int] = None
    sample_rate_hz: Optional[float] = None

    def split(self, name: str) -> list:
        return [e for e in self.entries if e.split == name]


def load_manifest(path) -> DatasetManifest:
    entries = []
    declared_classes = None
    shape = (None, None, None)
    sample_rate = None
    seen_paths = set()

    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].rstrip("\n").strip()
            if not line:
                continue
            fields = line.split("\t")
            if fields[0].startswith("@"):
                key = fields[0][1:]
                try:
                    if key == "n_classes":
                        declared_classes = int(fields[1])
                    elif key == "shape":
                        shape = (int(fields[1]), int(fields[2]), int(fields[3]))
                    elif key == "sample_rate_hz":
                        sample_rate = float(fields[1])
                    else:
                        raise ValidationError(f"line {lineno}: unknown directive @{key}")
                except (IndexError, ValueError) as exc:
                    raise ValidationError(f"line {lineno}: bad directive {line!r}") from exc
                continue
            if len(fields) != 3:
                raise ValidationError(
                    f"line {lineno}: expected 'path<TAB>label<TAB>split', got {line!r}")
            file_path, label_text, split = fields
            try:
                label = int(label_text)
            except ValueError as exc:
                raise ValidationError(f"line {lineno}: label {label_text!r} is not an integer") from exc
            if label < 0:
                raise ValidationError(f"line {lineno}: label must be >= 0, got {label}")
            if split not in _SPLITS:
                raise ValidationError(
                    f"line {lineno}: split must be one of {_SPLITS}, got {split!r}")
            if file_path in seen_paths:
                raise ValidationError(f"line {lineno}: duplicate path {file_path!r}")
            seen_paths.add(file_path)
            entries.append(ManifestEntry(path=file_path, label=label, split=split))

    if not entries:
        raise ValidationError(f"manifest {path} has no entries")
    n_classes = declared_classes if declared_classes is not None \
        else max(e.label for e in entries) + 1
    for e in entries:
        if e.label >= n_classes:
            raise ValidationError(
                f"label {e.label} out of range for n_classes={n_classes} ({e.path})")
    for split_name in ("train", "test"):
        if not any(e.split == split_name for e in entries):
            raise ValidationError(f"manifest needs at least one {split_name} entry")
    return DatasetManifest(entries=entries, n_classes=n_classes,
                           n_tx=shape[0], n_rx=shape[1], n_sub=shape[2],
                           sample_rate_hz=sample_rate)


def write_manifest(path, manifest: DatasetManifest) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"@n_classes\t{manifest.n_classes}\n")
        if None not in (manifest.n_tx, manifest.n_rx, manifest.n_sub):
            f.write(f"@shape\t{manifest.n_tx}\t{manifest.n_rx}\t{manifest.n_sub}\n")
        if manifest.sample_rate_hz is not None:
            f.write(f"@sample_rate_hz\t{manifest.sample_rate_hz}\n")
        for e in manifest.entries:
            f.write(f"{e.path}\t{e.label}\t{e.split}\n")
