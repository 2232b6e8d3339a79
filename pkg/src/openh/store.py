"""Episode container format, dataset directories, synthetic episodes and
control-space conversion.

Container layout (all integers and reals little-endian)::

    magic        4 bytes   b"OHE1"
    version      u16       1
    flags        u16       bit 0: validity block, bit 1: action block
    T, S         u32, u32  samples, state width
    total        u64       length of the whole container in bytes
    strings      6 x (u32 byte length + UTF-8): config_id, dataset_id,
                 episode_id, task_prompt, split, representation
    cameras      u16 count, then per camera (sorted by view id):
                 view_id (u32 length + UTF-8), height u32, width u32,
                 channels u8, storage u8 (0 raw, 1 external),
                 frame_count u32, [external: uri (u32 length + UTF-8)]
    block sums   u16 count + one u64 FNV-1a per payload block
    header sum   u64 FNV-1a over every header byte above
    kinematics   T x S float32, row-major
    timestamps   T float64
    validity     T u8                              (flag bit 0)
    actions      u32 A, A x 44 float64, 44 u8 mask  (flag bit 1)
    per camera   T u32 frame indices, then frame_count x H x W x C u8
                 (raw storage only)
    trailer      u64 FNV-1a over every preceding byte

The declared total length separates truncation from corruption, and the
header and per-block sums let a checksum failure name the damaged range.
"""

from __future__ import annotations

import io
import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from openh import UNIFIED_ACTION_DIM
from openh.errors import (
    ChecksumError,
    FormatError,
    StoreError,
    TruncatedError,
    UnsupportedConversionError,
    UnsupportedVersionError,
)
from openh.kinematics import (
    arm_state,
    integrate_relative,
    occupancy_mask,
    pack_vectors,
    quat_to_rotmat,
    relative_actions_batch,
    resample_stride,
    unpack_vectors,
    Pose,
    HybridRelativeAction,
)
from openh.rng import substream
from openh.schema import (
    STATE_WIDTH_PER_ARM,
    ConfigurationRegistry,
    DatasetManifest,
    EpisodeRecord,
    RobotConfiguration,
)

log = logging.getLogger(__name__)

MAGIC = b"OHE1"
VERSION = 1
FLAG_VALID = 1
FLAG_ACTIONS = 2
_TOTAL_OFFSET = 16
STORAGE_RAW = 0
STORAGE_EXTERNAL = 1
EPISODE_PATTERN = "episode_{:06d}.ohe"
MANIFEST_NAME = "manifest.json"
CONFIG_NAME = "robot_config.json"
STATS_NAME = "stats.json"

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def _fnv1a64_py(data) -> int:
    h = FNV_OFFSET
    for b in bytes(data):
        h = ((h ^ b) * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


try:
    import numba

    @numba.njit(cache=True)
    def _fnv1a64_jit(buf):  # pragma: no cover - compiled
        h = np.uint64(0xCBF29CE484222325)
        p = np.uint64(0x100000001B3)
        for b in buf:
            h = (h ^ np.uint64(b)) * p
        return h

    def fnv1a64(data) -> int:
        """64-bit FNV-1a hash of a bytes-like object."""
        return int(_fnv1a64_jit(np.frombuffer(data, dtype=np.uint8)))

except ImportError:  # pragma: no cover
    fnv1a64 = _fnv1a64_py


# ---------------------------------------------------------------- container


def _pack_str(buf: io.BytesIO, s: str):
    raw = s.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)


def to_storage_precision(record: EpisodeRecord) -> EpisodeRecord:
    """Cast array fields to the dtypes the container stores."""
    return record.replace(
        kinematics=np.ascontiguousarray(record.kinematics, dtype=np.float32),
        timestamps=np.ascontiguousarray(record.timestamps, dtype=np.float64),
        frame_refs={v: np.ascontiguousarray(r, dtype=np.uint32) for v, r in record.frame_refs.items()},
        frames={v: np.ascontiguousarray(f, dtype=np.uint8) for v, f in record.frames.items()},
        valid=None if record.valid is None else np.ascontiguousarray(record.valid, dtype=bool),
        actions=None if record.actions is None else np.ascontiguousarray(record.actions, dtype=np.float64),
        action_mask=None if record.action_mask is None else np.ascontiguousarray(record.action_mask, dtype=bool),
    )


def _camera_entries(record: EpisodeRecord):
    views = sorted(set(record.frame_refs) | set(record.frames) | set(record.media_refs))
    out = []
    for v in views:
        if v not in record.frame_refs:
            raise StoreError(f"camera {v!r} has frames but no frame_refs")
        if v in record.frames:
            f = record.frames[v]
            if f.ndim != 4:
                raise StoreError(f"frames for {v!r} must be N x H x W x C")
            out.append((v, f.shape[1], f.shape[2], f.shape[3], STORAGE_RAW, f.shape[0], None))
        elif v in record.media_refs:
            out.append((v, 0, 0, 0, STORAGE_EXTERNAL, 0, record.media_refs[v]))
        else:
            raise StoreError(f"camera {v!r} has neither raw frames nor a media reference")
    return out


def encode_episode(record: EpisodeRecord) -> bytes:
    """Serialize one episode to container bytes."""
    rec = to_storage_precision(record)
    T, S = rec.kinematics.shape
    if rec.timestamps.shape != (T,):
        raise StoreError("timestamps length must equal sample count")
    flags = (FLAG_VALID if rec.valid is not None else 0) | (FLAG_ACTIONS if rec.actions is not None else 0)
    cams = _camera_entries(rec)

    blocks = [rec.kinematics.astype("<f4").tobytes(), rec.timestamps.astype("<f8").tobytes()]
    if rec.valid is not None:
        if rec.valid.shape != (T,):
            raise StoreError("validity flags must have one entry per sample")
        blocks.append(rec.valid.astype(np.uint8).tobytes())
    if rec.actions is not None:
        A = rec.actions.shape[0]
        if rec.actions.shape != (A, UNIFIED_ACTION_DIM):
            raise StoreError(f"actions must be A x {UNIFIED_ACTION_DIM}")
        mask = rec.action_mask if rec.action_mask is not None else np.zeros(UNIFIED_ACTION_DIM, bool)
        blocks.append(struct.pack("<I", A) + rec.actions.astype("<f8").tobytes() + mask.astype(np.uint8).tobytes())
    for v, *_ in cams:
        refs = rec.frame_refs[v]
        if refs.shape != (T,):
            raise StoreError(f"frame_refs for {v!r} must have {T} entries")
        payload = refs.astype("<u4").tobytes()
        if v in rec.frames:
            payload += rec.frames[v].tobytes()
        blocks.append(payload)

    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HHIIQ", VERSION, flags, T, S, 0))
    for s in (rec.config_id, rec.dataset_id, rec.episode_id, rec.task_prompt, rec.split, rec.representation):
        _pack_str(buf, s)
    buf.write(struct.pack("<H", len(cams)))
    for v, h, w, c, storage, n, uri in cams:
        _pack_str(buf, v)
        buf.write(struct.pack("<IIBBI", h, w, c, storage, n))
        if storage == STORAGE_EXTERNAL:
            _pack_str(buf, uri)
    buf.write(struct.pack("<H", len(blocks)))
    for b in blocks:
        buf.write(struct.pack("<Q", fnv1a64(b)))
    total = buf.tell() + 8 + sum(len(b) for b in blocks) + 8
    buf.seek(_TOTAL_OFFSET)
    buf.write(struct.pack("<Q", total))
    buf.seek(0, io.SEEK_END)
    buf.write(struct.pack("<Q", fnv1a64(buf.getvalue())))
    for b in blocks:
        buf.write(b)
    body = buf.getvalue()
    return body + struct.pack("<Q", fnv1a64(body))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise TruncatedError(f"container truncated: need {n} bytes at offset {self.pos}, "
                                 f"file has {len(self.data)}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<I")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"invalid UTF-8 string at offset {self.pos - n}") from exc


@dataclass
class _Header:
    flags: int
    T: int
    S: int
    total: int
    strings: tuple
    cams: list
    block_sums: list
    header_sum: int
    payload_start: int

    def block_lengths(self) -> list[int]:
        T, S = self.T, self.S
        out = [4 * T * S, 8 * T]
        if self.flags & FLAG_VALID:
            out.append(T)
        if self.flags & FLAG_ACTIONS:
            out.append(None)  # depends on the stored action count
        for v, h, w, c, storage, n, uri in self.cams:
            out.append(4 * T + (n * h * w * c if storage == STORAGE_RAW else 0))
        return out


def _parse_header(data: bytes) -> _Header:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise FormatError("not an episode container (bad magic)")
    version, flags, T, S, total = r.unpack("<HHIIQ")
    if version != VERSION:
        raise UnsupportedVersionError(f"container version {version} is not supported (expected {VERSION})")
    if flags & ~(FLAG_VALID | FLAG_ACTIONS):
        raise FormatError(f"unknown flag bits {flags:#x}")
    strings = tuple(r.string() for _ in range(6))
    (ncam,) = r.unpack("<H")
    cams = []
    for _ in range(ncam):
        v = r.string()
        h, w, c, storage, n = r.unpack("<IIBBI")
        uri = None
        if storage == STORAGE_EXTERNAL:
            uri = r.string()
        elif storage != STORAGE_RAW:
            raise FormatError(f"camera {v!r}: unknown storage kind {storage}")
        cams.append((v, h, w, c, storage, n, uri))
    (nblocks,) = r.unpack("<H")
    sums = [r.unpack("<Q")[0] for _ in range(nblocks)]
    (header_sum,) = r.unpack("<Q")
    return _Header(flags, T, S, total, strings, cams, sums, header_sum, r.pos)


def _block_spans(header: _Header, data: bytes) -> list[tuple[int, int]]:
    spans = []
    pos = header.payload_start
    for length in header.block_lengths():
        if length is None:
            if pos + 4 > len(data):
                raise TruncatedError(f"container truncated at action block offset {pos}")
            (A,) = struct.unpack_from("<I", data, pos)
            length = 4 + 8 * A * UNIFIED_ACTION_DIM + UNIFIED_ACTION_DIM
        spans.append((pos, length))
        pos += length
    return spans


def _diagnose(data: bytes) -> None:
    """Explain a trailer mismatch: truncation, or the damaged byte range."""
    if len(data) < _TOTAL_OFFSET + 8:
        raise TruncatedError(f"container truncated inside the fixed header ({len(data)} bytes)")
    (declared,) = struct.unpack_from("<Q", data, _TOTAL_OFFSET)
    stored = struct.unpack_from("<Q", data, len(data) - 8)[0] if len(data) >= 8 else None
    actual = fnv1a64(data[:-8])
    try:
        header = _parse_header(data)
    except (TruncatedError, FormatError):
        if len(data) < declared:
            raise TruncatedError(f"container truncated: {len(data)} bytes, header declares {declared}") from None
        raise ChecksumError("checksum mismatch: header is damaged", stored, actual, (0, None)) from None
    hstart = header.payload_start - 8
    if fnv1a64(data[:hstart]) != header.header_sum:
        raise ChecksumError(f"checksum mismatch in header bytes [0, {header.payload_start})",
                            stored, actual, (0, header.payload_start))
    if len(data) < header.total:
        raise TruncatedError(f"container truncated: {len(data)} bytes, header declares {header.total}")
    if len(data) > header.total:
        raise ChecksumError(f"checksum mismatch: {len(data) - header.total} unexpected trailing bytes",
                            stored, actual, (header.total, len(data)))
    spans = _block_spans(header, data)
    if len(spans) == len(header.block_sums):
        for (start, length), expected in zip(spans, header.block_sums):
            if fnv1a64(data[start:start + length]) != expected:
                raise ChecksumError(f"checksum mismatch in payload bytes [{start}, {start + length})",
                                    stored, actual, (start, start + length))
    end = len(data) - 8
    raise ChecksumError(f"checksum mismatch in trailer bytes [{end}, {end + 8})", stored, actual, (end, end + 8))


def decode_episode(data: bytes) -> EpisodeRecord:
    """Parse and fully validate container bytes."""
    data = bytes(data)
    if len(data) < 4:
        raise TruncatedError("container truncated before the magic number")
    if data[:4] != MAGIC:
        raise FormatError("not an episode container (bad magic)")
    if len(data) >= 6:
        (version,) = struct.unpack_from("<H", data, 4)
        if version != VERSION:
            raise UnsupportedVersionError(f"container version {version} is not supported (expected {VERSION})")
    if len(data) < 8 or fnv1a64(data[:-8]) != struct.unpack_from("<Q", data, len(data) - 8)[0]:
        _diagnose(data)
    header = _parse_header(data)
    spans = _block_spans(header, data)
    end = spans[-1][0] + spans[-1][1] if spans else header.payload_start
    if len(data) != end + 8 or header.total != len(data):
        raise FormatError(f"container is {len(data)} bytes, layout implies {end + 8}")
    if len(spans) != len(header.block_sums):
        raise FormatError(f"header lists {len(header.block_sums)} block sums for {len(spans)} blocks")

    T, S = header.T, header.S
    config_id, dataset_id, episode_id, task_prompt, split, representation = header.strings
    it = iter(spans)

    def block(dtype, count, offset=0):
        start, _ = next(it)
        return np.frombuffer(data, dtype=dtype, count=count, offset=start + offset).copy()

    kin = block("<f4", T * S).astype(np.float32).reshape(T, S)
    ts = block("<f8", T).astype(np.float64)
    valid = block(np.uint8, T).astype(bool) if header.flags & FLAG_VALID else None
    actions = mask = None
    if header.flags & FLAG_ACTIONS:
        start, length = next(it)
        (A,) = struct.unpack_from("<I", data, start)
        actions = np.frombuffer(data, "<f8", A * UNIFIED_ACTION_DIM, start + 4).astype(np.float64)
        actions = actions.reshape(A, UNIFIED_ACTION_DIM)
        mask = np.frombuffer(data, np.uint8, UNIFIED_ACTION_DIM, start + 4 + 8 * A * UNIFIED_ACTION_DIM).astype(bool)
    refs, frames, media = {}, {}, {}
    for v, h, w, c, storage, n, uri in header.cams:
        start, _ = next(it)
        refs[v] = np.frombuffer(data, "<u4", T, start).astype(np.uint32)
        if storage == STORAGE_RAW:
            frames[v] = np.frombuffer(data, np.uint8, n * h * w * c, start + 4 * T).reshape(n, h, w, c).copy()
            if T and int(refs[v].max()) >= n:
                raise FormatError(f"camera {v!r}: frame index {int(refs[v].max())} >= frame count {n}")
        else:
            media[v] = uri
    return EpisodeRecord(episode_id, dataset_id, config_id, task_prompt, kin, ts, refs, frames, media, split,
                         valid, representation, actions, mask)


def write_episode(record: EpisodeRecord, path) -> None:
    Path(path).write_bytes(encode_episode(record))


def read_episode(path) -> EpisodeRecord:
    return decode_episode(Path(path).read_bytes())


# ---------------------------------------------------------------- datasets


def episode_paths(root) -> list[Path]:
    return sorted(Path(root).glob("episode_*.ohe"))


def write_dataset(root, manifest: DatasetManifest, episodes: Sequence[EpisodeRecord],
                  config: RobotConfiguration | None = None) -> Path:
    """Write ``manifest.json``, ``robot_config.json`` and one container per
    episode (ordered by episode id) into ``root``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for stale in episode_paths(root):
        stale.unlink()
    for i, ep in enumerate(sorted(episodes, key=lambda e: e.episode_id)):
        write_episode(ep, root / EPISODE_PATTERN.format(i))
    (root / MANIFEST_NAME).write_text(manifest.to_json(), encoding="utf-8")
    if config is not None:
        (root / CONFIG_NAME).write_text(ConfigurationRegistry([config]).to_json(), encoding="utf-8")
    return root


def read_manifest(root) -> DatasetManifest:
    return DatasetManifest.from_json(Path(root, MANIFEST_NAME).read_text(encoding="utf-8"))


def load_registry(root, base: ConfigurationRegistry | None = None) -> ConfigurationRegistry:
    """``base`` plus any configuration stored alongside the dataset."""
    reg = base if base is not None else ConfigurationRegistry()
    path = Path(root, CONFIG_NAME)
    if path.exists():
        for cid in (local := ConfigurationRegistry.from_json(path.read_text(encoding="utf-8"))):
            reg.register(local.get(cid))
    return reg


def read_dataset(root):
    """Return ``(manifest, episodes)`` for a dataset directory."""
    manifest = read_manifest(root)
    return manifest, [read_episode(p) for p in episode_paths(root)]


# ---------------------------------------------------------------- synthesis


FAMILIES = ("circle", "lissajous", "pick_place_script")
CIRCLE_RADIUS = 0.02
CIRCLE_PERIOD_S = 10.0
TOOL_TILT = 0.3


@dataclass(frozen=True)
class SynthScenario:
    config_id: str
    family: str = "circle"
    noise_sigma: float = 0.0
    T: int = 300
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise StoreError(f"unknown trajectory family {self.family!r}")
        if self.T < 2:
            raise StoreError("T must be at least 2")
        if not self.noise_sigma >= 0:
            raise StoreError("noise_sigma must be nonnegative")


def _quat_axis(axis: int, angle) -> np.ndarray:
    angle = np.asarray(angle, dtype=np.float64)
    q = np.zeros(angle.shape + (4,))
    q[..., 0] = np.cos(angle / 2)
    q[..., 1 + axis] = np.sin(angle / 2)
    return q


def quat_multiply(a, b) -> np.ndarray:
    aw, ax, ay, az = np.moveaxis(np.asarray(a), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b), -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def arm_center(arm: int, arm_count: int) -> np.ndarray:
    x = 0.0 if arm_count == 1 else -0.03 + 0.06 * arm / (arm_count - 1)
    return np.array([x, 0.0, 0.05])


def closed_form_trajectory(family: str, t: np.ndarray, arm: int, arm_count: int, phase: float):
    """Noise-free ``(positions T x 3, quaternions T x 4, gripper T)`` for one arm."""
    w = 2 * np.pi / CIRCLE_PERIOD_S
    c = arm_center(arm, arm_count)
    if family == "circle":
        a = w * t + phase
        pos = c + CIRCLE_RADIUS * np.stack([np.cos(a), np.sin(a), np.zeros_like(a)], axis=1)
        quat = quat_multiply(_quat_axis(2, a), _quat_axis(0, np.full_like(a, TOOL_TILT)))
        grip = 0.5 + 0.4 * np.sin(0.5 * a)
    elif family == "lissajous":
        pos = c + np.stack([0.02 * np.sin(w * t + phase), 0.015 * np.sin(2 * w * t),
                            0.01 * np.sin(3 * w * t + phase)], axis=1)
        quat = quat_multiply(_quat_axis(2, 0.5 * np.sin(w * t)), _quat_axis(1, 0.3 * np.sin(2 * w * t + phase)))
        grip = 0.5 + 0.5 * np.sin(w * t + phase) ** 2 - 0.25
    else:
        # Loop over four waypoints (above pick, at pick, above place, at
        # place), 2 s per segment with cosine easing; the jaw closes at the
        # pick point and opens at the place point.
        seg = 2.0
        way = c + np.array([[-0.02, 0, 0.02], [-0.02, 0, 0.0], [0.02, 0, 0.02], [0.02, 0, 0.0]])
        jaw = np.array([1.0, 0.0, 0.0, 1.0])
        u = (t / seg + phase / (2 * np.pi)) % 4.0
        i = np.floor(u).astype(int) % 4
        j = (i + 1) % 4
        s = 0.5 - 0.5 * np.cos(np.pi * (u - np.floor(u)))
        pos = way[i] + s[:, None] * (way[j] - way[i])
        grip = jaw[i] + s * (jaw[j] - jaw[i])
        quat = quat_multiply(_quat_axis(2, 0.2 * np.sin(w * t)), _quat_axis(0, np.full_like(t, TOOL_TILT)))
    quat = np.where(quat[:, :1] < 0, -quat, quat)
    return pos, quat, np.clip(grip, 0.0, 1.0)


# Background and disk palette for rendered frames.
_ARM_COLORS = np.array([[255, 210, 60], [60, 200, 255], [120, 255, 120], [255, 90, 200]], dtype=np.float64)
WORKSPACE_HALF_WIDTH = 0.08


def render_frames(positions: np.ndarray, grippers: np.ndarray, view_index: int, height: int, width: int,
                  channels: int = 3) -> np.ndarray:
    """Draw each arm tip as a bright disk over a gradient background.

    ``positions`` is ``T x arms x 3``.  Each view looks down the z axis,
    rotated by 30 degrees per view index; disk brightness tracks the
    gripper opening.
    """
    T, arms = positions.shape[:2]
    yy, xx = np.mgrid[:height, :width].astype(np.float64)
    bg = np.stack([40 + 60 * xx / width + 30 * yy / height + 20 * k for k in range(channels)], axis=-1)
    frames = np.broadcast_to(bg, (T, height, width, channels)).copy()
    ang = np.deg2rad(30.0 * view_index)
    ca, sa = np.cos(ang), np.sin(ang)
    scale = min(height, width) / (2 * WORKSPACE_HALF_WIDTH)
    radius = max(2.0, min(height, width) / 10.0)
    for arm in range(arms):
        x, y = positions[:, arm, 0], positions[:, arm, 1]
        u = width / 2 + scale * (ca * x - sa * y)
        v = height / 2 + scale * (sa * x + ca * y)
        inside = (xx[None] - u[:, None, None]) ** 2 + (yy[None] - v[:, None, None]) ** 2 <= radius ** 2
        level = (0.55 + 0.45 * grippers[:, arm])[:, None]
        color = _ARM_COLORS[arm % len(_ARM_COLORS), :channels] * level
        frames = np.where(inside[..., None], color[:, None, None, :], frames)
    return np.clip(np.rint(frames), 0, 255).astype(np.uint8)


def synthesize_episode(scenario: SynthScenario, config: RobotConfiguration, episode_id: str = "ep000000",
                       dataset_id: str = "synthetic", task_prompt: str = "follow the scripted trajectory",
                       render: bool = True) -> EpisodeRecord:
    """Deterministic synthetic episode in absolute Cartesian state.

    Kinematics are float64 closed-form values plus Gaussian position
    noise; writing the episode quantizes them to the container's float32.
    """
    rng = substream(scenario.seed, "synth", scenario.config_id, scenario.family, episode_id)
    T, A = scenario.T, config.arm_count
    t = np.arange(T, dtype=np.float64) / config.native_rate_hz
    kin = np.empty((T, config.state_width))
    positions = np.empty((T, A, 3))
    grips = np.empty((T, A))
    phases = rng.uniform(0, 2 * np.pi, size=A)
    for arm in range(A):
        pos, quat, grip = closed_form_trajectory(scenario.family, t, arm, A, phases[arm])
        if scenario.noise_sigma > 0:
            pos = pos + rng.normal(0.0, scenario.noise_sigma, size=pos.shape)
        base = arm * STATE_WIDTH_PER_ARM
        kin[:, base:base + 3] = pos
        kin[:, base + 3:base + 7] = quat
        kin[:, base + 7] = grip
        positions[:, arm] = pos
        grips[:, arm] = grip
    refs, frames = {}, {}
    if render:
        for k, cam in enumerate(config.camera_views):
            frames[cam.view_id] = render_frames(positions, grips, k, cam.height, cam.width, cam.channels)
            refs[cam.view_id] = np.arange(T, dtype=np.uint32)
    return EpisodeRecord(episode_id, dataset_id, config.config_id, task_prompt, kin, t, refs, frames)


# ---------------------------------------------------------------- conversion


def compact_frames(record: EpisodeRecord) -> EpisodeRecord:
    """Drop raw frames no longer referenced (e.g. after resampling)."""
    frames, refs = {}, dict(record.frame_refs)
    for v, f in record.frames.items():
        used, inverse = np.unique(record.frame_refs[v], return_inverse=True)
        frames[v] = f[used]
        refs[v] = inverse.astype(np.uint32)
    return record.replace(frames=frames, frame_refs=refs)


def convert_control_space(record: EpisodeRecord, target: str, config: RobotConfiguration,
                          target_rate_hz: float | None = None) -> EpisodeRecord:
    """Re-express an absolute-Cartesian episode as hybrid-relative actions.

    The episode is optionally resampled to ``target_rate_hz`` first.  Step
    ``t`` of the result moves sample ``t`` to ``t + 1`` (``T - 1`` actions,
    packed into the 44-slot unified layout); the absolute state is kept as
    the reference channel.
    """
    if record.representation == "joint" or target == "joint":
        raise UnsupportedConversionError("joint-space episodes are not supported")
    if target == record.representation:
        return record
    if target != "relative_cartesian" or record.representation != "absolute_cartesian":
        raise UnsupportedConversionError(f"cannot convert {record.representation!r} to {target!r}")
    if record.kinematics.shape[1] != config.state_width:
        raise StoreError(f"state width {record.kinematics.shape[1]} does not match {config.config_id}")
    rec = record
    if target_rate_hz is not None:
        rec = compact_frames(resample_stride(rec, target_rate_hz, config.native_rate_hz))
    per_arm = []
    for arm in range(config.arm_count):
        pos, rot, grip = arm_state(rec.kinematics, arm)
        per_arm.append(relative_actions_batch(pos, rot, grip))
    arm_rows = np.stack(per_arm, axis=1) if rec.sample_count > 1 else np.zeros((0, config.arm_count, 10))
    actions = pack_vectors(arm_rows, config)
    return rec.replace(representation="relative_cartesian", actions=actions, action_mask=occupancy_mask(config))


def replay_actions(record: EpisodeRecord, config: RobotConfiguration):
    """Integrate stored actions from the first absolute state.

    Returns ``(positions, rotations)`` of shape ``(A+1) x arms x 3`` and
    ``(A+1) x arms x 3 x 3``.
    """
    if record.actions is None:
        raise StoreError("episode has no actions to replay")
    arms = unpack_vectors(record.actions, config)
    A = record.actions.shape[0]
    positions = np.empty((A + 1, config.arm_count, 3))
    rotations = np.empty((A + 1, config.arm_count, 3, 3))
    for arm in range(config.arm_count):
        pos, rot, _ = arm_state(record.kinematics[:1], arm)
        pose = Pose(pos[0], rot[0])
        positions[0, arm], rotations[0, arm] = pose.position, pose.rotation
        for t in range(A):
            pose = integrate_relative(pose, HybridRelativeAction.from_vector(arms[t, arm]))
            positions[t + 1, arm], rotations[t + 1, arm] = pose.position, pose.rotation
    return positions, rotations


def action_chunks(actions: np.ndarray, horizon: int) -> np.ndarray:
    """All length-``horizon`` windows of consecutive actions (``N x H x 44``)."""
    actions = np.asarray(actions, dtype=np.float64)
    if actions.shape[0] < horizon:
        return np.empty((0, horizon, actions.shape[1]))
    windows = np.lib.stride_tricks.sliding_window_view(actions, horizon, axis=0)
    return np.ascontiguousarray(np.moveaxis(windows, -1, 1))


def reference_video(record: EpisodeRecord, view_id: str) -> np.ndarray:
    """Frames in sample order for one camera (``T x H x W x C`` uint8)."""
    if view_id not in record.frames:
        raise StoreError(f"episode {record.episode_id} has no raw frames for {view_id!r}")
    return record.frames[view_id][record.frame_refs[view_id].astype(np.intp)]
