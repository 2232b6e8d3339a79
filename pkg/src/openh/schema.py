"""Unified cross-embodiment data model and dataset manifest.

A ``RobotConfiguration`` identifies one embodiment: statistics and action
heads are keyed by it.  ``DatasetManifest`` is the typed form of the
per-dataset documentation template, and ``EpisodeRecord`` is one
demonstration held in memory.
"""

from __future__ import annotations

import dataclasses
import json
import math
import threading
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from openh import UNIFIED_ACTION_DIM
from openh.errors import RegistryConflictError, SchemaError, UnknownConfigurationError
from openh.rng import substream

SCHEMA_VERSION = "1.0"

CONTROL_SPACES = ("absolute_eef", "relative_eef", "joint")
COLLECTION_METHODS = ("teleoperation", "autonomous", "scripted", "synthetic")
OPERATOR_SKILLS = ("expert_surgeon", "clinician", "researcher", "scripted")
ENVIRONMENTS = ("simulation", "benchtop_phantom", "ex_vivo", "in_vivo", "clinical")
KINEMATIC_REPRESENTATIONS = ("absolute_cartesian", "relative_cartesian", "joint")
SPLITS = ("train", "test")

# Per arm: position (3), unit quaternion w,x,y,z (4), gripper in [0, 1] (1).
STATE_WIDTH_PER_ARM = 8
# Per arm in the unified action space: translation (3), 6D rotation (6), gripper (1).
ACTION_WIDTH_PER_ARM = 10
QUAT_NORM_TOL = 1e-6
DEFAULT_TEST_FRACTION = 0.05

# Post-training recipe for the relative-EEF policy, kept as manifest data so
# downstream tooling can check a run configuration against it.
POLICY_TRAINING_DEFAULTS = {
    "action_horizon": 50,
    "action_normalization": "temporal_zscore",
    "normalization_clip": 5.0,
    "state_dropout": 1.0,
    "multi_view_dropout": 0.25,
    "global_batch_size": 1024,
    "training_steps": 65000,
    "learning_rate": 3e-5,
    "weight_decay": 1e-5,
    "warmup_fraction": 0.05,
    "gradient_clip": 1.0,
}

WORLD_MODEL_DEFAULTS = {
    "context_frames": 1,
    "prediction_frames": 12,
    "effective_rate_hz": 10.0,
    "action_dim": UNIFIED_ACTION_DIM,
    "eval_chunks": 6,
}


@dataclass(frozen=True)
class CameraView:
    view_id: str
    width: int
    height: int
    channels: int = 3


@dataclass(frozen=True)
class StreamDescriptor:
    """Opaque reference to an extra modality (depth, gaze, ultrasound...)."""

    stream_id: str
    units: str
    dims: int


@dataclass(frozen=True)
class RobotConfiguration:
    config_id: str
    platform_name: str
    arm_count: int
    per_arm_dof: tuple[int, ...]
    native_rate_hz: float
    camera_views: tuple[CameraView, ...] = ()
    control_space: str = "absolute_eef"
    extra_streams: tuple[StreamDescriptor, ...] = ()
    # Native jaw range mapped onto [0, 1] at ingestion.
    gripper_range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "per_arm_dof", tuple(int(d) for d in self.per_arm_dof))
        object.__setattr__(self, "camera_views", tuple(self.camera_views))
        object.__setattr__(self, "extra_streams", tuple(self.extra_streams))
        object.__setattr__(self, "gripper_range", tuple(float(g) for g in self.gripper_range))

    @property
    def state_width(self) -> int:
        return STATE_WIDTH_PER_ARM * self.arm_count

    def camera(self, view_id: str) -> CameraView:
        for cam in self.camera_views:
            if cam.view_id == view_id:
                return cam
        raise KeyError(view_id)

    def problems(self) -> list[str]:
        out = []
        if not self.config_id:
            out.append("config_id: empty")
        if self.arm_count < 1:
            out.append(f"arm_count: must be >= 1, got {self.arm_count}")
        if len(self.per_arm_dof) != self.arm_count:
            out.append(f"per_arm_dof: expected {self.arm_count} entries, got {len(self.per_arm_dof)}")
        if any(d < 1 for d in self.per_arm_dof):
            out.append("per_arm_dof: every entry must be >= 1")
        if any(d > ACTION_WIDTH_PER_ARM for d in self.per_arm_dof):
            out.append(f"per_arm_dof: an arm block holds at most {ACTION_WIDTH_PER_ARM} slots")
        if sum(self.per_arm_dof) > UNIFIED_ACTION_DIM:
            out.append(f"per_arm_dof: total {sum(self.per_arm_dof)} exceeds {UNIFIED_ACTION_DIM} unified slots")
        if not (self.native_rate_hz > 0 and math.isfinite(self.native_rate_hz)):
            out.append(f"native_rate_hz: must be positive, got {self.native_rate_hz}")
        if self.control_space not in CONTROL_SPACES:
            out.append(f"control_space: {self.control_space!r} not in {CONTROL_SPACES}")
        seen = set()
        for i, cam in enumerate(self.camera_views):
            if cam.width <= 0 or cam.height <= 0:
                out.append(f"camera_views[{i}]: dims must be > 0")
            if cam.channels not in (1, 3):
                out.append(f"camera_views[{i}]: channels must be 1 or 3")
            if cam.view_id in seen:
                out.append(f"camera_views[{i}]: duplicate view_id {cam.view_id!r}")
            seen.add(cam.view_id)
        lo, hi = self.gripper_range
        if not hi > lo:
            out.append("gripper_range: upper bound must exceed lower bound")
        return out

    def normalize_gripper(self, raw):
        lo, hi = self.gripper_range
        return np.clip((np.asarray(raw, dtype=np.float64) - lo) / (hi - lo), 0.0, 1.0)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "RobotConfiguration":
        d = dict(d)
        d["camera_views"] = tuple(CameraView(**c) for c in d.get("camera_views", ()))
        d["extra_streams"] = tuple(StreamDescriptor(**s) for s in d.get("extra_streams", ()))
        return cls(**d)


class ConfigurationRegistry:
    """Registry of robot configurations.

    Reads are lock-free lookups on an immutable mapping; writes replace the
    mapping under a lock.
    """

    def __init__(self, configs: Sequence[RobotConfiguration] = ()):
        self._lock = threading.Lock()
        self._configs: Mapping[str, RobotConfiguration] = {}
        for c in configs:
            self.register(c)

    def register(self, config: RobotConfiguration) -> "ConfigurationRegistry":
        problems = config.problems()
        if problems:
            raise SchemaError(f"invalid configuration {config.config_id!r}: " + "; ".join(problems))
        with self._lock:
            existing = self._configs.get(config.config_id)
            if existing is not None:
                if existing != config:
                    raise RegistryConflictError(
                        f"config_id {config.config_id!r} already registered with a different payload"
                    )
                return self
            updated = dict(self._configs)
            updated[config.config_id] = config
            self._configs = updated
        return self

    def get(self, config_id: str) -> RobotConfiguration:
        try:
            return self._configs[config_id]
        except KeyError:
            raise UnknownConfigurationError(f"unknown robot_config_id {config_id!r}") from None

    def __contains__(self, config_id) -> bool:
        return config_id in self._configs

    def __iter__(self):
        return iter(sorted(self._configs))

    def __len__(self):
        return len(self._configs)

    def to_json(self) -> str:
        payload = [self._configs[k].to_dict() for k in sorted(self._configs)]
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ConfigurationRegistry":
        return cls([RobotConfiguration.from_dict(d) for d in json.loads(text)])


def register_configuration(config: RobotConfiguration, registry: ConfigurationRegistry) -> ConfigurationRegistry:
    return registry.register(config)


def _views(*specs):
    return tuple(CameraView(v, w, h, 3) for v, w, h in specs)


BUILTIN_CONFIGURATIONS = (
    RobotConfiguration(
        "dvrk_si", "dVRK-Si", 2, (10, 10), 30.0,
        _views(("endoscope_left", 64, 48), ("wrist_left", 64, 48), ("wrist_right", 64, 48)),
        gripper_range=(-0.35, 1.2),
    ),
    RobotConfiguration("versius", "CMR Versius", 2, (10, 10), 30.0, _views(("endoscope", 64, 48))),
    RobotConfiguration("mira", "Virtual Incision MIRA", 2, (10, 10), 25.0, _views(("endoscope", 64, 48))),
    RobotConfiguration("kuka_star", "KUKA LBR Med", 1, (10,), 20.0, _views(("endoscope", 64, 48))),
)


def builtin_registry() -> ConfigurationRegistry:
    return ConfigurationRegistry(BUILTIN_CONFIGURATIONS)


@dataclass
class DatasetManifest:
    dataset_id: str
    robot_config_id: str
    collection_method: str | None
    operator_skill: str | None
    environment: str | None
    sync_strategy: str
    kinematic_representation: str | None
    diversity_notes: str
    episode_count: int
    total_seconds: float
    split_fractions: tuple[float, float] = (1.0 - DEFAULT_TEST_FRACTION, DEFAULT_TEST_FRACTION)
    # Reserved for healthcare-specific schema extensions; contents are opaque.
    extensions: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        train, test = self.split_fractions
        return {
            "openh_schema": SCHEMA_VERSION,
            "dataset_id": self.dataset_id,
            "robot_config_id": self.robot_config_id,
            "collection_method": self.collection_method,
            "operator_skill": self.operator_skill,
            "environment": self.environment,
            "sync_strategy": self.sync_strategy,
            "kinematic_representation": self.kinematic_representation,
            "diversity_notes": self.diversity_notes,
            "episode_count": self.episode_count,
            "total_seconds": self.total_seconds,
            "split_fractions": {"train": train, "test": test},
            "extensions": self.extensions,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping) -> "DatasetManifest":
        version = d.get("openh_schema")
        if version != SCHEMA_VERSION:
            raise SchemaError(f"unsupported openh_schema {version!r}")
        splits = d.get("split_fractions") or {}
        return cls(
            dataset_id=d["dataset_id"],
            robot_config_id=d["robot_config_id"],
            collection_method=d.get("collection_method"),
            operator_skill=d.get("operator_skill"),
            environment=d.get("environment"),
            sync_strategy=d.get("sync_strategy", ""),
            kinematic_representation=d.get("kinematic_representation"),
            diversity_notes=d.get("diversity_notes", ""),
            episode_count=int(d["episode_count"]),
            total_seconds=float(d["total_seconds"]),
            split_fractions=(float(splits.get("train", 1 - DEFAULT_TEST_FRACTION)),
                             float(splits.get("test", DEFAULT_TEST_FRACTION))),
            extensions=dict(d.get("extensions") or {}),
        )

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        return cls.from_dict(json.loads(text))


@dataclass
class EpisodeRecord:
    """One demonstration.

    ``kinematics`` is ``T x S`` float32 absolute state; ``frame_refs`` maps
    each camera view to ``T`` indices into ``frames[view]`` (raw uint8
    ``N x H x W x C``) or into the external asset named in ``media_refs``.
    Relative actions, once converted, live in ``actions`` (``A x 44``).
    """

    episode_id: str
    dataset_id: str
    config_id: str
    task_prompt: str
    kinematics: np.ndarray
    timestamps: np.ndarray
    frame_refs: dict[str, np.ndarray] = field(default_factory=dict)
    frames: dict[str, np.ndarray] = field(default_factory=dict)
    media_refs: dict[str, str] = field(default_factory=dict)
    split: str = "train"
    valid: np.ndarray | None = None
    representation: str = "absolute_cartesian"
    actions: np.ndarray | None = None
    action_mask: np.ndarray | None = None

    @property
    def sample_count(self) -> int:
        return int(self.kinematics.shape[0])

    def frame_count(self, view_id: str) -> int | None:
        if view_id in self.frames:
            return int(self.frames[view_id].shape[0])
        return None

    def replace(self, **changes) -> "EpisodeRecord":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class MixtureEntry:
    dataset_id: str
    ratio: float


@dataclass(frozen=True)
class Violation:
    path: str
    message: str

    def __str__(self):
        return f"{self.path}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __len__(self):
        return len(self.violations)

    def __iter__(self):
        return iter(self.violations)

    def lines(self) -> list[str]:
        return [str(v) for v in self.violations]


def _check_enum(out, path, value, allowed):
    if value is None or value == "":
        out.append(Violation(path, "missing"))
    elif value not in allowed:
        out.append(Violation(path, f"{value!r} not in {list(allowed)}"))


def _check_episode(out, i: int, ep: EpisodeRecord, manifest: DatasetManifest, config: RobotConfiguration):
    p = f"episodes[{i}]({ep.episode_id})"
    if ep.dataset_id != manifest.dataset_id:
        out.append(Violation(f"{p}.dataset_id", f"{ep.dataset_id!r} != manifest {manifest.dataset_id!r}"))
    if ep.config_id != manifest.robot_config_id:
        out.append(Violation(f"{p}.config_id", f"{ep.config_id!r} != manifest {manifest.robot_config_id!r}"))
    if ep.split not in SPLITS:
        out.append(Violation(f"{p}.split", f"{ep.split!r} not in {list(SPLITS)}"))
    kin = np.asarray(ep.kinematics)
    if kin.ndim != 2:
        out.append(Violation(f"{p}.kinematics", f"expected 2-D array, got shape {kin.shape}"))
        return
    T, S = kin.shape
    if S != config.state_width:
        out.append(Violation(f"{p}.kinematics", f"state width {S} != {config.state_width} for {config.config_id}"))
        return
    if not np.all(np.isfinite(kin)):
        bad = int(np.argwhere(~np.isfinite(kin))[0, 0])
        out.append(Violation(f"{p}.kinematics[{bad}]", "non-finite value"))
    ts = np.asarray(ep.timestamps, dtype=np.float64)
    if ts.shape != (T,):
        out.append(Violation(f"{p}.timestamps", f"expected {T} timestamps, got {ts.shape}"))
    elif T > 1:
        back = np.nonzero(np.diff(ts) < 0)[0]
        if back.size:
            out.append(Violation(f"{p}.timestamps[{int(back[0]) + 1}]", "timestamps decrease"))
    for arm in range(config.arm_count):
        base = arm * STATE_WIDTH_PER_ARM
        q = kin[:, base + 3: base + 7].astype(np.float64)
        err = np.abs(np.linalg.norm(q, axis=1) - 1.0)
        bad = np.nonzero(~(err <= QUAT_NORM_TOL))[0]
        if bad.size:
            s = int(bad[0])
            out.append(Violation(
                f"{p}.kinematics[{s}].arm{arm}.quaternion",
                f"norm {np.linalg.norm(q[s]):.9g} deviates from 1 (sample {s}, {bad.size} samples affected)",
            ))
        g = kin[:, base + 7]
        bad = np.nonzero(~((g >= 0) & (g <= 1)))[0]
        if bad.size:
            out.append(Violation(f"{p}.kinematics[{int(bad[0])}].arm{arm}.gripper", "outside [0, 1]"))
    if ep.valid is not None and np.asarray(ep.valid).shape != (T,):
        out.append(Violation(f"{p}.valid", f"expected {T} flags"))
    views = {c.view_id for c in config.camera_views}
    for view, refs in sorted(ep.frame_refs.items()):
        if view not in views:
            out.append(Violation(f"{p}.frame_refs.{view}", "camera view not in configuration"))
            continue
        refs = np.asarray(refs)
        if refs.shape != (T,):
            out.append(Violation(f"{p}.frame_refs.{view}", f"expected {T} indices, got {refs.shape}"))
            continue
        n = ep.frame_count(view)
        if n is None:
            if view not in ep.media_refs:
                out.append(Violation(f"{p}.frame_refs.{view}", "no frame container or media reference"))
            continue
        bad = np.nonzero((refs < 0) | (refs >= n))[0]
        if bad.size:
            out.append(Violation(f"{p}.frame_refs.{view}[{int(bad[0])}]", f"index out of range for {n} frames"))
        cam = config.camera(view)
        shape = ep.frames[view].shape[1:]
        if shape != (cam.height, cam.width, cam.channels):
            out.append(Violation(f"{p}.frames.{view}", f"frame shape {shape} != configured "
                                 f"{(cam.height, cam.width, cam.channels)}"))


def validate_manifest(
    manifest: DatasetManifest,
    episodes: Sequence[EpisodeRecord],
    registry: ConfigurationRegistry,
) -> ValidationReport:
    """Check a manifest and its episodes against the schema invariants.

    Raises ``UnknownConfigurationError`` if the manifest names a robot
    configuration that is not registered; every other problem becomes a
    ``Violation`` in the returned report.
    """
    config = registry.get(manifest.robot_config_id)
    out: list[Violation] = []
    if not manifest.dataset_id:
        out.append(Violation("dataset_id", "missing"))
    _check_enum(out, "collection_method", manifest.collection_method, COLLECTION_METHODS)
    _check_enum(out, "operator_skill", manifest.operator_skill, OPERATOR_SKILLS)
    _check_enum(out, "environment", manifest.environment, ENVIRONMENTS)
    _check_enum(out, "kinematic_representation", manifest.kinematic_representation, KINEMATIC_REPRESENTATIONS)
    for name in ("sync_strategy", "diversity_notes"):
        if not str(getattr(manifest, name) or "").strip():
            out.append(Violation(name, "empty"))
    if manifest.episode_count != len(episodes):
        out.append(Violation("episode_count", f"declares {manifest.episode_count}, found {len(episodes)} episodes"))
    if not manifest.total_seconds >= 0:
        out.append(Violation("total_seconds", "must be nonnegative"))
    train, test = manifest.split_fractions
    if not (0 <= train <= 1 and 0 <= test <= 1) or abs(train + test - 1.0) > 1e-9:
        out.append(Violation("split_fractions", f"({train}, {test}) must lie in [0,1] and sum to 1"))
    seen = set()
    for i, ep in enumerate(episodes):
        if ep.episode_id in seen:
            out.append(Violation(f"episodes[{i}].episode_id", f"duplicate {ep.episode_id!r}"))
        seen.add(ep.episode_id)
        _check_episode(out, i, ep, manifest, config)
    return ValidationReport(tuple(out))


def split_episodes(episodes: Sequence, test_fraction: float = DEFAULT_TEST_FRACTION, selection_seed: int = 0):
    """Deterministic train/test split.

    Items are ordered by episode id (strings are used as-is) before the
    seeded shuffle, so the result does not depend on ingestion order.
    Returns ``(train, test)``, each sorted by id.
    """
    if not 0 <= test_fraction < 1:
        raise SchemaError(f"test_fraction must lie in [0, 1), got {test_fraction}")

    def key(e):
        return e if isinstance(e, str) else e.episode_id

    ordered = sorted(episodes, key=key)
    n_test = int(math.floor(test_fraction * len(ordered) + 0.5))
    perm = substream(selection_seed, "split").permutation(len(ordered))
    test_idx = set(perm[:n_test].tolist())
    train = [e for i, e in enumerate(ordered) if i not in test_idx]
    test = [e for i, e in enumerate(ordered) if i in test_idx]
    return train, test
