"""Rotation representations, hybrid-relative actions and unified packing.

Array functions accept leading batch dimensions, numpy style.  Relative
actions are expressed in the current tool frame:

    delta_p = R_t^T (p_target - p_t)
    delta_R = R_t^T R_target
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from openh import UNIFIED_ACTION_DIM
from openh.errors import CapacityError, DegenerateRotationError, KinematicsError
from openh.schema import ACTION_WIDTH_PER_ARM, STATE_WIDTH_PER_ARM, EpisodeRecord, RobotConfiguration

MAX_ARMS = 4
AUX_SLOTS = range(MAX_ARMS * ACTION_WIDTH_PER_ARM, UNIFIED_ACTION_DIM)
DEGENERACY_EPS = 1e-12
IDENTITY_SIXD = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


def quat_to_rotmat(q) -> np.ndarray:
    """Rotation matrix from a (w, x, y, z) quaternion, renormalized first."""
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm == 0) or not np.all(np.isfinite(norm)):
        raise KinematicsError("zero or non-finite quaternion")
    w, x, y, z = np.moveaxis(q / norm, -1, 0)
    R = np.stack([
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ], axis=-1)
    return R.reshape(q.shape[:-1] + (3, 3))


def rotmat_to_quat(R) -> np.ndarray:
    """Unit quaternion (w, x, y, z) with canonical sign w >= 0."""
    R = np.asarray(R, dtype=np.float64)
    batch = R.shape[:-2]
    m = R.reshape(-1, 3, 3)
    out = np.empty((m.shape[0], 4))
    for i, r in enumerate(m):
        tr = r[0, 0] + r[1, 1] + r[2, 2]
        # Shepperd: branch on the largest diagonal term for stability.
        k = int(np.argmax([tr, r[0, 0], r[1, 1], r[2, 2]]))
        if k == 0:
            s = 2.0 * np.sqrt(1.0 + tr)
            q = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        elif k == 1:
            s = 2.0 * np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
            q = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
        elif k == 2:
            s = 2.0 * np.sqrt(1.0 - r[0, 0] + r[1, 1] - r[2, 2])
            q = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
        else:
            s = 2.0 * np.sqrt(1.0 - r[0, 0] - r[1, 1] + r[2, 2])
            q = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
        q = np.asarray(q)
        q /= np.linalg.norm(q)
        out[i] = -q if q[0] < 0 else q
    return out.reshape(batch + (4,))


def rotmat_to_sixd(R) -> np.ndarray:
    """First two columns of ``R``, column-major: ``[c1; c2]``."""
    R = np.asarray(R, dtype=np.float64)
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def sixd_to_rotmat(r) -> np.ndarray:
    """Gram-Schmidt recovery of a rotation matrix from a 6D vector.

    Raises ``DegenerateRotationError`` when the first column vanishes or
    the two columns are (near-)parallel.
    """
    r = np.asarray(r, dtype=np.float64)
    c1, c2 = r[..., :3], r[..., 3:6]
    n1 = np.linalg.norm(c1, axis=-1, keepdims=True)
    if np.any(~(n1 >= DEGENERACY_EPS)):
        raise DegenerateRotationError("6D rotation has a vanishing first column")
    b1 = c1 / n1
    u2 = c2 - np.sum(b1 * c2, axis=-1, keepdims=True) * b1
    n2 = np.linalg.norm(u2, axis=-1, keepdims=True)
    if np.any(~(n2 >= DEGENERACY_EPS)):
        raise DegenerateRotationError("6D rotation columns are parallel")
    b2 = u2 / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def rotation_angle(Ra, Rb) -> np.ndarray:
    """Geodesic angle between two rotations, in radians."""
    rel = np.swapaxes(np.asarray(Ra), -1, -2) @ np.asarray(Rb)
    cos = (np.trace(rel, axis1=-2, axis2=-1) - 1.0) / 2.0
    # atan2 stays accurate near 0 and pi, where arccos loses half the digits
    skew = np.stack([rel[..., 2, 1] - rel[..., 1, 2], rel[..., 0, 2] - rel[..., 2, 0],
                     rel[..., 1, 0] - rel[..., 0, 1]], axis=-1)
    return np.arctan2(np.linalg.norm(skew, axis=-1) / 2.0, cos)


@dataclass(frozen=True)
class Pose:
    position: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64).reshape(3))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.zeros(3), np.eye(3))

    @classmethod
    def from_quat(cls, position, quat) -> "Pose":
        return cls(position, quat_to_rotmat(quat))

    def is_valid(self, tol: float = 1e-9) -> bool:
        R = self.rotation
        return bool(
            np.all(np.isfinite(self.position))
            and np.max(np.abs(R.T @ R - np.eye(3))) <= tol
            and abs(np.linalg.det(R) - 1.0) <= tol
        )


@dataclass(frozen=True)
class HybridRelativeAction:
    delta_position: np.ndarray
    delta_rotation: np.ndarray  # 6D
    gripper: float

    def __post_init__(self):
        object.__setattr__(self, "delta_position", np.asarray(self.delta_position, dtype=np.float64).reshape(3))
        object.__setattr__(self, "delta_rotation", np.asarray(self.delta_rotation, dtype=np.float64).reshape(6))
        object.__setattr__(self, "gripper", float(self.gripper))

    @classmethod
    def zero(cls, gripper: float = 0.0) -> "HybridRelativeAction":
        return cls(np.zeros(3), IDENTITY_SIXD, gripper)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.delta_position, self.delta_rotation, [self.gripper]])

    @classmethod
    def from_vector(cls, v) -> "HybridRelativeAction":
        v = np.asarray(v, dtype=np.float64)
        return cls(v[:3], v[3:9], v[9])


def absolute_to_relative(state: Pose, target: Pose, gripper_target: float) -> HybridRelativeAction:
    Rt = state.rotation
    dp = Rt.T @ (target.position - state.position)
    dR = Rt.T @ target.rotation
    return HybridRelativeAction(dp, rotmat_to_sixd(dR), gripper_target)


def integrate_relative(state: Pose, action: HybridRelativeAction) -> Pose:
    Rt = state.rotation
    return Pose(state.position + Rt @ action.delta_position, Rt @ sixd_to_rotmat(action.delta_rotation))


def relative_actions_batch(positions, rotations, grippers) -> np.ndarray:
    """Per-step actions between consecutive samples of one arm.

    ``positions`` is ``T x 3``, ``rotations`` ``T x 3 x 3``, ``grippers``
    ``T``.  Returns ``(T-1) x 10`` rows ``[dp, 6d, g]`` where step ``t``
    moves sample ``t`` to ``t+1`` and the gripper target is the value at
    ``t+1``.
    """
    p = np.asarray(positions, dtype=np.float64)
    R = np.asarray(rotations, dtype=np.float64)
    Rt_T = np.swapaxes(R[:-1], -1, -2)
    dp = np.einsum("tij,tj->ti", Rt_T, p[1:] - p[:-1])
    dR = Rt_T @ R[1:]
    g = np.asarray(grippers, dtype=np.float64)[1:, None]
    return np.concatenate([dp, rotmat_to_sixd(dR), g], axis=1)


def arm_slots(config: RobotConfiguration) -> list[slice]:
    """Unified-vector slots for each arm: arm ``i`` starts at ``10 * i``."""
    if config.arm_count > MAX_ARMS:
        raise CapacityError(f"{config.arm_count} arms exceed the {MAX_ARMS} arm blocks")
    if sum(config.per_arm_dof) > UNIFIED_ACTION_DIM:
        raise CapacityError(f"layout of {sum(config.per_arm_dof)} slots exceeds {UNIFIED_ACTION_DIM}")
    slots = []
    for i, width in enumerate(config.per_arm_dof):
        if width > ACTION_WIDTH_PER_ARM:
            raise CapacityError(f"arm {i} needs {width} slots, block holds {ACTION_WIDTH_PER_ARM}")
        slots.append(slice(ACTION_WIDTH_PER_ARM * i, ACTION_WIDTH_PER_ARM * (i + 1)))
    return slots


def occupancy_mask(config: RobotConfiguration) -> np.ndarray:
    mask = np.zeros(UNIFIED_ACTION_DIM, dtype=bool)
    for s in arm_slots(config):
        mask[s] = True
    return mask


@dataclass(frozen=True)
class UnifiedActionChunk:
    actions: np.ndarray  # H x 44
    occupancy_mask: np.ndarray  # 44 bools

    @property
    def horizon(self) -> int:
        return int(self.actions.shape[0])


def pack_vectors(arm_vectors, config: RobotConfiguration) -> np.ndarray:
    """Place per-arm ``(..., arms, 10)`` rows into ``(..., 44)`` zero-padded rows."""
    arm_vectors = np.asarray(arm_vectors, dtype=np.float64)
    slots = arm_slots(config)
    if arm_vectors.shape[-2] != len(slots) or arm_vectors.shape[-1] != ACTION_WIDTH_PER_ARM:
        raise KinematicsError(
            f"expected (..., {len(slots)}, {ACTION_WIDTH_PER_ARM}) arm vectors, got {arm_vectors.shape}"
        )
    out = np.zeros(arm_vectors.shape[:-2] + (UNIFIED_ACTION_DIM,))
    for i, s in enumerate(slots):
        out[..., s] = arm_vectors[..., i, :]
    return out


def pack_unified(
    steps: Sequence[Sequence[HybridRelativeAction]],
    config: RobotConfiguration,
    horizon: int | None = None,
) -> UnifiedActionChunk:
    """Pack ``H`` steps of per-arm actions into a zero-padded chunk."""
    H = len(steps) if horizon is None else horizon
    if H <= 0:
        raise KinematicsError("horizon must be positive")
    if len(steps) != H:
        raise KinematicsError(f"got {len(steps)} steps for horizon {H}")
    rows = np.array([[a.to_vector() for a in step] for step in steps]).reshape(H, -1, ACTION_WIDTH_PER_ARM)
    return UnifiedActionChunk(pack_vectors(rows, config), occupancy_mask(config))


def unpack_vectors(unified, config: RobotConfiguration) -> np.ndarray:
    unified = np.asarray(unified, dtype=np.float64)
    return np.stack([unified[..., s] for s in arm_slots(config)], axis=-2)


def arm_state(kinematics, arm: int):
    """Split absolute state columns of one arm into position, rotation, gripper."""
    base = arm * STATE_WIDTH_PER_ARM
    k = np.asarray(kinematics, dtype=np.float64)
    return k[:, base:base + 3], quat_to_rotmat(k[:, base + 3:base + 7]), k[:, base + 7]


def stride_for(native_rate_hz: float, target_rate_hz: float) -> int:
    if not target_rate_hz > 0:
        raise KinematicsError(f"target rate must be positive, got {target_rate_hz}")
    if target_rate_hz > native_rate_hz:
        raise KinematicsError(f"target rate {target_rate_hz} Hz exceeds native {native_rate_hz} Hz")
    # round() is half-to-even: 25 Hz -> 10 Hz gives stride 2.
    return max(1, int(round(native_rate_hz / target_rate_hz)))


def resample_stride(episode: EpisodeRecord, target_rate_hz: float, native_rate_hz: float) -> EpisodeRecord:
    """Keep every ``stride``-th sample, starting at the first."""
    if episode.actions is not None:
        raise KinematicsError("resample before converting to relative actions")
    stride = stride_for(native_rate_hz, target_rate_hz)
    if stride == 1:
        return episode
    keep = slice(0, None, stride)
    return episode.replace(
        kinematics=episode.kinematics[keep].copy(),
        timestamps=episode.timestamps[keep].copy(),
        frame_refs={v: r[keep].copy() for v, r in episode.frame_refs.items()},
        valid=None if episode.valid is None else episode.valid[keep].copy(),
    )
