import json
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from openh.errors import RegistryConflictError, SchemaError, UnknownConfigurationError
from openh.schema import (
    CameraView,
    ConfigurationRegistry,
    DatasetManifest,
    RobotConfiguration,
    StreamDescriptor,
    register_configuration,
    split_episodes,
    validate_manifest,
)
from openh.store import SynthScenario, synthesize_episode


def manifest(n, **kw):
    base = dict(dataset_id="demo", robot_config_id="dvrk_si", collection_method="synthetic",
                operator_skill="scripted", environment="benchtop_phantom", sync_strategy="shared clock",
                kinematic_representation="absolute_cartesian", diversity_notes="varied phase",
                episode_count=n, total_seconds=float(n))
    base.update(kw)
    return DatasetManifest(**base)


@pytest.fixture
def episodes(registry):
    cfg = registry.get("dvrk_si")
    return [synthesize_episode(SynthScenario("dvrk_si", "circle", 0.0, 30, s), cfg, episode_id=f"ep{s:03d}",
                               dataset_id="demo") for s in range(10)]


def test_clean_dataset_has_empty_report(registry, episodes):
    report = validate_manifest(manifest(10), episodes, registry)
    assert report.ok and len(report) == 0


def test_episode_count_mismatch(registry, episodes):
    report = validate_manifest(manifest(10), episodes[:9], registry)
    assert [v.path for v in report] == ["episode_count"]


def test_quaternion_corruption_named(registry, episodes):
    bad = episodes[3]
    kin = bad.kinematics.copy()
    kin[17, 3:7] *= 1.01
    episodes[3] = bad.replace(kinematics=kin)
    report = validate_manifest(manifest(10), episodes, registry)
    assert len(report) == 1
    v = report.violations[0]
    assert "ep003" in v.path and "[17]" in v.path and "quaternion" in v.path
    assert "sample 17" in v.message


def test_unknown_config_is_hard_error(registry, episodes):
    with pytest.raises(UnknownConfigurationError):
        validate_manifest(manifest(10, robot_config_id="nope"), episodes, registry)


def test_template_completeness(registry, episodes):
    m = manifest(10, collection_method=None, environment="moon", sync_strategy="  ",
                 split_fractions=(0.9, 0.2))
    paths = [v.path for v in validate_manifest(m, episodes, registry)]
    assert paths == ["collection_method", "environment", "sync_strategy", "split_fractions"]


def test_episode_level_checks(registry, episodes):
    e = episodes[0]
    ts = e.timestamps.copy()
    ts[5] = ts[2]
    kin = e.kinematics.copy()
    kin[4, 15] = 1.5  # arm 1 gripper
    refs = dict(e.frame_refs)
    refs["wrist_left"] = refs["wrist_left"].copy()
    refs["wrist_left"][-1] = 99
    episodes[0] = e.replace(timestamps=ts, kinematics=kin, frame_refs=refs, split="val")
    episodes[1] = episodes[1].replace(kinematics=episodes[1].kinematics[:, :8])
    lines = validate_manifest(manifest(10), episodes, registry).lines()
    assert any(".split" in line for line in lines)
    assert any("timestamps[5]" in line for line in lines)
    assert any("[4].arm1.gripper" in line for line in lines)
    assert any("frame_refs.wrist_left[29]" in line for line in lines)
    assert any("episodes[1](ep001).kinematics: state width 8" in line for line in lines)


def test_validation_is_pure(registry, episodes):
    m = manifest(11)
    a = validate_manifest(m, episodes, registry)
    b = validate_manifest(m, episodes, registry)
    assert a == b


def test_manifest_json_round_trip():
    m = manifest(3, extensions={"ultrasound": {"depth_cm": 12}})
    d = json.loads(m.to_json())
    assert d["openh_schema"] == "1.0"
    assert d["split_fractions"] == {"train": 0.95, "test": 0.05}
    assert DatasetManifest.from_json(m.to_json()) == m
    d["openh_schema"] = "2.0"
    with pytest.raises(SchemaError):
        DatasetManifest.from_dict(d)


def new_config(**kw):
    base = dict(config_id="toy", platform_name="Toy arm", arm_count=1, per_arm_dof=(10,), native_rate_hz=15.0,
                camera_views=(CameraView("top", 32, 24),), extra_streams=(StreamDescriptor("depth", "m", 1),))
    base.update(kw)
    return RobotConfiguration(**base)


def test_register_and_lookup_round_trip():
    reg = ConfigurationRegistry()
    cfg = new_config()
    register_configuration(cfg, reg)
    assert reg.get("toy") == cfg
    assert ConfigurationRegistry.from_json(reg.to_json()).get("toy") == cfg
    register_configuration(new_config(), reg)  # idempotent
    assert len(reg) == 1
    with pytest.raises(RegistryConflictError):
        register_configuration(new_config(arm_count=2, per_arm_dof=(10, 10)), reg)
    with pytest.raises(UnknownConfigurationError):
        reg.get("other")


@pytest.mark.parametrize("change", [
    dict(native_rate_hz=0.0),
    dict(camera_views=(CameraView("top", 0, 24),)),
    dict(arm_count=5, per_arm_dof=(10,) * 5),
    dict(per_arm_dof=(11,)),
])
def test_invalid_configuration_rejected(change):
    with pytest.raises(SchemaError):
        register_configuration(new_config(**change), ConfigurationRegistry())


def test_concurrent_registration():
    reg = ConfigurationRegistry()
    cfgs = [new_config(config_id=f"c{i}") for i in range(50)]
    threads = [threading.Thread(target=reg.register, args=(c,)) for c in cfgs]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert sorted(reg) == sorted(c.config_id for c in cfgs)


def test_gripper_normalization(registry):
    cfg = registry.get("dvrk_si")
    np.testing.assert_allclose(cfg.normalize_gripper([-0.35, 1.2, 0.425, 5.0]), [0, 1, 0.5, 1])


def test_split_examples():
    ids = [f"e{i:03d}" for i in range(100)]
    train, test = split_episodes(ids, 0.05, 7)
    assert len(test) == 5
    assert split_episodes(list(reversed(ids)), 0.05, 7) == (train, test)
    assert split_episodes(ids, 0.0, 7)[1] == []
    assert any(split_episodes(ids, 0.05, s)[1] != test for s in range(20))
    with pytest.raises(SchemaError):
        split_episodes(ids, 1.0, 0)


@settings(max_examples=200, deadline=None)
@given(n=st.integers(1, 1000), frac=st.floats(0, 0.999), seed=st.integers(0, 2**31))
def test_split_partition_property(n, frac, seed):
    ids = [f"id{i}" for i in range(n)]
    train, test = split_episodes(ids, frac, seed)
    assert len(test) == int(np.floor(frac * n + 0.5))
    assert sorted(train + test) == sorted(ids)
    assert not set(train) & set(test)
