import csv
import io
import sys
import threading
import time

import numpy as np
import pytest

from openh.errors import EvalError
from openh.eval.rollout import (
    CHUNK_COUNT,
    CHUNK_SIZE,
    ConstantGenerator,
    HoldGenerator,
    IdentityGenerator,
    RolloutMetricSeries,
    StagedDirectoryGenerator,
    SubprocessGenerator,
    aggregate_rollouts,
    chunk_boundaries,
    evaluate_episodes,
    read_request,
    run_rollout,
    summary_csv,
    write_response,
)
from openh.store import SynthScenario, convert_control_space, reference_video, synthesize_episode

F = CHUNK_SIZE * CHUNK_COUNT


@pytest.fixture(scope="module")
def episode():
    from openh.schema import builtin_registry

    cfg = builtin_registry().get("kuka_star")
    ep = synthesize_episode(SynthScenario("kuka_star", "lissajous", 0.0, 80, 3), cfg, episode_id="e1",
                            dataset_id="bench")
    ep = convert_control_space(ep, "relative_cartesian", cfg)
    return reference_video(ep, "endoscope"), ep.actions


def test_identity_generator_is_perfect(episode):
    ref, actions = episode
    s = run_rollout(ref, actions, IdentityGenerator({"e1": ref}), "e1", "bench")
    assert s.frames == 72
    assert np.all(s.l1 == 0)
    assert np.max(np.abs(s.ssim - 1)) < 1e-9


def test_constant_gray_matches_mean_absolute_deviation(episode):
    ref, actions = episode
    s = run_rollout(ref, actions, ConstantGenerator(0.5), "e1")
    expected = [np.mean([abs(float(v) / 255.0 - 0.5) for v in frame.ravel()]) for frame in ref[1:F + 1]]
    np.testing.assert_allclose(s.l1, expected, rtol=0, atol=1e-9)


def test_chunks_condition_on_last_generated_frame(episode):
    ref, actions = episode
    seen = []

    def gen(req):
        seen.append((req.chunk_index, req.start_frame, req.context_frame.copy(), req.actions.copy()))
        return np.full((CHUNK_SIZE,) + req.context_frame.shape, 0.1 * (req.chunk_index + 1))

    run_rollout(ref, actions, gen, "e1")
    assert [s[:2] for s in seen] == [(c, 12 * c) for c in range(6)]
    np.testing.assert_array_equal(seen[0][2], ref[0] / 255.0)
    for c in range(1, 6):
        assert np.all(seen[c][2] == 0.1 * c)
        np.testing.assert_array_equal(seen[c][3], actions[12 * c:12 * c + 12])


def test_hold_generator_first_frame(episode):
    ref, actions = episode
    s = run_rollout(ref, actions, HoldGenerator(), "e1")
    u = ref / 255.0
    assert s.l1[0] == pytest.approx(np.mean(np.abs(u[0] - u[1])), abs=1e-12)
    assert s.l1[40] == pytest.approx(np.mean(np.abs(u[0] - u[41])), abs=1e-12)


def test_rollout_input_checks(episode):
    ref, actions = episode
    with pytest.raises(EvalError):
        run_rollout(ref[:72], actions, HoldGenerator(), "e1")
    with pytest.raises(EvalError):
        run_rollout(ref, actions[:71], HoldGenerator(), "e1")
    with pytest.raises(EvalError):
        run_rollout(ref, actions, lambda req: np.zeros((3, 2, 2, 3)), "e1")


def test_series_csv_layout():
    s = RolloutMetricSeries("e", "d", 0, np.linspace(0, 1, 72), np.ones(72))
    rows = list(csv.reader(io.StringIO(s.to_csv())))
    assert rows[0] == ["frame_index", "l1", "ssim", "chunk_index", "chunk_boundary"]
    assert len(rows) == 73
    assert [int(r[0]) for r in rows[1:] if r[4] == "1"] == chunk_boundaries() == [12, 24, 36, 48, 60]
    assert rows[13][3] == "1"
    assert float(rows[-1][1]) == 1.0
    with pytest.raises(EvalError):
        RolloutMetricSeries("e", "d", 0, np.zeros(70), np.zeros(70))


def series(ds, seed, l1, ssim=None, ep="e"):
    l1 = np.full(F, l1) if np.isscalar(l1) else l1
    return RolloutMetricSeries(ep, ds, seed, l1, np.full(F, 1.0) if ssim is None else ssim)


def test_aggregate_single_and_two_point():
    one = aggregate_rollouts([series("a", 0, np.linspace(0, 1, F))], {"a": "benchtop"})
    np.testing.assert_array_equal(one["benchtop"]["l1"][0], np.linspace(0, 1, F))
    assert np.all(one["benchtop"]["l1"][1] == 0)
    c, d = np.linspace(0.1, 0.3, F), 0.05
    two = aggregate_rollouts([series("a", 0, c), series("a", 1, c + 2 * d)], {"a": "tissue"})
    mean, std = two["tissue"]["l1"]
    np.testing.assert_allclose(mean, c + d, atol=1e-15)
    np.testing.assert_allclose(std, d, atol=1e-15)


def test_duplicated_seeds_have_zero_spread(rng):
    curve = rng.random(F)
    agg = aggregate_rollouts([series("a", s, curve, curve) for s in range(3)], {"a": "benchtop"})
    assert np.all(agg["benchtop"]["l1"][1] == 0) and np.all(agg["benchtop"]["ssim"][1] == 0)


def test_per_seed_mean_before_spread():
    # seed 0 has two episodes averaging 0.2; seed 1 one episode at 0.4
    s = [series("a", 0, 0.1, ep="x"), series("a", 0, 0.3, ep="y"), series("a", 1, 0.4, ep="x")]
    mean, std = aggregate_rollouts(s, {"a": "benchtop"})["benchtop"]["l1"]
    np.testing.assert_allclose(mean, 0.3)
    np.testing.assert_allclose(std, 0.1)


def test_full_layout_150_series(rng):
    cats = {f"d{i:02d}": ("benchtop" if i < 18 else "tissue") for i in range(25)}
    all_series = [series(ds, seed, rng.random(F), ep=f"{ds}_e{e}") for ds in cats for e in range(2)
                  for seed in range(3)]
    assert len(all_series) == 150
    agg = aggregate_rollouts(all_series, cats, required=("benchtop", "tissue"))
    assert agg["benchtop"]["episodes"] == 18 * 2 * 3 and agg["tissue"]["episodes"] == 7 * 2 * 3
    assert agg["benchtop"]["seeds"] == agg["tissue"]["seeds"] == 3
    # order independence
    perm = [all_series[i] for i in rng.permutation(150)]
    assert summary_csv(aggregate_rollouts(perm, cats)) == summary_csv(agg)


def test_aggregate_errors():
    with pytest.raises(EvalError):
        aggregate_rollouts([], {})
    with pytest.raises(EvalError):
        aggregate_rollouts([series("a", 0, 0.1)], {"a": "benchtop"}, required=("tissue",))
    with pytest.raises(EvalError):
        aggregate_rollouts([series("a", 0, 0.1)], {})


def test_subprocess_transport_echo(tmp_path, episode):
    ref, actions = episode
    np.save(tmp_path / "e1.npy", ref)
    gen = SubprocessGenerator([sys.executable, "-m", "openh.eval.stub_generator", "echo", "--reference-dir",
                               str(tmp_path)], tmp_path / "work", timeout=30)
    try:
        s = run_rollout(ref, actions, gen, "e1", "bench")
    finally:
        gen.close()
    assert np.all(s.l1 == 0) and np.max(np.abs(s.ssim - 1)) < 1e-9


def test_subprocess_timeout_recorded_and_run_continues(tmp_path, episode):
    ref, actions = episode
    hang = SubprocessGenerator([sys.executable, "-c", "import time; time.sleep(60)"], tmp_path, timeout=0.5)
    calls = {"n": 0}

    def flaky(req):
        if req.episode_id == "slow":
            return hang(req)
        calls["n"] += 1
        return HoldGenerator()(req)

    jobs = [("slow", "bench", 0, ref, actions), ("ok", "bench", 0, ref, actions)]
    got, failures = evaluate_episodes(jobs, flaky)
    hang.close()
    assert [s.episode_id for s in got] == ["ok"]
    assert [(f.episode_id, f.code) for f in failures] == [("slow", "eval.generator_timeout")]
    assert calls["n"] == CHUNK_COUNT


def test_staged_directory_transport(tmp_path, episode):
    ref, actions = episode
    stop = threading.Event()

    def worker():
        done = set()
        while not stop.is_set():
            for p in sorted((tmp_path / "requests").glob("*.npz")):
                if p.name in done:
                    continue
                req = read_request(p)
                out = ConstantGenerator(0.25)(req)
                tmp = tmp_path / "responses" / (p.stem + ".tmp.npy")
                write_response(out, tmp)
                tmp.rename(tmp_path / "responses" / (p.stem + ".npy"))
                done.add(p.name)
            time.sleep(0.01)

    gen = StagedDirectoryGenerator(tmp_path, timeout=20, poll=0.01)
    t = threading.Thread(target=worker, daemon=True)
    t.start()
    try:
        s = run_rollout(ref, actions, gen, "e1", "bench", seed=2)
    finally:
        stop.set()
        t.join()
    direct = run_rollout(ref, actions, ConstantGenerator(0.25), "e1", "bench", seed=2)
    np.testing.assert_array_equal(s.l1, direct.l1)
    assert len(list((tmp_path / "requests").glob("*.npz"))) == CHUNK_COUNT


def test_staged_directory_timeout(tmp_path, episode):
    ref, actions = episode
    _, failures = evaluate_episodes([("e1", "bench", 0, ref, actions)],
                                    StagedDirectoryGenerator(tmp_path, timeout=0.1, poll=0.02))
    assert failures[0].code == "eval.generator_timeout"
