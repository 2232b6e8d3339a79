"""Action-conditioned rollout harness.

An episode is replayed through an external frame generator in
``chunk_count`` autoregressive chunks of ``chunk_size`` frames.  The first
chunk is conditioned on recorded frame 0; every later chunk on the last
frame the generator produced.  Generated frame ``i`` (0-based) is compared
with recorded frame ``i + 1``.

Generators are callables taking a ``RolloutRequest`` and returning
``chunk_size x H x W x C`` frames in ``[0, 1]``.  Two out-of-process
transports are provided: a line-delimited subprocess protocol and a
staged directory.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import queue
import subprocess
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from openh.errors import EvalError, GeneratorTimeout
from openh.eval.metrics import l1_per_frame, ssim_per_frame, to_unit

log = logging.getLogger(__name__)

CHUNK_SIZE = 12
CHUNK_COUNT = 6
CATEGORIES = ("benchtop", "tissue")
SERIES_COLUMNS = ("frame_index", "l1", "ssim", "chunk_index", "chunk_boundary")


@dataclass(frozen=True)
class RolloutRequest:
    episode_id: str
    dataset_id: str
    seed: int
    chunk_index: int
    start_frame: int
    context_frame: np.ndarray  # H x W x C in [0, 1]
    actions: np.ndarray  # chunk_size x 44


@dataclass
class RolloutMetricSeries:
    episode_id: str
    dataset_id: str
    seed: int
    l1: np.ndarray
    ssim: np.ndarray
    chunk_size: int = CHUNK_SIZE
    chunk_count: int = CHUNK_COUNT

    def __post_init__(self):
        F = self.chunk_size * self.chunk_count
        self.l1 = np.asarray(self.l1, dtype=np.float64)
        self.ssim = np.asarray(self.ssim, dtype=np.float64)
        if self.l1.shape != (F,) or self.ssim.shape != (F,):
            raise EvalError(f"metric series must have {F} frames")

    @property
    def frames(self) -> int:
        return self.chunk_size * self.chunk_count

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SERIES_COLUMNS)
        boundaries = set(chunk_boundaries(self.chunk_size, self.chunk_count))
        for i in range(self.frames):
            w.writerow([i, repr(float(self.l1[i])), repr(float(self.ssim[i])), i // self.chunk_size,
                        int(i in boundaries)])
        return buf.getvalue()


def chunk_boundaries(chunk_size: int = CHUNK_SIZE, chunk_count: int = CHUNK_COUNT) -> list[int]:
    """First frame index of every chunk after the first."""
    return [chunk_size * c for c in range(1, chunk_count)]


Generator = Callable[[RolloutRequest], np.ndarray]


def run_rollout(
    reference,
    actions,
    generator: Generator,
    episode_id: str,
    dataset_id: str = "",
    seed: int = 0,
    chunk_size: int = CHUNK_SIZE,
    chunk_count: int = CHUNK_COUNT,
) -> RolloutMetricSeries:
    """Drive ``generator`` through one episode and score every generated frame."""
    ref = to_unit(reference)
    actions = np.asarray(actions, dtype=np.float64)
    F = chunk_size * chunk_count
    if ref.shape[0] < F + 1:
        raise EvalError(f"{episode_id}: {ref.shape[0]} frames, need {F + 1} for a {F}-frame rollout")
    if actions.shape[0] < F:
        raise EvalError(f"{episode_id}: {actions.shape[0]} actions, need {F}")
    context = ref[0]
    generated = []
    for c in range(chunk_count):
        start = c * chunk_size
        req = RolloutRequest(episode_id, dataset_id, seed, c, start, context, actions[start:start + chunk_size])
        out = to_unit(generator(req))
        expected = (chunk_size,) + ref.shape[1:]
        if out.shape != expected:
            raise EvalError(f"{episode_id}: generator returned {out.shape}, expected {expected}")
        generated.append(out)
        context = out[-1]
    gen = np.concatenate(generated, axis=0)
    target = ref[1:F + 1]
    return RolloutMetricSeries(episode_id, dataset_id, seed, l1_per_frame(gen, target),
                               ssim_per_frame(gen, target), chunk_size, chunk_count)


class IdentityGenerator:
    """Echoes the recorded frames: the fidelity ceiling."""

    def __init__(self, references: Mapping[str, np.ndarray]):
        self.references = references

    def __call__(self, req: RolloutRequest) -> np.ndarray:
        ref = self.references[req.episode_id]
        n = req.actions.shape[0]
        return to_unit(ref[req.start_frame + 1:req.start_frame + 1 + n])


class ConstantGenerator:
    """Emits uniform frames of one gray level."""

    def __init__(self, value: float = 0.5):
        self.value = float(value)

    def __call__(self, req: RolloutRequest) -> np.ndarray:
        n = req.actions.shape[0]
        return np.full((n,) + req.context_frame.shape, self.value)


class HoldGenerator:
    """Repeats the conditioning frame (a zero-motion baseline)."""

    def __call__(self, req: RolloutRequest) -> np.ndarray:
        n = req.actions.shape[0]
        return np.repeat(req.context_frame[None], n, axis=0)


def _request_name(req: RolloutRequest) -> str:
    return f"{req.dataset_id}__{req.episode_id}__s{req.seed}__c{req.chunk_index}"


def write_request(req: RolloutRequest, path: Path):
    meta = json.dumps({
        "episode_id": req.episode_id, "dataset_id": req.dataset_id, "seed": req.seed,
        "chunk_index": req.chunk_index, "start_frame": req.start_frame,
    }, sort_keys=True)
    with open(path, "wb") as f:
        np.savez(f, context_frame=req.context_frame, actions=req.actions, meta=np.array(meta))


def read_request(path) -> RolloutRequest:
    with np.load(path) as z:
        meta = json.loads(str(z["meta"]))
        return RolloutRequest(meta["episode_id"], meta["dataset_id"], meta["seed"], meta["chunk_index"],
                              meta["start_frame"], z["context_frame"], z["actions"])


def write_response(frames, path):
    with open(path, "wb") as f:
        np.save(f, np.asarray(frames, dtype=np.float64))


def read_response(path) -> np.ndarray:
    return np.load(path)


class SubprocessGenerator:
    """Line-delimited protocol over a child process's stdin/stdout.

    For each chunk the harness writes ``{"request": ..., "response": ...}``
    (file paths) as one JSON line; the child writes the response file and
    answers with one line ``{"status": "ok"}`` or ``{"status": "error",
    "message": ...}``.
    """

    def __init__(self, command: Sequence[str], workdir, timeout: float = 60.0):
        self.command = list(command)
        self.workdir = Path(workdir)
        self.workdir.mkdir(parents=True, exist_ok=True)
        self.timeout = timeout
        self._proc = None
        self._lines: queue.Queue = queue.Queue()
        self._lock = threading.Lock()

    def _start(self):
        self._proc = subprocess.Popen(self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True,
                                      bufsize=1)
        self._lines = queue.Queue()
        proc, lines = self._proc, self._lines

        def pump():
            for line in proc.stdout:
                lines.put(line)
            lines.put(None)

        threading.Thread(target=pump, daemon=True).start()

    def __call__(self, req: RolloutRequest) -> np.ndarray:
        with self._lock:
            if self._proc is None or self._proc.poll() is not None:
                self._start()
            name = _request_name(req)
            req_path = self.workdir / f"{name}.request.npz"
            resp_path = self.workdir / f"{name}.response.npy"
            write_request(req, req_path)
            self._proc.stdin.write(json.dumps({"request": str(req_path), "response": str(resp_path)}) + "\n")
            self._proc.stdin.flush()
            try:
                line = self._lines.get(timeout=self.timeout)
            except queue.Empty:
                self.close()
                raise GeneratorTimeout(f"{name}: no response within {self.timeout}s") from None
            if line is None:
                self._proc = None
                raise EvalError(f"{name}: generator process exited")
            reply = json.loads(line)
            if reply.get("status") != "ok":
                raise EvalError(f"{name}: generator error: {reply.get('message', reply)}")
            return read_response(resp_path)

    def close(self):
        if self._proc is not None:
            self._proc.kill()
            self._proc.wait()
            self._proc = None


class StagedDirectoryGenerator:
    """Exchange requests and responses through ``requests/`` and ``responses/``.

    A response is picked up once ``responses/<name>.npy`` exists; writers
    should create it atomically (write then rename).
    """

    def __init__(self, root, timeout: float = 60.0, poll: float = 0.05):
        self.root = Path(root)
        (self.root / "requests").mkdir(parents=True, exist_ok=True)
        (self.root / "responses").mkdir(parents=True, exist_ok=True)
        self.timeout, self.poll = timeout, poll

    def __call__(self, req: RolloutRequest) -> np.ndarray:
        name = _request_name(req)
        tmp = self.root / "requests" / f".{name}.npz.tmp"
        write_request(req, tmp)
        os.replace(tmp, self.root / "requests" / f"{name}.npz")
        resp = self.root / "responses" / f"{name}.npy"
        deadline = time.monotonic() + self.timeout
        while not resp.exists():
            if time.monotonic() > deadline:
                raise GeneratorTimeout(f"{name}: no staged response within {self.timeout}s")
            time.sleep(self.poll)
        return read_response(resp)


@dataclass(frozen=True)
class RolloutFailure:
    episode_id: str
    dataset_id: str
    seed: int
    code: str
    message: str


def evaluate_episodes(jobs, generator: Generator, chunk_size: int = CHUNK_SIZE, chunk_count: int = CHUNK_COUNT):
    """Run every ``(episode_id, dataset_id, seed, reference, actions)`` job.

    A failing episode (timeout, bad output) is recorded and the run goes on.
    Returns ``(series, failures)`` in job order.
    """
    series, failures = [], []
    for episode_id, dataset_id, seed, reference, actions in jobs:
        try:
            series.append(run_rollout(reference, actions, generator, episode_id, dataset_id, seed,
                                      chunk_size, chunk_count))
        except EvalError as exc:
            log.warning("rollout failed for %s seed %s: %s", episode_id, seed, exc)
            failures.append(RolloutFailure(episode_id, dataset_id, seed, exc.code, str(exc)))
    return series, failures


def _shifted_mean(curves) -> np.ndarray:
    """Frame-wise mean taken around the first curve, so identical curves
    average to themselves exactly."""
    curves = np.asarray(curves, dtype=np.float64)
    return curves[0] + np.mean(curves - curves[0], axis=0)


def aggregate_rollouts(series: Sequence[RolloutMetricSeries], categories: Mapping[str, str],
                       required: Sequence[str] = ()) -> dict:
    """Per-category mean and spread curves across seeds.

    For each seed the curves are first averaged frame-wise over that seed's
    episodes in the category; the result is the frame-wise mean and
    population standard deviation of those seed-level curves.  Returns
    ``{category: {"l1": (mean, std), "ssim": (mean, std), "seeds": n,
    "episodes": n}}``.
    """
    if not series:
        raise EvalError("no rollout series to aggregate")
    F = series[0].frames
    grouped: dict[str, dict[int, list[RolloutMetricSeries]]] = {}
    for s in series:
        if s.frames != F:
            raise EvalError("all series must share the frame count")
        try:
            cat = categories[s.dataset_id]
        except KeyError:
            raise EvalError(f"dataset {s.dataset_id!r} has no category") from None
        grouped.setdefault(cat, {}).setdefault(s.seed, []).append(s)
    for cat in required:
        if cat not in grouped:
            raise EvalError(f"category {cat!r} is empty")
    out = {}
    for cat in sorted(grouped):
        seeds = grouped[cat]
        entry = {"seeds": len(seeds), "episodes": sum(len(v) for v in seeds.values())}
        for metric in ("l1", "ssim"):
            per_seed = np.array([_shifted_mean([getattr(s, metric) for s in
                                                sorted(seeds[k], key=lambda s: (s.dataset_id, s.episode_id))])
                                 for k in sorted(seeds)])
            mean = _shifted_mean(per_seed)
            entry[metric] = (mean, np.sqrt(np.mean((per_seed - mean) ** 2, axis=0)))
        out[cat] = entry
    return out


def summary_csv(aggregate: Mapping) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["category", "metric", "frame_index", "mean", "std", "seeds", "episodes"])
    for cat in sorted(aggregate):
        entry = aggregate[cat]
        for metric in ("l1", "ssim"):
            mean, std = entry[metric]
            for i, (m, s) in enumerate(zip(mean, std)):
                w.writerow([cat, metric, i, repr(float(m)), repr(float(s)), entry["seeds"], entry["episodes"]])
    return buf.getvalue()
