"""Command-line front end: ``openh <command> ...``.

Every command is deterministic for fixed inputs and ``--seed``.  Options
may also come from a JSON file (``--config FILE``) or ``--set key=value``;
flags given on the command line win.  ``OHE_LOG`` sets the log level
(debug, info, warning, error).

Exit status: 0 success, 1 domain failure (validation violations, invalid
parameters), 2 environment or I/O failure (missing or unreadable files).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import os
import shlex
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from openh import __version__
from openh.errors import OpenHError, StoreError
from openh.kinematics import stride_for
from openh.eval import rollout as ro
from openh.eval import trials as tr
from openh.mixture import MixtureSpec, format_mixture_table, sample_stream, solve_mixture
from openh.normstats import ChunkStatistics, Normalizer, compute_statistics, merge_statistics
from openh.schema import (
    ENVIRONMENTS,
    ConfigurationRegistry,
    DatasetManifest,
    builtin_registry,
    split_episodes,
    validate_manifest,
)
from openh import store

log = logging.getLogger("openh")

TISSUE_ENVIRONMENTS = ("ex_vivo", "in_vivo", "clinical")
OUTPUT_VERSION = "1.0"

ROLLOUT_EPILOG = """\
outputs (in --out):
  series/<dataset>__<episode>__s<seed>.csv
      frame_index, l1, ssim, chunk_index, chunk_boundary
  summary.csv   category, metric, frame_index, mean, std, seeds, episodes
  failures.csv  episode_id, dataset_id, seed, code, message
  rollout.json  per-category frame-averaged means and counts
"""

TRIALS_EPILOG = """\
input log (JSON):
  {"subtasks": [...], "policies": {policy: {subtask: [k, n]}},
   "survival": {"stages": [...], "policies": {policy: {"counts": [...], "total": n}
                                              or {"logs": [[true, false], ...]}}}}
outputs (in --out):
  success_rates.csv  policy, subtask, successes, trials, rate, ci_low, ci_high, interval
                     (subtask "average" carries the unweighted mean and the pooled interval)
  comparisons.csv    subtask, policy_a, policy_b, p_value, p_holm
  survival.csv       policy, stage_index, stage, surviving, total
  trials.json        everything above in one document
"""


# ---------------------------------------------------------------- helpers


def _pairs(items, cast=float) -> dict:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise argparse.ArgumentTypeError(f"expected key=value, got {item!r}")
        try:
            out[key] = cast(value)
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad value in {item!r}") from None
    return out


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _registry(args) -> ConfigurationRegistry:
    reg = builtin_registry()
    if getattr(args, "registry", None):
        for cid in (extra := ConfigurationRegistry.from_json(Path(args.registry).read_text(encoding="utf-8"))):
            reg.register(extra.get(cid))
    return reg


def _require_dataset(root) -> Path:
    root = Path(root)
    if not (root / store.MANIFEST_NAME).is_file():
        raise FileNotFoundError(f"{root}: no {store.MANIFEST_NAME}")
    return root


def _pmap(fn, items, workers: int):
    """Ordered map; results come back in input order for any worker count."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _select_split(episodes, split: str):
    return [e for e in episodes if split == "all" or e.split == split]


# ---------------------------------------------------------------- commands


def cmd_validate(args) -> int:
    total = 0
    for path in args.datasets:
        root = _require_dataset(path)
        manifest, episodes = store.read_dataset(root)
        report = validate_manifest(manifest, episodes, store.load_registry(root, _registry(args)))
        for line in report.lines():
            print(f"{manifest.dataset_id}: {line}")
        print(f"{manifest.dataset_id}: {len(report)} violation(s) in {len(episodes)} episode(s)")
        total += len(report)
    return 0 if total == 0 else 1


def cmd_synth(args) -> int:
    reg = _registry(args)
    cfg = reg.get(args.robot)
    dataset_id = args.dataset_id or f"synth_{args.robot}_{args.family}"
    episodes = []
    for i in range(args.episodes):
        scenario = store.SynthScenario(cfg.config_id, args.family, args.noise, args.samples, args.seed)
        episodes.append(store.synthesize_episode(scenario, cfg, episode_id=f"{dataset_id}_{i:06d}",
                                                 dataset_id=dataset_id, task_prompt=args.prompt))
    _, test = split_episodes(episodes, args.test_fraction, args.seed)
    test_ids = {e.episode_id for e in test}
    episodes = [e.replace(split="test" if e.episode_id in test_ids else "train") for e in episodes]
    manifest = DatasetManifest(
        dataset_id=dataset_id, robot_config_id=cfg.config_id, collection_method="synthetic",
        operator_skill="scripted", environment=args.environment,
        sync_strategy="single synthetic clock shared by kinematics and cameras",
        kinematic_representation="absolute_cartesian",
        diversity_notes=f"{args.family} trajectories, position noise sigma {args.noise!r}, per-episode phases",
        episode_count=len(episodes),
        total_seconds=float(sum((e.sample_count - 1) / cfg.native_rate_hz for e in episodes)),
        split_fractions=(1.0 - args.test_fraction, args.test_fraction),
    )
    store.write_dataset(args.out, manifest, episodes, cfg)
    log.info("wrote %d episodes to %s", len(episodes), args.out)
    return 0


def cmd_convert(args) -> int:
    root = _require_dataset(args.dataset)
    manifest = store.read_manifest(root)
    reg = store.load_registry(root, _registry(args))
    cfg = reg.get(manifest.robot_config_id)
    paths = store.episode_paths(root)

    def convert(path):
        return store.convert_control_space(store.read_episode(path), args.target, cfg, args.target_rate)

    episodes = _pmap(convert, paths, args.workers)
    rate = cfg.native_rate_hz / stride_for(cfg.native_rate_hz, args.target_rate) if args.target_rate \
        else cfg.native_rate_hz
    out_manifest = dataclasses.replace(manifest, kinematic_representation=args.target,
                                       total_seconds=float(sum((e.sample_count - 1) / rate for e in episodes)))
    store.write_dataset(args.out, out_manifest, episodes, cfg)
    return 0


def _episode_chunks(ep, horizon: int) -> np.ndarray:
    if ep.actions is None:
        raise StoreError(f"episode {ep.episode_id} has no relative actions; run convert first")
    return store.action_chunks(ep.actions, horizon)


def cmd_stats(args) -> int:
    root = _require_dataset(args.dataset)
    manifest = store.read_manifest(root)
    paths = store.episode_paths(root)
    episodes = _select_split(_pmap(store.read_episode, paths, args.workers), args.split)
    chunks = _pmap(lambda ep: _episode_chunks(ep, args.horizon), episodes, args.workers)
    stats = compute_statistics(
        chunks, horizon=args.horizon, dims=44, dataset_id=manifest.dataset_id,
        config_id=manifest.robot_config_id,
        provenance={"split": args.split, "horizon": args.horizon,
                    "episodes": [e.episode_id for e in episodes]},
    )
    if stats.count == 0:
        log.warning("%s: no chunks of horizon %d in split %r", manifest.dataset_id, args.horizon, args.split)
    _write(Path(args.out), stats.to_json())
    return 0


def cmd_merge_stats(args) -> int:
    stats = [ChunkStatistics.from_json(Path(p).read_text(encoding="utf-8")) for p in args.stats]
    ids = [s.dataset_id for s in stats]
    weights = None
    if args.weights_from:
        doc = json.loads(Path(args.weights_from).read_text(encoding="utf-8"))
        ratios = doc["ratios"]
        missing = [i for i in ids if i not in ratios]
        if missing:
            raise OpenHError(f"no mixture ratio for {missing}")
        weights = [float(ratios[i]) for i in ids]
    elif args.weight:
        w = _pairs(args.weight)
        weights = [w[i] for i in ids]
    configs = sorted({s.config_id for s in stats})
    merged = merge_statistics(
        stats, weights, dataset_id=args.dataset_id, config_id=configs[0] if len(configs) == 1 else "",
        provenance={"datasets": ids, "weights": weights if weights is not None else [s.count for s in stats],
                    "weighting": "explicit" if weights is not None else "counts"},
    )
    _write(Path(args.out), merged.to_json())
    return 0


def cmd_normalize(args) -> int:
    root = _require_dataset(args.dataset)
    stats = ChunkStatistics.from_json(Path(args.stats).read_text(encoding="utf-8"))
    norm = Normalizer(args.kind, stats, clip_bound=args.clip)
    episodes = _select_split([store.read_episode(p) for p in store.episode_paths(root)], args.split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def work(ep):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            y = norm.normalize(_episode_chunks(ep, stats.horizon))
        return y, sorted({str(w.message) for w in caught})

    results = _pmap(work, episodes, args.workers)
    index = []
    for ep, (y, notes) in zip(episodes, results):
        for note in notes:
            log.warning("%s: %s", ep.episode_id, note)
        name = f"{ep.episode_id}.npy"
        with open(out / name, "wb") as f:
            np.save(f, y)
        index.append({"episode_id": ep.episode_id, "file": name, "chunks": int(y.shape[0]), "split": ep.split})
    _write(out / "normalized.json", _dump_json({
        "openh_normalized": OUTPUT_VERSION, "kind": args.kind, "clip_bound": args.clip,
        "horizon": stats.horizon, "stats_dataset_id": stats.dataset_id, "episodes": index,
    }))
    return 0


def cmd_mix(args) -> int:
    sizes = dict(_pairs(args.size))
    for path in args.datasets:
        m = store.read_manifest(_require_dataset(path))
        sizes[m.dataset_id] = m.total_seconds
    spec = MixtureSpec(sizes, _pairs(args.cap), args.seed)
    entries = solve_mixture(spec)
    doc = {"openh_mixture": OUTPUT_VERSION, "seed": args.seed, "sizes": sizes, "caps": spec.caps,
           "ratios": {e.dataset_id: e.ratio for e in entries}, "order": [e.dataset_id for e in entries]}
    if args.steps:
        drawn = sample_stream(entries, args.seed, args.steps)
        doc["steps"] = args.steps
        doc["sample_counts"] = {e.dataset_id: drawn.count(e.dataset_id) for e in entries}
    table = format_mixture_table(entries)
    out = Path(args.out)
    _write(out / "mixture.json", _dump_json(doc))
    _write(out / "mixture.txt", table)
    sys.stdout.write(table)
    return 0


def _category_map(args, manifests) -> dict:
    cats = {}
    for m in manifests:
        if m.environment in TISSUE_ENVIRONMENTS:
            cats[m.dataset_id] = "tissue"
        else:
            cats[m.dataset_id] = "benchtop"
    for key, value in _pairs(args.category, str).items():
        if value not in ro.CATEGORIES:
            raise OpenHError(f"category for {key!r} must be one of {ro.CATEGORIES}, got {value!r}")
        cats[key] = value
    return cats


def _make_generator(args, references):
    if args.generator_cmd:
        return ro.SubprocessGenerator(shlex.split(args.generator_cmd), Path(args.out) / "exchange",
                                      timeout=args.timeout)
    if args.staged:
        return ro.StagedDirectoryGenerator(args.staged, timeout=args.timeout)
    if args.builtin == "identity":
        return lambda req: ro.IdentityGenerator({req.episode_id: references[(req.dataset_id, req.episode_id)]})(req)
    if args.builtin == "constant":
        return ro.ConstantGenerator(args.gray)
    return ro.HoldGenerator()


def cmd_eval_rollout(args) -> int:
    manifests, jobs, references = [], [], {}
    for path in args.datasets:
        root = _require_dataset(path)
        manifest = store.read_manifest(root)
        manifests.append(manifest)
        for ep in _select_split([store.read_episode(p) for p in store.episode_paths(root)], args.split):
            if ep.actions is None:
                raise StoreError(f"episode {ep.episode_id} has no relative actions; run convert first")
            view = args.view or sorted(ep.frames)[0]
            ref = store.reference_video(ep, view)
            references[(ep.dataset_id, ep.episode_id)] = ref
            for k in range(args.num_seeds):
                jobs.append((ep.episode_id, ep.dataset_id, args.seed + k, ref, ep.actions))
    cats = _category_map(args, manifests)
    generator = _make_generator(args, references)
    try:
        results = _pmap(lambda job: ro.evaluate_episodes([job], generator, args.chunk_size, args.chunks), jobs,
                        args.workers)
    finally:
        if hasattr(generator, "close"):
            generator.close()
    series = [s for got, _ in results for s in got]
    failures = [f for _, failed in results for f in failed]
    out = Path(args.out)
    for s in series:
        _write(out / "series" / f"{s.dataset_id}__{s.episode_id}__s{s.seed}.csv", s.to_csv())
    _write(out / "failures.csv", _csv([(f.episode_id, f.dataset_id, f.seed, f.code, f.message) for f in failures],
                                      ["episode_id", "dataset_id", "seed", "code", "message"]))
    if not series:
        log.error("every rollout failed")
        return 1
    agg = ro.aggregate_rollouts(series, cats)
    _write(out / "summary.csv", ro.summary_csv(agg))
    _write(out / "rollout.json", _dump_json({
        "openh_rollout": OUTPUT_VERSION, "chunk_size": args.chunk_size, "chunks": args.chunks,
        "failures": len(failures),
        "categories": {c: {"seeds": e["seeds"], "episodes": e["episodes"],
                           "l1_mean": float(np.mean(e["l1"][0])), "ssim_mean": float(np.mean(e["ssim"][0]))}
                       for c, e in agg.items()},
    }))
    return 0


def cmd_eval_trials(args) -> int:
    doc = json.loads(Path(args.log).read_text(encoding="utf-8"))
    table = tr.TrialOutcomeTable.from_dict(doc)
    rows, result = [], {"openh_trials": OUTPUT_VERSION, "confidence": args.confidence, "policies": {}}
    averages = tr.subtask_average(table, args.confidence)
    for policy in table.policies:
        per = {}
        for subtask in table.subtasks:
            k, n = table.get(policy, subtask)
            if n == 0:
                continue
            lo, hi = tr.clopper_pearson(k, n, args.confidence)
            rows.append((policy, subtask, k, n, k / n, lo, hi, "per_subtask"))
            per[subtask] = {"successes": k, "trials": n, "rate": k / n, "ci": [lo, hi]}
        avg = averages[policy]
        rows.append((policy, "average", avg.pooled_successes, avg.pooled_trials, avg.mean_rate,
                     *avg.pooled_interval, "pooled"))
        result["policies"][policy] = {"subtasks": per, "average": avg.mean_rate, "subtasks_used": avg.subtasks_used,
                                      "pooled": {"successes": avg.pooled_successes, "trials": avg.pooled_trials,
                                                 "ci": list(avg.pooled_interval)}}
    comparisons = tr.pairwise_comparisons(table) if len(table.policies) > 1 else []
    result["comparisons"] = [c.__dict__ for c in comparisons]
    survival_rows = []
    if "survival" in doc:
        stages = doc["survival"]["stages"]
        result["survival"] = {"stages": stages, "policies": {}}
        for policy, entry in doc["survival"]["policies"].items():
            logs = entry["logs"] if "logs" in entry else tr.survival_logs_from_counts(entry["counts"], entry["total"])
            curve = tr.survival_curve(logs, stages)
            result["survival"]["policies"][policy] = {"surviving": list(curve.surviving), "total": curve.total}
            survival_rows += [(policy, i, s, c, curve.total) for i, (s, c) in enumerate(zip(stages, curve.surviving))]
    out = Path(args.out)
    _write(out / "success_rates.csv", _csv(rows, ["policy", "subtask", "successes", "trials", "rate", "ci_low",
                                                  "ci_high", "interval"]))
    _write(out / "comparisons.csv", _csv([(c.subtask, c.policy_a, c.policy_b, c.p_value, c.p_adjusted)
                                          for c in comparisons],
                                         ["subtask", "policy_a", "policy_b", "p_value", "p_holm"]))
    _write(out / "survival.csv", _csv(survival_rows, ["policy", "stage_index", "stage", "surviving", "total"]))
    _write(out / "trials.json", _dump_json(result))
    for policy, avg in averages.items():
        lo, hi = avg.pooled_interval
        print(f"{policy}: average {avg.mean_rate:.4f} over {avg.subtasks_used} subtasks; pooled "
              f"{avg.pooled_successes}/{avg.pooled_trials} CI [{lo:.4f}, {hi:.4f}]")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of option defaults (flags win)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one option")
    common.add_argument("--registry", help="JSON robot-configuration registry added to the built-ins")
    common.add_argument("--seed", type=int, default=0, help="root seed for every random stream (default 0)")
    common.add_argument("--workers", type=int, default=1, help="parallel workers for per-episode work")

    p = argparse.ArgumentParser(prog="openh", description=__doc__.split("\n\n")[0],
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"openh {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add(parent, name, fn, **kw):
        sp = parent.add_parser(name, parents=[common], formatter_class=argparse.RawDescriptionHelpFormatter, **kw)
        sp.set_defaults(func=fn, parser=sp)
        return sp

    sp = add(sub, "validate", cmd_validate, help="check dataset manifests and episodes")
    sp.add_argument("datasets", nargs="+")

    sp = add(sub, "synth", cmd_synth, help="write a synthetic dataset")
    sp.add_argument("--robot", default="dvrk_si", help="robot configuration id")
    sp.add_argument("--family", choices=store.FAMILIES, default="circle")
    sp.add_argument("--noise", type=float, default=0.0, help="position noise sigma in metres")
    sp.add_argument("--samples", type=int, default=300, help="samples per episode")
    sp.add_argument("--episodes", type=int, default=4)
    sp.add_argument("--dataset-id")
    sp.add_argument("--environment", choices=ENVIRONMENTS, default="simulation")
    sp.add_argument("--prompt", default="follow the scripted trajectory")
    sp.add_argument("--test-fraction", type=float, default=0.05)
    sp.add_argument("--out", required=True)

    sp = add(sub, "convert", cmd_convert, help="re-express a dataset as hybrid-relative actions")
    sp.add_argument("dataset")
    sp.add_argument("--target", default="relative_cartesian", choices=["relative_cartesian", "absolute_cartesian"])
    sp.add_argument("--target-rate", type=float, default=10.0, help="resampling rate in Hz (default 10)")
    sp.add_argument("--out", required=True)

    sp = add(sub, "stats", cmd_stats, help="per-step action-chunk statistics")
    sp.add_argument("dataset")
    sp.add_argument("--horizon", type=int, default=50)
    sp.add_argument("--split", choices=["train", "test", "all"], default="train")
    sp.add_argument("--out", required=True)

    sp = add(sub, "merge-stats", cmd_merge_stats, help="weighted merge of statistics files")
    sp.add_argument("stats", nargs="+")
    group = sp.add_mutually_exclusive_group()
    group.add_argument("--weights-from", help="mixture.json written by 'mix'")
    group.add_argument("--weight", action="append", metavar="DATASET=W")
    sp.add_argument("--dataset-id", default="mixture")
    sp.add_argument("--out", required=True)

    sp = add(sub, "normalize", cmd_normalize, help="normalize action chunks with stored statistics")
    sp.add_argument("dataset")
    sp.add_argument("--stats", required=True)
    sp.add_argument("--kind", choices=["temporal_zscore_clip", "quantile_affine"], default="temporal_zscore_clip")
    sp.add_argument("--clip", type=float, default=5.0)
    sp.add_argument("--split", choices=["train", "test", "all"], default="all")
    sp.add_argument("--out", required=True)

    sp = add(sub, "mix", cmd_mix, help="solve mixture ratios under caps")
    sp.add_argument("datasets", nargs="*", help="dataset directories (size = total seconds)")
    sp.add_argument("--size", action="append", metavar="DATASET=SIZE")
    sp.add_argument("--cap", action="append", metavar="DATASET=RATIO")
    sp.add_argument("--steps", type=int, default=0, help="also draw this many training steps")
    sp.add_argument("--out", required=True)

    ev = sub.add_parser("eval", help="rollout and trial evaluation").add_subparsers(dest="suite", required=True)
    sp = add(ev, "rollout", cmd_eval_rollout, help="chunked autoregressive rollout metrics",
             epilog=ROLLOUT_EPILOG)
    sp.add_argument("datasets", nargs="+", help="converted dataset directories")
    src = sp.add_mutually_exclusive_group()
    src.add_argument("--generator-cmd", help="command speaking the line-delimited protocol")
    src.add_argument("--staged", help="staged exchange directory")
    src.add_argument("--builtin", choices=["identity", "constant", "hold"], default="identity")
    sp.add_argument("--gray", type=float, default=0.5, help="level for the constant generator")
    sp.add_argument("--timeout", type=float, default=60.0)
    sp.add_argument("--view", help="camera view (default: first view)")
    sp.add_argument("--category", action="append", metavar="DATASET=benchtop|tissue")
    sp.add_argument("--num-seeds", type=int, default=1, help="evaluate seeds seed..seed+N-1")
    sp.add_argument("--split", choices=["train", "test", "all"], default="all")
    sp.add_argument("--chunks", type=int, default=ro.CHUNK_COUNT)
    sp.add_argument("--chunk-size", type=int, default=ro.CHUNK_SIZE)
    sp.add_argument("--out", required=True)

    sp = add(ev, "trials", cmd_eval_trials, help="success rates, exact tests and survival", epilog=TRIALS_EPILOG)
    sp.add_argument("log", help="trial outcome log (JSON)")
    sp.add_argument("--confidence", type=float, default=0.95)
    sp.add_argument("--out", required=True)
    return p


def _apply_settings(args, argv) -> None:
    """Fill options from --config / --set unless given on the command line."""
    settings = {}
    if args.config:
        settings.update(json.loads(Path(args.config).read_text(encoding="utf-8")))
    settings.update(_pairs(args.set, str))
    if not settings:
        return
    actions = {a.dest: a for a in args.parser._actions}
    for key, value in settings.items():
        dest = key.replace("-", "_")
        action = actions.get(dest)
        if action is None or not action.option_strings or dest in ("config", "set", "help"):
            args.parser.error(f"unknown option in configuration: {key!r}")
        if any(tok == o or tok.startswith(o + "=") for tok in argv for o in action.option_strings):
            continue
        if isinstance(value, str) and action.type is not None:
            value = action.type(value)
        if isinstance(action, argparse._AppendAction) and not isinstance(value, list):
            value = [value]
        if action.choices is not None and value not in action.choices:
            args.parser.error(f"invalid value {value!r} for {key!r}")
        setattr(args, dest, value)


def _setup_logging():
    level = os.environ.get("OHE_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING) if not level.isdigit() else int(level),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _apply_settings(args, argv)
    except argparse.ArgumentTypeError as exc:
        parser.error(str(exc))
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except OpenHError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return exc.exit_status
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return 2
    except argparse.ArgumentTypeError as exc:
        print(f"error[usage]: {exc}", file=sys.stderr)
        return 2
    except KeyError as exc:
        print(f"error[input]: missing key {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
