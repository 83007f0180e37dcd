"""Command-line pipelines: ``gen``, ``run``, ``replay``, ``report``, ``stats``.

The default output root is ``$ESCAPE4D_OUTPUT`` (falls back to ``./escape4d_out``).
Every command exits 0 only on full success.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import shlex
import sys
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import metrics as M
from . import stats as S
from . import trajectory as T
from .agents import ExternalAgent, MaskedAudioAgent, ReplayAgent, make_agent
from .core import Family, load_scene, silence_scene
from .engine import TrajectoryLog, run_episode
from .protocol import dumps_log, read_log
from .scenegen import GenConfig, generate_suite, write_suite


def output_root() -> Path:
    return Path(os.environ.get("ESCAPE4D_OUTPUT", "escape4d_out"))


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue(), encoding="utf-8")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(round(v, 10))
    return str(v)


# ---------------------------------------------------------------------------
# gen


def cmd_gen(args) -> int:
    families = tuple(Family(f) for f in args.family) if args.family else tuple(Family)
    config = GenConfig(seed=args.seed, scenes_per_family=args.count, families=families,
                       ambient_audio=not args.no_audio, interior_walls=args.interior_walls)
    suite = generate_suite(config)
    out = Path(args.out) if args.out else output_root() / "suite"
    try:
        write_suite(suite, out)
    except OSError as exc:
        print(f"error: cannot write suite to {out}: {exc}", file=sys.stderr)
        return 1
    print(f"{'family':<8}{'scenes':>8}{'objects':>10}{'mean':>8}")
    total_n = total_obj = 0
    for fam in families:
        scenes = [s for s in suite.scenes if s.family is fam]
        n_obj = sum(len(s.objects) for s in scenes)
        total_n += len(scenes)
        total_obj += n_obj
        print(f"{fam.value:<8}{len(scenes):>8}{n_obj:>10}{n_obj / max(1, len(scenes)):>8.2f}")
    print(f"{'total':<8}{total_n:>8}{total_obj:>10}")
    print(f"wrote {total_n} scenes to {out}")
    return 0


# ---------------------------------------------------------------------------
# run


@dataclass
class RunManifest:
    suite: str
    agent: str
    seeds: list[int]
    out: str
    no_audio: bool = False
    external: list[str] | None = None
    timeout: float = 120.0
    episodes: list[str] = field(default_factory=list)


def log_name(scene_id: str, agent: str, seed: int, audio: bool) -> str:
    safe = "".join(c if c.isalnum() or c in "-_" else "_" for c in agent)
    return f"{scene_id}.{safe}.s{seed}.{'audio' if audio else 'silent'}.jsonl"


def _run_one(job) -> tuple[str, str]:
    scene_path, agent_spec, external, timeout, seed, no_audio, hide_loudness, hide_transcripts = job
    scene = load_scene(scene_path)
    if no_audio:
        scene = silence_scene(scene)
    if external:
        agent = ExternalAgent(command=external, timeout=timeout, name=agent_spec)
    else:
        agent = make_agent(agent_spec)
    if hide_loudness or hide_transcripts:
        agent = MaskedAudioAgent(agent, hide_loudness, hide_transcripts)
    log = run_episode(scene, agent, seed)
    return log_name(scene.id, log.agent, seed, scene.has_ambient), dumps_log(log)


def cmd_run(args) -> int:
    suite = Path(args.suite)
    scene_paths = sorted(p for p in suite.glob("*.json") if p.name != "manifest.json")
    if args.family:
        fams = set(args.family)
        scene_paths = [p for p in scene_paths if p.stem.split("-")[0] in fams]
    if not scene_paths:
        print(f"error: no scenes in {suite}", file=sys.stderr)
        return 1
    external = shlex.split(args.cmd) if args.cmd else None
    agent = args.agent if not external else (args.agent if args.agent != "oracle" else "external")
    out = Path(args.out) if args.out else output_root() / "logs"
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(str(p), agent, external, args.timeout, seed, args.no_audio, args.hide_loudness,
             args.hide_transcripts) for p in scene_paths for seed in args.seeds]
    n_jobs = args.jobs or os.cpu_count() or 1
    if n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    escaped = 0
    for name, text in results:
        (out / name).write_text(text, encoding="utf-8")
        escaped += '"escaped": true' in text.splitlines()[-1]
    manifest = RunManifest(str(suite), agent, list(args.seeds), str(out), args.no_audio, external,
                           args.timeout, [n for n, _ in results])
    tag = "silent" if args.no_audio else "audio"
    (out / f"run_manifest.{agent}.{tag}.json").write_text(json.dumps(asdict(manifest), indent=2) + "\n",
                                                          encoding="utf-8")
    print(f"ran {len(results)} episodes with {agent}: {escaped} escaped")
    return 0


# ---------------------------------------------------------------------------
# replay


def cmd_replay(args) -> int:
    log = read_log(args.log)
    suite = Path(args.suite)
    scene = load_scene(suite / f"{log.scene_id}.json")
    if not log.ambient_audio and scene.has_ambient:
        scene = silence_scene(scene)
    again = run_episode(scene, ReplayAgent(log), log.seed)
    same = dumps_log(again) == dumps_log(log)
    if args.out:
        Path(args.out).write_text(dumps_log(again), encoding="utf-8")
    print("identical" if same else "DIVERGED")
    return 0 if same else 1


# ---------------------------------------------------------------------------
# report


def _collect_logs(paths: list[str]) -> list[TrajectoryLog]:
    files: list[Path] = []
    for p in map(Path, paths):
        files.extend(sorted(p.glob("*.jsonl")) if p.is_dir() else [p])
    return [read_log(f) for f in sorted(set(files))]


def cmd_report(args) -> int:
    logs = _collect_logs(args.logs)
    if not logs:
        print("error: no logs found", file=sys.stderr)
        return 1
    out = Path(args.out) if args.out else output_root() / "report"
    (out / "heatmaps").mkdir(parents=True, exist_ok=True)
    B, Mbins, extent = args.bins, args.distance_bins, (args.room, args.room)
    rel = args.episode_tcss

    groups: dict[tuple, list[TrajectoryLog]] = defaultdict(list)
    for log in logs:
        groups[(log.agent, log.family, log.ambient_audio)].append(log)
    keys = sorted(groups)

    rows = []
    for agent, fam, audio in keys:
        cm = M.corpus_metrics(groups[(agent, fam, audio)], episode_relative_tcss=rel)
        row = M.table_row(agent, fam, cm)
        row["audio"] = "1" if audio else "0"
        rows.append(row)
    cols = M.TABLE_COLUMNS[:2] + ["audio"] + M.TABLE_COLUMNS[2:]
    _write_csv(out / "metrics.csv", cols, [[r[c] for c in cols] for r in rows])

    run_cols = ["scene_id", "family", "agent", "seed", "audio", "escaped", "steps", "prop_gain", "gsr",
                "r_grab", "tsr", "r_trigger", "tcss", "distractor_triggered", "misguided", "time",
                "path_len", "turn", "frechet", "min_dist", "path_eff", "prog_eff", "mono", "auc", "hii_raw",
                "hii_norm"]
    run_rows, per_run = [], {}
    curves: dict[tuple, list] = defaultdict(list)
    grids: dict[tuple, list] = defaultdict(list)
    for log in sorted(logs, key=lambda l: (l.agent, l.family, l.scene_id, l.seed, l.ambient_audio)):
        rm = M.run_metrics(log, episode_relative_tcss=rel)
        aligned = T.align_log(log, extent)
        exit_aligned = T.rotate_about_center([log.exit], log.exit_side, extent)[0][0]
        try:
            pm = T.path_metrics(aligned, exit_aligned, steps=rm.steps, time=log.final_clock)
        except ValueError:
            pm = None
        curve = T.distance_curve(aligned, exit_aligned) if len(aligned) >= 2 else None
        grid = T.density(aligned, B)
        h = T.hii(grid)
        key = (log.agent, log.family, log.ambient_audio)
        if curve is not None:
            curves[key].append(curve)
        grids[key].append(grid)
        per_run[(log.agent, log.scene_id, log.seed, log.ambient_audio)] = (rm, pm, log, aligned)
        geo = ([log.final_clock] + [None] * 7 if pm is None else
               [pm.time, pm.path_len, pm.turn, pm.frechet, pm.min_dist, pm.path_eff, pm.prog_eff, pm.mono])
        run_rows.append([log.scene_id, log.family, log.agent, log.seed, int(log.ambient_audio), rm.escaped,
                         rm.steps, rm.prop_gain, rm.gsr, rm.r_grab, rm.tsr, rm.r_trigger, rm.tcss,
                         rm.distractor_triggered, rm.misguided, *geo,
                         None if curve is None else curve.auc, h.raw, h.norm])
    _write_csv(out / "runs.csv", run_cols, [[_fmt(v) for v in r] for r in run_rows])

    for key in keys:
        agent, fam, audio = key
        g = grids[key]
        counts = np.sum([x.counts for x in g], axis=0)
        tag = f"{agent}_{fam}_{'audio' if audio else 'silent'}"
        _write_csv(out / "heatmaps" / f"{tag}.csv", [f"x{i}" for i in range(B)],
                   [[_fmt(float(v)) for v in row] for row in np.log1p(counts)])

    grid_t = np.linspace(0.0, 1.0, T.CURVE_POINTS)
    curve_rows, surv_rows = [], []
    for key in keys:
        if not curves[key]:
            continue
        mean_c = np.mean([c.values for c in curves[key]], axis=0)
        _, surv = T.survival_curve(curves[key])
        label = [key[0], key[1], int(key[2])]
        for t, d, s in zip(grid_t, mean_c, surv):
            curve_rows.append(label + [_fmt(float(t)), _fmt(float(d))])
            surv_rows.append(label + [_fmt(float(t)), _fmt(float(s))])
    _write_csv(out / "curves.csv", ["agent", "family", "audio", "t", "mean_distance"], curve_rows)
    _write_csv(out / "survival.csv", ["agent", "family", "audio", "t", "S"], surv_rows)

    # paired audio minus silent deltas
    delta_fields = ["steps", "time", "path_len", "frechet", "mono", "path_eff", "prog_eff", "turn"]
    delta_rows, deltas = [], defaultdict(list)
    paired_grids: dict[tuple, tuple[list, list]] = defaultdict(lambda: ([], []))
    for (agent, sid, seed, audio), (rm, pm, log, aligned) in sorted(per_run.items()):
        if not audio:
            continue
        other = per_run.get((agent, sid, seed, False))
        if other is None or pm is None or other[1] is None:
            continue
        pm0 = other[1]
        vals = [getattr(pm, f) - getattr(pm0, f) for f in delta_fields]
        delta_rows.append([agent, log.family, sid, seed] + [_fmt(float(v)) for v in vals])
        for f, v in zip(delta_fields, vals):
            deltas[(agent, log.family, f)].append(float(v))
        pa, pb = paired_grids[(agent, log.family)]
        pa.append(T.density(aligned, Mbins))
        pb.append(T.density(other[3], Mbins))
    _write_csv(out / "deltas.csv", ["agent", "family", "scene_id", "seed"] + [f"d_{f}" for f in delta_fields],
               delta_rows)

    # hypothesis tests
    stat_rows = []
    rng_seed = args.seed
    for (agent, fam, f), d in sorted(deltas.items()):
        if len(d) >= 1:
            r = S.wilcoxon_signed_rank(d)
            stat_rows.append([f"wilcoxon d_{f}", agent, fam, r.method, _fmt(r.statistic), _fmt(r.p_value),
                              r.n_permutations, len(d), _fmt(float(np.median(d)))])
    for (agent, fam), (ga, gb) in sorted(paired_grids.items()):
        if len(ga) < 2:
            continue
        for kind in ("JSD", "L1"):
            r = S.paired_sign_flip(ga, gb, kind, n_permutations=args.n_perm_grid, rng=rng_seed)
            stat_rows.append([f"sign_flip {kind}", agent, fam, r.method, _fmt(r.statistic), _fmt(r.p_value),
                              r.n_permutations, len(ga), ""])
            r = S.group_permutation(ga, gb, kind, n_permutations=args.n_perm_grid, rng=rng_seed)
            stat_rows.append([f"group_permutation {kind}", agent, fam, r.method, _fmt(r.statistic),
                              _fmt(r.p_value), r.n_permutations, len(ga), ""])
    by_af: dict[tuple, dict[bool, list]] = defaultdict(lambda: {True: [], False: []})
    for (agent, sid, seed, audio), (rm, pm, log, _) in sorted(per_run.items()):
        by_af[(agent, log.family)][audio].append(float(rm.steps))
    for (agent, fam), parts in sorted(by_af.items()):
        a, b = parts[True], parts[False]
        if a and b:
            r = S.mann_whitney_u(a, b)
            stat_rows.append(["mann_whitney steps", agent, fam, r.method, _fmt(r.statistic), _fmt(r.p_value),
                              0, len(a) + len(b), ""])
            r = S.permutation_test(a, b, n_permutations=args.n_perm, rng=rng_seed)
            stat_rows.append(["permutation steps", agent, fam, r.method, _fmt(r.statistic), _fmt(r.p_value),
                              r.n_permutations, len(a) + len(b), ""])
    _write_csv(out / "stats_report.csv",
               ["test", "agent", "family", "method", "statistic", "p", "N", "n", "median"], stat_rows)

    meta = {"hii_bins": B, "distance_bins": Mbins, "room_extent": list(extent),
            "gr_denominator": "steps_recorded (failed runs count step_limit + 1)",
            "tcss_time_origin": "episode start" if rel else "clue window start",
            "trajectory_geometry": "recorded poses only", "stats_seed": rng_seed,
            "logs": len(logs)}
    (out / "report_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print((out / "metrics.csv").read_text(encoding="utf-8"), end="")
    return 0


# ---------------------------------------------------------------------------
# stats


def _read_column(path: Path, col: str) -> list[float]:
    with path.open(newline="", encoding="utf-8") as fh:
        return [float(r[col]) for r in csv.DictReader(fh) if r[col] != ""]


def cmd_stats(args) -> int:
    path = Path(args.csv)
    a = _read_column(path, args.a)
    b = _read_column(path, args.b) if args.b else None
    if args.test == "mw":
        r = S.mann_whitney_u(a, b)
    elif args.test == "wilcoxon":
        r = S.wilcoxon_signed_rank(a, b)
    elif args.test == "perm":
        r = S.permutation_test(a, b, n_permutations=args.n_perm, rng=args.seed)
    else:
        print(f"error: unknown test {args.test}", file=sys.stderr)
        return 2
    print(S.format_report([(args.test, r)]))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="escape4d", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a scene suite")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--family", action="append", choices=[f.value for f in Family])
    g.add_argument("--count", type=int, default=11, help="scenes per family")
    g.add_argument("--no-audio", action="store_true", help="omit ambient sources")
    g.add_argument("--interior-walls", type=int, default=0)
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="run an agent over a suite")
    r.add_argument("--suite", required=True)
    r.add_argument("--agent", default="oracle", help="builtin agent name (or label for --cmd)")
    r.add_argument("--cmd", help="external agent command line (stdio protocol)")
    r.add_argument("--seeds", type=int, nargs="+", default=[0])
    r.add_argument("--family", action="append")
    r.add_argument("--no-audio", action="store_true", help="silence ambient sources (ablation)")
    r.add_argument("--hide-loudness", action="store_true", help="agent never sees loudness readings")
    r.add_argument("--hide-transcripts", action="store_true", help="agent never sees trigger transcripts")
    r.add_argument("--timeout", type=float, default=120.0)
    r.add_argument("--jobs", type=int, default=0, help="worker processes (default: all cores)")
    r.add_argument("--out")
    r.set_defaults(func=cmd_run)

    rp = sub.add_parser("replay", help="re-execute a log and verify it reproduces")
    rp.add_argument("--log", required=True)
    rp.add_argument("--suite", required=True)
    rp.add_argument("--out")
    rp.set_defaults(func=cmd_replay)

    rep = sub.add_parser("report", help="metrics, analytics and tests from logs")
    rep.add_argument("logs", nargs="+")
    rep.add_argument("--out")
    rep.add_argument("--bins", type=int, default=T.DEFAULT_BINS)
    rep.add_argument("--distance-bins", type=int, default=16)
    rep.add_argument("--room", type=float, default=10.0)
    rep.add_argument("--n-perm", type=int, default=5000)
    rep.add_argument("--n-perm-grid", type=int, default=3000)
    rep.add_argument("--seed", type=int, default=0)
    rep.add_argument("--episode-tcss", action="store_true", help="measure t_found from episode start")
    rep.set_defaults(func=cmd_report)

    st = sub.add_parser("stats", help="run a two-sample test on CSV columns")
    st.add_argument("--csv", required=True)
    st.add_argument("--a", required=True)
    st.add_argument("--b")
    st.add_argument("--test", choices=["mw", "wilcoxon", "perm"], default="wilcoxon")
    st.add_argument("--n-perm", type=int, default=5000)
    st.add_argument("--seed", type=int, default=0)
    st.set_defaults(func=cmd_stats)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
