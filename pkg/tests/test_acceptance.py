"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line."""

import itertools
import shutil
import time
from pathlib import Path

import numpy as np

from escape4d.agents import GreedyAudioAgent, NoopAgent, OracleAgent
from escape4d.cli import main
from escape4d.core import Family, silence_scene
from escape4d.engine import ActionRequest, Interactions, WorldState, action_time_cost, apply_action, run_episode
from escape4d.metrics import corpus_metrics, run_metrics
from escape4d.scenegen import TARGET_OBJECT_COUNTS, GenConfig, generate_scene, generate_suite
from escape4d.stats import (
    group_permutation,
    mann_whitney_u,
    mantel,
    paired_sign_flip,
    permutation_test,
    wilcoxon_signed_rank,
)
from escape4d.trajectory import frechet, hii, log_path_metrics

from .conftest import ACCEPTANCE_LINES, make_scene
from .oracles import brute_force, frechet_bruteforce, random_log


def verdict(n: int, title: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {title} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_c01_suite_structure():
    t0 = time.perf_counter()
    suite = generate_suite(GenConfig(seed=0))
    dt = time.perf_counter() - t0
    means = {}
    for fam in Family:
        scenes = [s for s in suite.scenes if s.family is fam]
        means[fam] = (len(scenes), sum(len(s.objects) for s in scenes) / max(1, len(scenes)))
    ok = (len(suite.scenes) == 66 and all(n == 11 for n, _ in means.values())
          and all(abs(m - TARGET_OBJECT_COUNTS[f]) <= 1.0 for f, (_, m) in means.items()) and dt < 10)
    detail = ", ".join(f"{f.value}={m:.2f}" for f, (_, m) in means.items())
    verdict(1, "suite structure", ok, f"{len(suite.scenes)} scenes; {detail}; {dt:.2f}s")


def test_c02_solvability(suite):
    t0 = time.perf_counter()
    logs = [run_episode(sc, OracleAgent()) for sc in suite.scenes]
    dt = time.perf_counter() - t0
    escaped = sum(l.escaped and l.outcome.steps_recorded <= l.step_limit for l in logs)
    timed = [l.t_found for l in logs if l.family == "D2T"]
    ok = escaped == 66 and len(timed) == 11 and all(t is not None and t < 20.0 for t in timed) and dt < 60
    worst = max((t for t in timed if t is not None), default=float("nan"))
    verdict(2, "oracle solvability", ok, f"{escaped}/66 escaped; max D2T t_found {worst:.2f}s; {dt:.2f}s")


def test_c03_failure_convention(suite):
    d2 = [run_episode(sc, NoopAgent()) for sc in suite.scenes if sc.family.step_limit == 65]
    d3 = [run_episode(sc, NoopAgent()) for sc in suite.scenes if sc.family.step_limit == 80]
    s2 = corpus_metrics(d2).mean_steps
    s3 = corpus_metrics(d3).mean_steps
    ok = len(d2) == 33 and len(d3) == 22 and s2 == 66.0 and s3 == 81.0
    verdict(3, "failure convention", ok,
            f"D2 tier {s2:.2f} over {len(d2)} runs, D3 tier {s3:.2f} over {len(d3)} runs")


def _random_action(rng):
    kind = rng.integers(6)
    if kind == 0:
        return ActionRequest(move_forward=float(rng.uniform(0, 10)))
    if kind == 1:
        return ActionRequest(rotate_right=float(rng.uniform(-180, 180)), rotate_down=float(rng.uniform(-90, 90)))
    if kind == 2:
        return ActionRequest(look_at=(float(rng.random()), float(rng.random())), grab=bool(rng.random() < 0.5))
    if kind == 3:
        return ActionRequest(trigger=True, move_forward=float(rng.uniform(0, 3)))
    if kind == 4:
        return ActionRequest(interactions=Interactions(input=str(rng.integers(10000))))
    return ActionRequest(rotate_right=float(rng.uniform(-90, 90)), move_forward=float(rng.uniform(0, 4)),
                         grab=True)


def test_c04_time_model():
    table = [action_time_cost(ActionRequest(move_forward=4.0)),
             action_time_cost(ActionRequest(rotate_right=90.0)),
             action_time_cost(ActionRequest(grab=True))]
    exact = table == [2.0, 1.5, 0.5]
    rng = np.random.default_rng(2024)
    scene = make_scene(step_limit=10_000)
    worst = 0.0
    for _ in range(1000):
        state = WorldState.initial(scene)
        total = 0.0
        for _ in range(int(rng.integers(1, 20))):
            if state.finished:
                break
            a = _random_action(rng)
            total += action_time_cost(a)
            state, _, rec = apply_action(state, a)
            worst = max(worst, abs(rec.clock_after - rec.clock_before - action_time_cost(a)))
        worst = max(worst, abs(state.clock - total))
    ok = exact and worst <= 1e-9
    verdict(4, "time model", ok, f"costs {table}; max additivity error {worst:.1e}s over 1000 sequences")


def _pipeline(root: Path) -> dict[str, bytes]:
    suite, logs, rep = root / "suite", root / "logs", root / "report"
    main(["gen", "--seed", "11", "--count", "2", "--out", str(suite)])
    for extra in ([], ["--no-audio"]):
        main(["run", "--suite", str(suite), "--agent", "greedy_audio", "--seeds", "0", "1", "--jobs", "1",
              "--out", str(logs), *extra])
    main(["run", "--suite", str(suite), "--agent", "random", "--jobs", "1", "--out", str(logs)])
    main(["report", str(logs), "--out", str(rep), "--n-perm", "499", "--n-perm-grid", "199"])
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_c05_determinism(tmp_path):
    work = tmp_path / "run"
    first = _pipeline(work)
    shutil.rmtree(work)
    second = _pipeline(work)
    n_logs = sum(k.endswith(".jsonl") for k in first)
    n_csv = sum(k.endswith(".csv") for k in first)
    ok = first == second and n_logs == 12 * 5 and n_csv > 5
    verdict(5, "pipeline determinism", ok, f"{n_logs} logs, {n_csv} CSVs, {len(first)} files byte-identical")


def test_c06_metric_oracles():
    rng = np.random.default_rng(6)
    logs = [random_log(rng) for _ in range(100)]
    fields = ("gsr", "r_grab", "tsr", "r_trigger", "prop_gain", "tcss", "mat", "amr")
    mismatches = 0
    checked = 0
    groups = [[l] for l in logs] + [logs] + [[l for l in logs if l.family == f] for f in ("D2M", "D3M", "D2T")]
    for group in groups:
        cm, ref = corpus_metrics(group), brute_force(group)
        for f in fields:
            checked += 1
            mismatches += getattr(cm, f) != ref[f]
    fam_hits = sum(run_metrics(l).distractor_triggered for l in logs)
    ok = mismatches == 0
    verdict(6, "metric oracles", ok, f"{checked} comparisons over 100 logs, {mismatches} mismatches; "
                                     f"{fam_hits} distractor hits")


def test_c07_frechet_exact():
    rng = np.random.default_rng(7)
    bad = 0
    for _ in range(200):
        P = rng.random((rng.integers(1, 9), 2)) * 10
        Q = rng.random((rng.integers(1, 9), 2)) * 10
        bad += frechet(P, Q) != frechet_bruteforce(P, Q)
    verdict(7, "Frechet DP equals enumeration", bad == 0, f"{bad}/200 mismatches")


def test_c08_hii_bounds():
    rng = np.random.default_rng(8)
    out_of_range = 0
    for _ in range(1000):
        B = int(rng.integers(2, 17))
        g = rng.random((B, B)) ** rng.uniform(0.2, 8)
        g[rng.random((B, B)) < rng.random()] = 0.0
        if g.sum() == 0:
            g[0, 0] = 1.0
        h = hii(g / g.sum()).norm
        out_of_range += not (0.0 <= h <= 1.0)
    uniform = hii(np.full((16, 16), 1 / 256)).norm
    single = np.zeros((16, 16))
    single[4, 9] = 1.0
    one = hii(single).norm
    two = hii(np.array([[0.5, 0.5], [0.0, 0.0]])).norm
    ok = out_of_range == 0 and uniform == 0.0 and one == 1.0 and abs(two - 1 / 3) <= 1e-12
    verdict(8, "HII bounds", ok, f"{out_of_range} out of range; uniform {uniform}, single {one}, "
                                 f"two-cell {two:.15f}")


def _mw_enumeration(a, b):
    pooled = np.r_[a, b]
    n1 = len(a)
    obs = abs(sum(pooled[:n1]) - n1 * (len(pooled) + 1) / 2)
    combos = list(itertools.combinations(range(len(pooled)), n1))
    return sum(abs(sum(pooled[list(c)]) - n1 * (len(pooled) + 1) / 2) >= obs for c in combos) / len(combos)


def _wilcoxon_enumeration(d):
    ranks = np.arange(1, len(d) + 1)
    mean = ranks.sum() / 2
    obs = abs(ranks[np.asarray(d) > 0].sum() - mean)
    pats = list(itertools.product((0, 1), repeat=len(d)))
    return sum(abs(np.dot(p, ranks) - mean) >= obs for p in pats) / len(pats)


def test_c09_statistical_exactness():
    mw = mann_whitney_u([1, 2, 3], [4, 5, 6]).p_value
    wx = wilcoxon_signed_rank([1, 2, 3]).p_value
    mw_ref = _mw_enumeration([1, 2, 3], [4, 5, 6])
    wx_ref = _wilcoxon_enumeration([1, 2, 3])
    far = np.arange(30.0)
    p5000 = permutation_test(far, far + 100, 5000, rng=0).p_value
    p3000 = permutation_test(far, far + 100, 3000, rng=0).p_value
    ok = (abs(mw - 0.1) < 1e-12 and abs(wx - 0.25) < 1e-12 and mw == mw_ref and wx == wx_ref
          and p5000 == 1 / 5001 and p3000 == 1 / 3001)
    verdict(9, "statistical exactness", ok, f"MW {mw}, Wilcoxon {wx}, floors {p5000:.5f} and {p3000:.5f}")


def _dist(p):
    return np.hypot(*(p[:, None] - p[None]).transpose(2, 0, 1))


def test_c10_null_calibration():
    reps, N, alpha = 1000, 999, 0.05
    t0 = time.perf_counter()
    rejections = {}

    def rate(name, draw):
        rejections[name] = sum(draw(np.random.default_rng([10, i])) <= alpha for i in range(reps)) / reps

    rate("mann_whitney", lambda r: mann_whitney_u(r.normal(size=20), r.normal(size=20)).p_value)
    rate("wilcoxon", lambda r: wilcoxon_signed_rank(r.normal(size=20) - r.normal(size=20)).p_value)
    rate("permutation", lambda r: permutation_test(r.normal(size=10), r.normal(size=10), N, rng=r).p_value)

    def grids(r, n):
        g = r.dirichlet(np.full(16, 0.5), n)
        return list(g.reshape(n, 4, 4))

    rate("group_permutation", lambda r: group_permutation(grids(r, 8), grids(r, 8), "JSD", N, rng=r).p_value)
    rate("sign_flip", lambda r: paired_sign_flip(grids(r, 10), grids(r, 10), "JSD", N, rng=r).p_value)
    rate("mantel", lambda r: mantel(_dist(r.random((10, 2))), _dist(r.random((10, 2))), N, rng=r).p_value)
    dt = time.perf_counter() - t0
    ok = all(abs(v - alpha) <= 0.02 for v in rejections.values()) and dt < 300
    detail = ", ".join(f"{k} {v:.3f}" for k, v in rejections.items())
    verdict(10, "null calibration", ok, f"{detail}; {reps} replicates each; {dt:.1f}s")


def test_c11_audio_ablation_direction():
    t0 = time.perf_counter()
    deltas = {k: [] for k in ("steps", "time", "path_len", "frechet")}
    for i in range(30):
        scene = generate_scene(Family.D1, i)
        audio = log_path_metrics(run_episode(scene, GreedyAudioAgent(), 0))
        silent = log_path_metrics(run_episode(silence_scene(scene), GreedyAudioAgent(), 0))
        for k in deltas:
            deltas[k].append(getattr(audio, k) - getattr(silent, k))
    dt = time.perf_counter() - t0
    summary = {k: (float(np.median(v)), wilcoxon_signed_rank(v).p_value) for k, v in deltas.items()}
    ok = all(m < 0 and p < 0.05 for m, p in summary.values()) and dt < 120
    detail = ", ".join(f"{k} median {m:+.2f} p={p:.1e}" for k, (m, p) in summary.items())
    verdict(11, "audio ablation direction", ok, f"{detail}; {dt:.1f}s")


def test_c12_tcss_monotone():
    rng = np.random.default_rng(12)
    logs = [random_log(rng, "D2T") for _ in range(200)]
    found = [(l.t_found, run_metrics(l).tcss) for l in logs if l.t_found is not None]
    unseen = [run_metrics(l).tcss for l in logs if l.t_found is None]
    inversions = sum(1 for (ta, sa), (tb, sb) in itertools.combinations(found, 2)
                     if (ta < tb) != (sa > sb) or (ta == tb) != (sa == sb))
    ok = inversions == 0 and all(s == 0.0 for s in unseen) and len(unseen) > 0 and len(found) > 100
    verdict(12, "TCSS monotonicity", ok, f"{len(found)} found, {len(unseen)} expired unseen, "
                                         f"{inversions} ordering violations")
