"""Per-run and per-corpus evaluation metrics, and the intent-outcome consistency harness.

Ratios with a zero denominator are reported as 0 together with a
``no_*_attempts`` flag so tables keep totals. AMR alone is ``None`` when no
distractor was triggered.
"""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable

from .engine import TrajectoryLog
from .protocol import render_consistency_prompt

MISLEADING_FAMILIES = ("D2M", "D3M")


@dataclass(frozen=True)
class RunMetrics:
    escaped: bool
    steps: int
    prop_gain: float
    gsr: float
    r_grab: float
    tsr: float
    r_trigger: float
    tcss: float
    distractor_triggered: bool
    misguided: bool
    grab_attempts: int = 0
    grab_successes: int = 0
    trigger_attempts: int = 0
    trigger_successes: int = 0
    props_gained: int = 0
    prop_count: int = 0
    t_found: float | None = None

    @property
    def no_grab_attempts(self) -> bool:
        return self.grab_attempts == 0

    @property
    def no_trigger_attempts(self) -> bool:
        return self.trigger_attempts == 0


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def tcss(t_found: float | None, t_lim: float | None) -> float:
    """1 - t_found/t_lim when the clue was seen inside the window, else 0."""
    if t_found is None or not t_lim or t_found > t_lim:
        return 0.0
    return max(0.0, 1.0 - t_found / t_lim)


def run_metrics(log: TrajectoryLog, prop_count: int | None = None, episode_relative_tcss: bool = False) -> RunMetrics:
    """Metrics for one episode.

    ``prop_count`` is the number of items the scene's prop chain yields; when
    omitted it is read from the log header. Prop gain counts successful grabs
    that put at least one item in the bag. ``steps`` follows the failure
    convention (step limit + 1) and is also the GR denominator.
    """
    grabs = grab_ok = trig = trig_ok = gained = 0
    for rec in log.records:
        for ev in rec.events:
            t = ev.get("type")
            if t == "grab_success":
                grabs += 1
                grab_ok += 1
                gained += 1 if ev.get("items") else 0
            elif t == "grab_fail":
                grabs += 1
            elif t == "trigger_success":
                trig += 1
                trig_ok += 1
            elif t == "trigger_fail":
                trig += 1
    props = getattr(log, "prop_count", 0) if prop_count is None else prop_count
    S = log.outcome.steps_recorded
    t_found = log.t_found
    if episode_relative_tcss and t_found is not None and log.window_start is not None:
        t_found = t_found + log.window_start
    return RunMetrics(
        escaped=log.escaped,
        steps=S,
        prop_gain=min(1.0, _ratio(gained, props)),
        gsr=_ratio(grab_ok, grabs),
        r_grab=_ratio(grabs, S),
        tsr=_ratio(trig_ok, trig),
        r_trigger=_ratio(trig, S),
        tcss=tcss(t_found, log.window_duration),
        distractor_triggered=log.distractor_triggered,
        misguided=log.misguided,
        grab_attempts=grabs,
        grab_successes=grab_ok,
        trigger_attempts=trig,
        trigger_successes=trig_ok,
        props_gained=gained,
        prop_count=props,
        t_found=t_found,
    )


@dataclass(frozen=True)
class CorpusMetrics:
    runs: int
    er: float
    mean_steps: float
    prop_gain: float | None
    gsr: float
    r_grab: float
    tsr: float
    r_trigger: float
    mat: float | None
    amr: float | None
    tcss: float | None
    c_io: float | None = None


def _mean(xs: list[float]) -> float:
    return sum(xs) / len(xs) if xs else 0.0


def corpus_metrics(logs: Iterable[TrajectoryLog], c_io: float | None = None,
                   episode_relative_tcss: bool = False) -> CorpusMetrics:
    """Aggregate one (agent, family) cell. Percent-valued fields are in [0, 100]."""
    logs = list(logs)
    if not logs:
        raise ValueError("empty log set")
    rm = [run_metrics(l, episode_relative_tcss=episode_relative_tcss) for l in logs]
    with_props = [m.prop_gain for m in rm if m.prop_count > 0]
    mis = [(l, m) for l, m in zip(logs, rm) if l.family in MISLEADING_FAMILIES]
    triggered = [m for _, m in mis if m.distractor_triggered]
    timed = [m.tcss for l, m in zip(logs, rm) if l.window_duration is not None]
    return CorpusMetrics(
        runs=len(rm),
        er=100.0 * sum(m.escaped for m in rm) / len(rm),
        mean_steps=_mean([m.steps for m in rm]),
        prop_gain=100.0 * _mean(with_props) if with_props else None,
        gsr=100.0 * _mean([m.gsr for m in rm]),
        r_grab=100.0 * _mean([m.r_grab for m in rm]),
        tsr=100.0 * _mean([m.tsr for m in rm]),
        r_trigger=100.0 * _mean([m.r_trigger for m in rm]),
        mat=100.0 * len(triggered) / len(mis) if mis else None,
        amr=100.0 * sum(m.misguided for m in triggered) / len(triggered) if triggered else None,
        tcss=_mean(timed) if timed else None,
        c_io=c_io,
    )


TABLE_COLUMNS = ["agent", "family", "runs", "ER", "Prop", "Steps", "GSR", "GR", "TSR", "TR",
                 "MAT", "AMR", "TCSS", "C_IO"]


def table_row(agent: str, family: str, cm: CorpusMetrics) -> dict[str, str]:
    def f(v):
        return "" if v is None else f"{v:.2f}"

    return {
        "agent": agent, "family": family, "runs": str(cm.runs), "ER": f(cm.er), "Prop": f(cm.prop_gain),
        "Steps": f(cm.mean_steps), "GSR": f(cm.gsr), "GR": f(cm.r_grab), "TSR": f(cm.tsr),
        "TR": f(cm.r_trigger), "MAT": f(cm.mat), "AMR": f(cm.amr),
        "TCSS": "" if cm.tcss is None else f"{cm.tcss:.4f}", "C_IO": f(cm.c_io),
    }


def metrics_csv(rows: list[dict[str, str]]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=TABLE_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# intent-outcome consistency


_VERDICT = re.compile(r"\{[^{}]*\"?Consistency\"?\s*:\s*\"?([01])\"?[^{}]*\}", re.IGNORECASE)


def parse_verdict(reply: str) -> int | None:
    """Extract the 0/1 verdict from a judge reply, or None if absent."""
    try:
        obj = json.loads(reply.strip())
        if isinstance(obj, dict) and obj.get("Consistency") in (0, 1, "0", "1"):
            return int(obj["Consistency"])
    except (json.JSONDecodeError, AttributeError):
        pass
    m = _VERDICT.search(reply)
    return int(m.group(1)) if m else None


@dataclass
class Verdict:
    scene_id: str
    step_index: int
    rationale: str
    response: str
    verdict: int | None


@dataclass
class ConsistencyReport:
    c_io: float | None
    verdicts: list[Verdict] = field(default_factory=list)
    excluded: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


_SUCCESS_EVENTS = {"grab_success", "trigger_success"}


def successful_interactions(log: TrajectoryLog):
    for rec in log.records:
        if any(ev.get("type") in _SUCCESS_EVENTS for ev in rec.events):
            yield rec


def consistency_harness(logs: Iterable[TrajectoryLog], judge: Callable[[str], str],
                        responses: dict[tuple[str, int], str] | None = None) -> ConsistencyReport:
    """Ask ``judge`` whether each successful interaction matched its stated rationale.

    ``responses`` maps (scene_id, step_index) to the interaction result text
    the agent saw; without it the step's event summary is used.
    """
    verdicts: list[Verdict] = []
    for log in logs:
        for rec in successful_interactions(log):
            key = (log.scene_id, rec.step_index)
            if responses and key in responses:
                response = responses[key]
            else:
                response = "; ".join(json.dumps(ev, sort_keys=True) for ev in rec.events)
            prompt = render_consistency_prompt(rec.action.rationale or "", response)
            verdicts.append(Verdict(log.scene_id, rec.step_index, rec.action.rationale or "", response,
                                    parse_verdict(judge(prompt))))
    scored = [v.verdict for v in verdicts if v.verdict is not None]
    c_io = 100.0 * sum(scored) / len(scored) if scored else None
    return ConsistencyReport(c_io, verdicts, len(verdicts) - len(scored))
