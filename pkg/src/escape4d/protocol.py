"""Wire format: action/observation messages, episode logs and prompt templates.

Every message is one line of JSON. Agents may answer with a bare action object
(what an LLM emits) or a wrapped ``{"kind": "ActionMsg", "payload": {...}}``.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import replace
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, TextIO

from .core import Pose, Vec2
from .engine import (
    ActionRequest,
    AmbientReading,
    Interactions,
    Observation,
    Outcome,
    StepRecord,
    TrajectoryLog,
    VisibleObject,
)

log = logging.getLogger(__name__)

ACTION_FIELDS = ("move_forward", "rotate_right", "rotate_down", "jump", "look_at", "grab",
                 "trigger", "interactions", "read", "rationale")
ACTION_MSG = "ActionMsg"
OBSERVATION_MSG = "ObservationMsg"
EPISODE_END = "EpisodeEnd"


class ActionDecodeError(ValueError):
    def __init__(self, raw: str, reason: str):
        super().__init__(f"cannot decode action ({reason}): {raw[:200]!r}")
        self.raw = raw
        self.reason = reason


class TemplateError(KeyError):
    pass


_FENCE = re.compile(r"^```[a-zA-Z]*\s*(.*?)\s*```$", re.S)


def _as_bool(v: Any) -> bool | None:
    if isinstance(v, bool):
        return v
    if isinstance(v, (int, float)) and v in (0, 1):
        return bool(v)
    if isinstance(v, str) and v.strip().lower() in ("true", "false"):
        return v.strip().lower() == "true"
    return None


def _as_float(v: Any) -> float | None:
    if isinstance(v, bool) or not isinstance(v, (int, float, str)):
        return None
    try:
        f = float(v)
    except ValueError:
        return None
    return f if math.isfinite(f) else None


def _as_text(v: Any) -> str | None:
    if v is None:
        return None
    if isinstance(v, bool):
        return None
    if isinstance(v, (int, float)):
        v = str(v)
    if not isinstance(v, str) or not v.strip():
        return None
    return v


def decode_action(text: str, warnings: list[str] | None = None) -> ActionRequest:
    """Parse an agent reply into an :class:`ActionRequest`.

    Missing fields default to no-ops, numbers are clamped to their protocol
    ranges and unknown or ill-typed fields are dropped with a warning.
    Text that is not a JSON object raises :class:`ActionDecodeError`.
    """
    warnings = warnings if warnings is not None else []
    raw = text
    body = text.strip()
    m = _FENCE.match(body)
    if m:
        body = m.group(1)
    try:
        data = json.loads(body)
    except (json.JSONDecodeError, TypeError) as exc:
        raise ActionDecodeError(raw, str(exc)) from None
    if isinstance(data, dict) and data.get("kind") == ACTION_MSG and isinstance(data.get("payload"), dict):
        data = data["payload"]
    if not isinstance(data, dict):
        raise ActionDecodeError(raw, "not a JSON object")

    kw: dict[str, Any] = {}
    for key, value in data.items():
        if key not in ACTION_FIELDS:
            warnings.append(key)
            continue
        if value is None:
            continue
        if key in ("move_forward", "rotate_right", "rotate_down"):
            f = _as_float(value)
            if f is None:
                warnings.append(key)
            else:
                kw[key] = f
        elif key in ("jump", "grab", "trigger"):
            b = _as_bool(value)
            if b is None:
                warnings.append(key)
            else:
                kw[key] = b
        elif key == "look_at":
            if isinstance(value, (list, tuple)) and len(value) == 2:
                xy = [_as_float(c) for c in value]
                if None not in xy:
                    kw[key] = (xy[0], xy[1])
                    continue
            warnings.append(key)
        elif key == "interactions":
            if not isinstance(value, dict):
                warnings.append(key)
                continue
            use = _as_text(value.get("use_item_id"))
            inp = _as_text(value.get("input"))
            if use is not None or inp is not None:
                kw[key] = Interactions(use, inp)
        elif key == "read":
            r = _as_text(value)
            if r is not None:
                kw[key] = r
        elif key == "rationale":
            kw[key] = value if isinstance(value, str) else json.dumps(value)
    if warnings:
        log.debug("ignored action fields: %s", warnings)
    return ActionRequest(**kw)


def encode_action(action: ActionRequest) -> str:
    return json.dumps({"kind": ACTION_MSG, "payload": action.to_dict()})


# ---------------------------------------------------------------------------
# observations


def observation_to_dict(obs: Observation, include_ambient: bool = True,
                        include_transcripts: bool = True) -> dict[str, Any]:
    return {
        "interaction_result": obs.interaction_result,
        "bag_desc": obs.bag_desc,
        "steps_remaining": obs.steps_remaining,
        "center_object": obs.center_object,
        "visible": [
            {"id": v.id, "kind": v.kind, "image_coords": list(v.image_coords),
             "distance": v.distance, "text": v.text}
            for v in obs.visible
        ],
        "ambient": [{"loudness": a.loudness, "bearing": a.bearing}
                    for a in obs.ambient] if include_ambient else [],
        "transcripts": list(obs.transcripts) if include_transcripts else [],
    }


def observation_from_dict(d: Mapping[str, Any]) -> Observation:
    return Observation(
        visible=tuple(VisibleObject(v["id"], v["kind"], tuple(v["image_coords"]), v["distance"],
                                    v.get("text")) for v in d["visible"]),
        center_object=d["center_object"],
        interaction_result=d["interaction_result"],
        ambient=tuple(AmbientReading(a["loudness"], a["bearing"]) for a in d["ambient"]),
        transcripts=tuple(d["transcripts"]),
        bag_desc=d["bag_desc"],
        steps_remaining=d["steps_remaining"],
    )


def mask_audio(obs: Observation, hide_loudness: bool = False, hide_transcripts: bool = False) -> Observation:
    """Drop loudness readings and/or transcripts before an agent sees ``obs``."""
    return replace(obs, ambient=() if hide_loudness else obs.ambient,
                   transcripts=() if hide_transcripts else obs.transcripts)


def encode_observation(obs: Observation, include_ambient: bool = True,
                       include_transcripts: bool = True) -> str:
    """One-line ObservationMsg with a fixed field order."""
    payload = observation_to_dict(obs, include_ambient, include_transcripts)
    return json.dumps({"kind": OBSERVATION_MSG, "payload": payload}, allow_nan=False)


def decode_observation(text: str) -> Observation:
    msg = json.loads(text)
    if msg.get("kind") != OBSERVATION_MSG:
        raise ValueError(f"expected {OBSERVATION_MSG}, got {msg.get('kind')!r}")
    return observation_from_dict(msg["payload"])


def encode_episode_end(log_: TrajectoryLog) -> str:
    return json.dumps({"kind": EPISODE_END, "payload": {
        "escaped": log_.outcome.escaped, "steps_recorded": log_.outcome.steps_recorded}})


# ---------------------------------------------------------------------------
# episode logs (JSONL: header, one line per step, footer)


def _pose_dict(p: Pose) -> dict:
    return {"position": {"x": p.position.x, "y": p.position.y}, "yaw": p.yaw, "pitch": p.pitch}


def _pose_from(d: dict) -> Pose:
    return Pose(Vec2(d["position"]["x"], d["position"]["y"]), d["yaw"], d["pitch"])


def step_to_dict(r: StepRecord) -> dict[str, Any]:
    return {
        "step_index": r.step_index,
        "clock_before": r.clock_before,
        "clock_after": r.clock_after,
        "pose_after": _pose_dict(r.pose_after),
        "action": r.action.to_dict(),
        "events": list(r.events),
        "audio_active": r.audio_active,
    }


def step_from_dict(d: Mapping[str, Any]) -> StepRecord:
    return StepRecord(d["step_index"], d["clock_before"], d["clock_after"], _pose_from(d["pose_after"]),
                      ActionRequest.from_dict(d["action"]), tuple(d["events"]), d["audio_active"])


def log_to_lines(log_: TrajectoryLog) -> list[str]:
    header = {
        "kind": "header",
        "scene_id": log_.scene_id,
        "family": log_.family,
        "seed": log_.seed,
        "agent": log_.agent,
        "step_limit": log_.step_limit,
        "start_pose": _pose_dict(log_.start_pose),
        "exit": {"x": log_.exit.x, "y": log_.exit.y},
        "exit_side": log_.exit_side,
        "ambient_audio": log_.ambient_audio,
        "prop_count": log_.prop_count,
    }
    footer = {
        "kind": "episode_end",
        "outcome": {"escaped": log_.outcome.escaped, "steps_recorded": log_.outcome.steps_recorded},
        "t_found": log_.t_found,
        "window_start": log_.window_start,
        "window_duration": log_.window_duration,
        "distractor_triggered": log_.distractor_triggered,
        "misguided": log_.misguided,
        "final_clock": log_.final_clock,
    }
    lines = [json.dumps(header, allow_nan=False)]
    lines.extend(json.dumps(step_to_dict(r), allow_nan=False) for r in log_.records)
    lines.append(json.dumps(footer, allow_nan=False))
    return lines


def dumps_log(log_: TrajectoryLog) -> str:
    return "\n".join(log_to_lines(log_)) + "\n"


def loads_log(text: str) -> TrajectoryLog:
    rows = [json.loads(line) for line in text.splitlines() if line.strip()]
    if not rows or rows[0].get("kind") != "header" or rows[-1].get("kind") != "episode_end":
        raise ValueError("episode log must start with a header and end with episode_end")
    h, f = rows[0], rows[-1]
    return TrajectoryLog(
        scene_id=h["scene_id"], family=h["family"], seed=h["seed"], agent=h["agent"],
        step_limit=h["step_limit"], start_pose=_pose_from(h["start_pose"]),
        exit=Vec2(h["exit"]["x"], h["exit"]["y"]), exit_side=h["exit_side"],
        ambient_audio=h["ambient_audio"],
        outcome=Outcome(f["outcome"]["escaped"], f["outcome"]["steps_recorded"]),
        records=tuple(step_from_dict(r) for r in rows[1:-1]),
        t_found=f["t_found"], window_start=f["window_start"], window_duration=f["window_duration"],
        distractor_triggered=f["distractor_triggered"], misguided=f["misguided"],
        final_clock=f["final_clock"], prop_count=h.get("prop_count", 0),
    )


def write_log(log_: TrajectoryLog, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(dumps_log(log_), encoding="utf-8")
    return path


def read_log(path: str | Path) -> TrajectoryLog:
    return loads_log(Path(path).read_text(encoding="utf-8"))


def read_logs(paths: Iterable[str | Path]) -> list[TrajectoryLog]:
    return [read_log(p) for p in paths]


# ---------------------------------------------------------------------------
# stream transport


def write_message(stream: TextIO, line: str) -> None:
    if "\n" in line:
        raise ValueError("wire messages must be single-line")
    stream.write(line + "\n")
    stream.flush()


# ---------------------------------------------------------------------------
# prompts

_PLACEHOLDER = re.compile(r"\{([a-z_]+)\}")
PROMPT_NAMES = ("system_prompt", "step_prompt", "consistency_prompt")


def load_template(name: str) -> str:
    if name not in PROMPT_NAMES:
        raise TemplateError(f"unknown template {name!r}")
    return resources.files("escape4d").joinpath("prompts", f"{name}.txt").read_text(encoding="utf-8")


def template_placeholders(template: str) -> set[str]:
    return set(_PLACEHOLDER.findall(template))


def render_template(template: str, values: Mapping[str, str]) -> str:
    """Substitute ``{name}`` placeholders; JSON braces in the template are left alone."""
    wanted = template_placeholders(template)
    unknown = set(values) - wanted
    if unknown:
        raise TemplateError(f"unknown placeholder(s): {sorted(unknown)}")
    missing = wanted - set(values)
    if missing:
        raise TemplateError(f"missing value for placeholder(s): {sorted(missing)}")
    return _PLACEHOLDER.sub(lambda m: str(values[m.group(1)]), template)


def render_prompts(context: Mapping[str, str]) -> dict[str, str]:
    """Render all three prompts from one context holding every placeholder value."""
    out = {}
    used: set[str] = set()
    for name in PROMPT_NAMES:
        tpl = load_template(name)
        keys = template_placeholders(tpl)
        used |= keys
        missing = keys - set(context)
        if missing:
            raise TemplateError(f"missing value for placeholder(s): {sorted(missing)}")
        out[name] = render_template(tpl, {k: context[k] for k in keys})
    unknown = set(context) - used
    if unknown:
        raise TemplateError(f"unknown placeholder(s): {sorted(unknown)}")
    return out


def render_step_prompt(obs: Observation) -> str:
    return render_template(load_template("step_prompt"),
                           {"interaction_result": obs.interaction_result, "bag_desc": obs.bag_desc})


def render_consistency_prompt(rationale: str, response: str) -> str:
    return render_template(load_template("consistency_prompt"),
                           {"rationale": rationale, "response": response})
