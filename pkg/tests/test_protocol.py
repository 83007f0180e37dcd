import io
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from escape4d.agents import OracleAgent, RandomAgent
from escape4d.core import Family
from escape4d.engine import ActionRequest, AmbientReading, Interactions, Observation, VisibleObject, run_episode
from escape4d.protocol import (
    ACTION_FIELDS,
    ActionDecodeError,
    TemplateError,
    decode_action,
    decode_observation,
    dumps_log,
    encode_action,
    encode_observation,
    load_template,
    loads_log,
    read_log,
    render_consistency_prompt,
    render_prompts,
    render_step_prompt,
    render_template,
    write_log,
    write_message,
)
from escape4d.scenegen import generate_scene


def test_decode_partial():
    a = decode_action('{"move_forward": 2.5}')
    assert a == ActionRequest(move_forward=2.5)


def test_decode_empty():
    assert decode_action("{}") == ActionRequest()


def test_decode_clamps():
    assert decode_action('{"move_forward": 99}').move_forward == 10.0


def test_decode_unknown_field_warns():
    warnings = []
    a = decode_action('{"grab": true, "fly": 3}', warnings=warnings)
    assert a.grab and warnings == ["fly"]


def test_decode_fenced_and_wrapped():
    text = '```json\n{"kind": "ActionMsg", "payload": {"trigger": true, "interactions": {"input": "1234"}}}\n```'
    a = decode_action(text)
    assert a.trigger and a.interactions == Interactions(input="1234")


@pytest.mark.parametrize("bad", ["", "hello", "[1, 2]", "{\"move_forward\": }"])
def test_decode_errors_carry_raw(bad):
    with pytest.raises(ActionDecodeError) as exc:
        decode_action(bad)
    assert exc.value.raw == bad


def test_action_roundtrip_uses_schema_names():
    a = ActionRequest(move_forward=1.0, rotate_right=-20.0, look_at=(0.3, 0.7), grab=True,
                      interactions=Interactions("key_1", "42"), read="note", rationale="why")
    msg = json.loads(encode_action(a))
    assert msg["kind"] == "ActionMsg"
    assert set(msg["payload"]) <= set(ACTION_FIELDS)
    assert decode_action(encode_action(a)) == a


_coord = st.floats(0, 1, allow_nan=False)
_visible = st.builds(VisibleObject, st.text(min_size=1, max_size=8), st.sampled_from(["box", "door", "vase"]),
                     st.tuples(_coord, _coord), st.floats(0, 20), st.one_of(st.none(), st.text(max_size=10)))


@given(st.lists(_visible, max_size=4),
       st.lists(st.builds(AmbientReading, st.floats(0, 1), st.floats(-180, 180)), max_size=2),
       st.text(max_size=30), st.lists(st.text(max_size=20), max_size=2), st.integers(0, 80))
def test_observation_roundtrip(vis, amb, result, transcripts, remaining):
    obs = Observation(tuple(vis), vis[0].id if vis else None, result, tuple(amb), tuple(transcripts),
                      "Nothing.", remaining)
    text = encode_observation(obs)
    assert "\n" not in text
    assert decode_observation(text) == obs
    assert encode_observation(decode_observation(text)) == text


def test_empty_observation_message():
    payload = json.loads(encode_observation(Observation()))["payload"]
    assert payload["visible"] == [] and payload["interaction_result"] == ""


def test_log_roundtrip_bitwise(tmp_path):
    for agent in (OracleAgent(), RandomAgent()):
        log = run_episode(generate_scene(Family.D2T, 4), agent, 3)
        text = dumps_log(log)
        again = loads_log(text)
        assert dumps_log(again) == text
        assert again == log
        p = write_log(log, tmp_path / "x.jsonl")
        assert read_log(p) == log


def test_write_message_rejects_multiline():
    buf = io.StringIO()
    write_message(buf, "{}")
    assert buf.getvalue() == "{}\n"
    with pytest.raises(ValueError):
        write_message(buf, "a\nb")


def test_system_prompt_mentions_trigger():
    assert "attempt to trigger the sound" in load_template("system_prompt")


def test_render_prompts_fills_placeholders():
    out = render_prompts({"interaction_result": "You opened the box.", "bag_desc": "Nothing.",
                          "rationale": "I want the key", "response": "You found a key."})
    assert set(out) == {"system_prompt", "step_prompt", "consistency_prompt"}
    assert "You opened the box." in out["step_prompt"]
    assert out["consistency_prompt"].rstrip().endswith("You found a key.")
    assert "{rationale}" not in out["consistency_prompt"]


def test_render_rejects_unknown_and_missing():
    with pytest.raises(TemplateError):
        render_template("hello {name}", {"name": "x", "other": "y"})
    with pytest.raises(TemplateError):
        render_template("hello {name}", {})


def test_json_braces_survive_rendering():
    text = render_consistency_prompt("r", "s")
    assert '"Consistency"' in text


def test_step_prompt_from_observation():
    text = render_step_prompt(Observation(interaction_result="Nothing happens.", bag_desc="- key_1: key"))
    assert "Nothing happens." in text and "- key_1: key" in text
