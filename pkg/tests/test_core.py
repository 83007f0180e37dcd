import math
from dataclasses import replace

import pytest
from hypothesis import given
from hypothesis import strategies as st

from escape4d.core import (
    Family,
    GameObject,
    Lock,
    ObjectKind,
    Pose,
    PropHop,
    Reveal,
    Vec2,
    dumps_scene,
    load_scene,
    save_scene,
    scene_from_dict,
    scene_to_dict,
    silence_scene,
    validate_scene,
    wrap180,
    wrap_yaw,
)
from escape4d.scenegen import generate_scene

from .conftest import key_item, make_scene


def test_generated_scene_validates():
    assert validate_scene(generate_scene(Family.D1, 3)).ok


def test_cyclic_chain_reported():
    box = GameObject("box", ObjectKind.BOX, Vec2(3.0, 3.0), "box", True, Lock.needs_key("key_1"), ("key_1",))
    door = GameObject("door", ObjectKind.DOOR, Vec2(5.0, 10.0), "door", True, Lock.needs_key("key_1"))
    sc = make_scene([box], family=Family.D3, door=door, items=[key_item()],
                    chain=[PropHop(Reveal.VISUAL, "box", "key_1")])
    rep = validate_scene(sc)
    assert not rep.ok
    assert any("cyclic prop chain" in v for v in rep.violations)


def test_misleading_family_requires_distractor():
    sc = generate_scene(Family.D2M, 5)
    stripped = replace(sc, objects=tuple(o for o in sc.objects if o.kind is not ObjectKind.DISTRACTOR))
    rep = validate_scene(stripped)
    assert "family requires distractor" in rep.violations


def test_wrong_step_limit_reported():
    sc = make_scene(step_limit=51)
    assert not validate_scene(sc).ok


def test_scene_json_roundtrip(tmp_path):
    for fam in Family:
        sc = generate_scene(fam, 11)
        again = scene_from_dict(scene_to_dict(sc))
        assert again == sc
        p = save_scene(sc, tmp_path / f"{fam.value}.json")
        assert load_scene(p) == sc
        assert dumps_scene(load_scene(p)) == dumps_scene(sc)


def test_silence_scene_drops_only_ambient():
    sc = generate_scene(Family.D2, 2)
    quiet = silence_scene(sc)
    assert sc.has_ambient and not quiet.has_ambient
    assert quiet.by_id["recorder"].audio == sc.by_id["recorder"].audio


def test_family_properties():
    assert [f.step_limit for f in Family] == [50, 65, 80, 65, 80, 65]
    assert [f.hop_count for f in Family] == [0, 1, 2, 1, 2, 1]
    assert Family.D3M.misleading and not Family.D3.misleading
    assert Family.D2T.timed


@given(st.floats(-1e4, 1e4), st.floats(-500, 500))
def test_pose_normalization_idempotent(yaw, pitch):
    once = Pose(Vec2(0, 0), yaw, pitch).normalized()
    assert once.normalized() == once
    assert 0 <= once.yaw < 360 and -90 <= once.pitch <= 90


@given(st.floats(-1e4, 1e4))
def test_wrap_ranges(a):
    assert 0 <= wrap_yaw(a) < 360
    w = wrap180(a)
    assert -180 < w <= 180
    assert math.isclose(math.cos(math.radians(w)), math.cos(math.radians(a)), abs_tol=1e-6)


def test_vec2_rejects_nan():
    with pytest.raises(ValueError):
        Vec2(float("nan"), 0.0)
