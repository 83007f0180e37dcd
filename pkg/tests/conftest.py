from __future__ import annotations

import pytest
from hypothesis import HealthCheck, settings

from escape4d.core import (
    AudioCategory,
    AudioSourceSpec,
    Exit,
    Family,
    GameObject,
    Item,
    Lock,
    ObjectKind,
    Pose,
    PropChainSpec,
    RoomGeometry,
    SceneSpec,
    Side,
    Vec2,
)
from escape4d.scenegen import GenConfig, generate_suite

settings.register_profile("ci", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


def make_scene(objects=(), *, family=Family.D1, start=Pose(Vec2(5.0, 5.0), 0.0, 0.0), walls=(),
               door=None, items=(), chain=(), clue=None, step_limit=None, size=(10.0, 10.0)):
    """Hand-built scene with a door on the north wall unless one is given."""
    if door is None:
        door = GameObject("door", ObjectKind.DOOR, Vec2(5.0, size[1]), "door", True, Lock.none())
    geometry = RoomGeometry(size[0], size[1], Exit(door.position, Side.N), tuple(walls))
    return SceneSpec(
        id="hand", family=family, geometry=geometry, objects=(door, *objects),
        prop_chain=PropChainSpec(tuple(chain)), step_limit=step_limit or family.step_limit,
        seed=0, start_pose=start, items=tuple(items), transient_clue=clue,
    )


def recorder(pos=Vec2(5.0, 7.0), transcript="The password is 1234.", oid="recorder"):
    return GameObject(oid, ObjectKind.RECORDER, pos, "recorder",
                      audio=AudioSourceSpec(AudioCategory.TRIGGER_CLUE, 5.0, transcript, 5.0))


def radio(pos=Vec2(2.0, 2.0), transcript="Remember the numbers 9876."):
    return GameObject("distractor", ObjectKind.DISTRACTOR, pos, "radio",
                      audio=AudioSourceSpec(AudioCategory.TRIGGER_MISLEADING, 5.0, transcript, 5.0))


def key_item(iid="key_1"):
    return Item(iid, "brass key", "A small brass key.")


@pytest.fixture(scope="session")
def suite():
    return generate_suite(GenConfig(seed=0))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
