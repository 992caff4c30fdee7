from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pamas.model import (
    NO_REASON,
    ActionRecord,
    AgentNode,
    ConfidenceMemory,
    ConfigError,
    DataError,
    ExperienceFragment,
    ExperienceMemory,
    Hyperparameters,
    Instance,
    Judgment,
    MissingFeatureError,
    Origin,
    Profile,
    Role,
    cosine,
    project_features,
    record_action,
    top_k_fragments,
    validate_profile,
)


def unit(*xs):
    v = np.asarray(xs, dtype=float)
    return v / np.linalg.norm(v)


def test_project_features_subset_and_identity():
    x = Instance("u1", {"a": 1, "b": 2, "c": 3})
    assert project_features(x, Profile("p", ("b",))) == {"b": 2}
    y = Instance("u2", {"a": 1, "b": 2})
    assert project_features(y, Profile("p", ("a", "b"))) == {"a": 1, "b": 2}


def test_project_features_keeps_profile_order():
    x = Instance("u1", {"a": 1, "b": 2, "c": 3})
    assert list(project_features(x, Profile("p", ("c", "a")))) == ["c", "a"]


def test_project_features_missing():
    with pytest.raises(MissingFeatureError) as info:
        project_features(Instance("u", {"a": 1}), Profile("p", ("z",)))
    assert info.value.feature == "z"


@given(st.lists(st.sampled_from("abcdef"), min_size=1, max_size=6, unique=True))
def test_projection_idempotent(subset):
    x = Instance("u", {k: i for i, k in enumerate("abcdef")})
    profile = Profile("p", tuple(subset))
    view = project_features(x, profile)
    assert project_features(Instance("v", view), profile) == view


def test_instance_label_must_be_binary():
    with pytest.raises(DataError):
        Instance("u", {"a": 1}, 2)


def test_judgment_fills_empty_reason():
    assert Judgment(1, "").reason == NO_REASON
    with pytest.raises(ValueError):
        Judgment(3, "x")


def test_record_action_sequence():
    node = AgentNode.auditor("A00", Profile("p", ("a",)))
    record_action(node, ActionRecord("1327", 1, "reviews are excessively repetitive and sentimentally exaggerated"))
    assert len(node.actions) == 1 and node.actions.records[0].seq == 1
    assert node.actions.records[0].reason == "reviews are excessively repetitive and sentimentally exaggerated"
    for i in range(4):
        record_action(node, ActionRecord(f"x{i}", 0))
    mem = record_action(node, ActionRecord("x9", 1))
    assert len(mem) == 6 and mem.records[-1].seq == 6
    with pytest.raises(ValueError):
        record_action(node, ActionRecord("", 1))


def test_role_memory_correspondence():
    profile = Profile("p", ("a",))
    with pytest.raises(ConfigError):
        AgentNode("C", Role.COORDINATOR, Profile("c"), experience=ExperienceMemory("C"), confidence=ConfidenceMemory())
    with pytest.raises(ConfigError):
        AgentNode("A", Role.AUDITOR, profile, experience=ExperienceMemory("A"), confidence=ConfidenceMemory(), backend="x")
    with pytest.raises(ConfigError):
        AgentNode("C", Role.COORDINATOR, Profile("c"), confidence=ConfidenceMemory(), backend="x")
    dm = AgentNode.decision_maker("DM", Profile("d", ("a", "b")))
    assert dm.experience is not None and dm.confidence is not None


def test_validate_profile_rules():
    names = ("a", "b", "c")
    validate_profile(Profile("p", ("a", "b")), Role.AUDITOR, names)
    for bad in [(), ("a", "b", "c"), ("z",), ("a", "a")]:
        with pytest.raises(ConfigError):
            validate_profile(Profile("p", bad), Role.AUDITOR, names)
    validate_profile(Profile("d", names), Role.DECISION_MAKER, names)
    with pytest.raises(ConfigError):
        validate_profile(Profile("d", ("a",)), Role.DECISION_MAKER, names)


def test_fragment_must_be_unit_norm():
    ExperienceFragment("f", "t", unit(3, 4))
    with pytest.raises(ValueError):
        ExperienceFragment("f", "t", np.array([3.0, 4.0]))
    with pytest.raises(ValueError):
        ExperienceFragment("f", "t", np.zeros(3))


def test_experience_eviction_is_reported():
    mem = ExperienceMemory("A", capacity=2)
    frags = [ExperienceFragment(mem.new_id(), "t", unit(1, 0))]
    assert mem.append(frags[0]) is None
    assert mem.append(ExperienceFragment(mem.new_id(), "u", unit(0, 1))) is None
    evicted = mem.append(ExperienceFragment(mem.new_id(), "v", unit(1, 1)))
    assert evicted == frags[0]
    assert [f.id for f in mem.fragments] == ["A#2", "A#3"]
    assert mem.appended == 3


def test_confidence_bounds():
    conf = ConfidenceMemory()
    conf["a"] = 0.0
    conf["b"] = 2.0
    for bad in (-0.1, 2.1, float("nan"), float("inf")):
        with pytest.raises(ValueError):
            conf["c"] = bad


@pytest.mark.parametrize(
    "kwargs",
    [{"lam": -1}, {"gamma": -0.1}, {"alpha": 0}, {"alpha": 1}, {"top_k": 0}, {"n_max": 1},
     {"layer_spec": ()}, {"layer_spec": (3, 0)}, {"rho": 0}, {"rho": 1.5}, {"group_size": 9}],
)
def test_hyperparameter_bounds(kwargs):
    with pytest.raises(ConfigError):
        Hyperparameters(**kwargs)


def test_cosine_conventions():
    assert cosine(np.zeros(3), np.zeros(3)) == 1.0
    assert cosine(np.zeros(3), np.ones(3)) == 0.0
    assert cosine(np.array([1, 0, 1]), np.array([1, 0, 1])) == pytest.approx(1.0)


def test_top_k_ordering_and_exclusion():
    frags = [
        ExperienceFragment("a", "a", unit(1, 0)),
        ExperienceFragment("b", "b", unit(1, 1)),
        ExperienceFragment("c", "c", unit(0, 1)),
        ExperienceFragment("d", "d", unit(1, 0)),
    ]
    hits = top_k_fragments(unit(1, 0), frags, 3)
    assert [f.id for f, _ in hits] == ["a", "d", "b"]
    hits = top_k_fragments(unit(1, 0), frags, 2, exclude={"a"})
    assert [f.id for f, _ in hits] == ["d", "b"]
    assert origin_default() is Origin.REFLECTED


def origin_default():
    return ExperienceFragment("z", "z", unit(1)).origin
