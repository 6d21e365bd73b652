import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from agreemesh.agents import ConstantAgent, AlwaysDisagreeAgent, PriorTable
from agreemesh.core import Conversation, dumps_transcript, numeric, speaker_of
from agreemesh.protocol import (AgreementCondition, ConfigError, ProtocolConfig,
                                agree_action, agree_canonical, agree_n, run_day,
                                run_experiment)
from agreemesh.utility import UtilitySpec, best_response

U2 = UtilitySpec.coordinate_pick(2)


# -- agreement ----------------------------------------------------------------------

def test_canonical_agreement_examples():
    assert agree_canonical(0.40, 0.45, 0.1)
    assert not agree_canonical(0.40, 0.50, 0.1)


def test_action_agreement_half_check():
    # the human believes (0.5, 0.5), the model recommends a1, the human's best is a2
    yh = np.array([0.5, 0.5])
    assert U2.value(0, yh) >= U2.value(1, yh) - 0.1
    assert agree_action(U2, 1, yh, 0, np.array([0.5, 0.5]), 0.1)
    assert not agree_action(U2, 1, np.array([0.2, 0.8]), 0, np.array([0.9, 0.1]), 0.1)


@given(st.lists(st.floats(0, 1), min_size=2, max_size=2),
       st.lists(st.floats(0, 1), min_size=2, max_size=2),
       st.integers(0, 1), st.integers(0, 1), st.floats(0.001, 1), st.floats(0, 1))
def test_action_agreement_monotone_in_eps(yh, ym, ah, am, eps, extra):
    if agree_action(U2, ah, yh, am, ym, eps):
        assert agree_action(U2, ah, yh, am, ym, eps + extra)


@given(st.floats(0, 1), st.lists(st.floats(0, 1), min_size=1, max_size=5),
       st.floats(0.01, 1))
def test_n_agree_triangle(ref, others, eps):
    if agree_n([ref], [[o] for o in others], eps):
        vals = [ref] + others
        for a in vals:
            for b in vals:
                assert abs(a - b) < eps


def test_condition_validation():
    with pytest.raises(ConfigError):
        AgreementCondition("action", 0.1)
    with pytest.raises(ConfigError):
        AgreementCondition("canonical", 0.0)
    with pytest.raises(ConfigError):
        AgreementCondition("bogus", 0.1)


def test_best_response_examples():
    assert best_response(U2, [0.7, 0.3]) == 0
    assert best_response(U2, [0.5, 0.5]) == 0
    U3 = UtilitySpec(("a1", "a2", "a3"), ((1, 0), (0, 1), (0.5, 0.5)))
    assert best_response(U3, [0.6, 0.4]) == 0
    with pytest.raises(ValueError):
        UtilitySpec((), ())


def test_utility_spec_fields():
    U = UtilitySpec(("a", "b"), ((1.0, 0.2), (0.0, 0.9)))
    assert U.lipschitz == pytest.approx(0.9)
    with pytest.raises(ValueError):
        UtilitySpec(("a",), ((1.5, 0.0),))
    with pytest.raises(ValueError):
        UtilitySpec.from_dict({"actions": ["a"], "matrix": [[1.0]], "extra": 1})


# -- one day ----------------------------------------------------------------------

def pair(a, b):
    return [a.bind(1, 2), b.bind(2, 2)]


def test_constant_pair_agrees_at_round_two():
    res = run_day(pair(ConstantAgent([0.5]), ConstantAgent([0.5])),
                  AgreementCondition("canonical", 0.1), 1, [None, None], [1.0])
    assert res.day.conversation.length == 2 and res.day.conversation.agreed


def test_cap_marks_non_agreement():
    seen = []

    class Spy(ConstantAgent):
        def end_day(self, outcome):
            seen.append(outcome.tolist())

    res = run_day(pair(Spy([0.5]), AlwaysDisagreeAgent()),
                  AgreementCondition("canonical", 0.1), 1, [None, None], [1.0], 25)
    assert res.day.conversation.length == 25 and not res.day.conversation.agreed
    assert seen == [[1.0]]


def test_prior_bayes_day_agrees_by_round_three():
    cfg = ProtocolConfig.from_dict({
        "setting": "canonical", "epsilon": 0.1, "days": 20, "seed": 1,
        "agents": [{"kind": "bayes"}, {"kind": "bayes"}],
        "outcome_source": {"kind": "prior", "prior": {"worlds": [
            {"xh": "0", "xm": "0", "y": [0.0], "p": 0.5},
            {"xh": "0", "xm": "1", "y": [1.0], "p": 0.5}]}}})
    tr = run_experiment(cfg)
    assert tr.agreed().all() and tr.lengths().max() <= 3


def test_clamping_is_counted():
    res = run_day(pair(ConstantAgent([1.0 + 1e-12]), ConstantAgent([1.0])),
                  AgreementCondition("canonical", 0.1), 1, [None, None], [1.0])
    assert res.clamped == 1 and res.day.conversation.messages[0] == numeric([1.0])


# -- experiments -------------------------------------------------------------------

def small_config(**over):
    raw = {"setting": "canonical", "epsilon": 0.2, "days": 300, "seed": 5,
           "agents": [{"kind": "converse", "g": 0.2}, {"kind": "converse", "g": 0.2}],
           "outcome_source": {"kind": "drift", "weights": [1.0, 2.0]}}
    raw.update(over)
    return ProtocolConfig.from_dict(raw)


def test_zero_days():
    assert run_experiment(small_config(days=0)).T == 0


def test_fixed_stream_deterministic():
    cfg = small_config(outcome_source={"kind": "fixed", "outcomes": [[1], [0], [1]],
                                       "features": [[[0.2], [0.7]], [[0.9], [0.1]]]},
                       days=50)
    assert dumps_transcript(run_experiment(cfg)) == dumps_transcript(run_experiment(cfg))


def test_seed_determinism_and_sensitivity():
    a = dumps_transcript(run_experiment(small_config()))
    assert a == dumps_transcript(run_experiment(small_config()))
    assert a != dumps_transcript(run_experiment(small_config(seed=6)))


def test_prior_source_reproducible():
    prior = PriorTable.generate(8, np.random.default_rng(0)).to_dict()
    cfg = small_config(outcome_source={"kind": "prior", "prior": prior},
                       agents=[{"kind": "bayes"}, {"kind": "bayes"}])
    a, b = run_experiment(cfg), run_experiment(cfg)
    assert a.outcomes().tolist() == b.outcomes().tolist()


def test_turn_alternation_and_agreement_soundness():
    cfg = small_config(days=400)
    tr = run_experiment(cfg)
    cond = cfg.condition()
    for day in tr.days:
        conv = day.conversation
        partial = Conversation()
        for k, (m, p) in enumerate(zip(conv.messages, conv.predictions), start=1):
            partial.append(m, p)
            closed = cond.check(partial, k)
            assert closed == (k == conv.length and conv.agreed)
    assert [speaker_of(k) for k in (1, 2, 3)] == [1, 2, 1]


def test_nagent_checked_on_agent_one_turns():
    cfg = small_config(setting="nagent", epsilon=0.3, days=200,
                       agents=[{"kind": "converse-many", "g": 0.25},
                               {"kind": "converse", "g": 0.25},
                               {"kind": "converse", "g": 0.25}],
                       outcome_source={"kind": "drift", "weights": [1.0, 1.5, 2.0]})
    tr = run_experiment(cfg)
    L = tr.lengths()[tr.agreed()]
    assert np.all((L - 1) % 3 == 0) and np.all(L >= 4)
    for day in tr.days:
        if day.conversation.agreed:
            last = [m.value[0] for m in day.conversation.messages[-3:]]
            assert abs(last[2] - last[0]) < 0.15 and abs(last[2] - last[1]) < 0.15


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        small_config(bogus=1)
    with pytest.raises(ConfigError):
        small_config(epsilon=-1)
    with pytest.raises(ConfigError):
        small_config(agents=[{"kind": "converse"}])
    with pytest.raises(ConfigError):
        small_config(setting="action")
    with pytest.raises(ConfigError):
        ProtocolConfig.from_dict({"setting": "canonical"})
    with pytest.raises(ConfigError):
        ProtocolConfig.load(tmp_path / "missing.json")
    with pytest.raises(ConfigError):
        run_experiment(small_config(agents=[{"kind": "converse", "x": 1},
                                            {"kind": "converse"}]))
    with pytest.raises(ConfigError):
        run_experiment(small_config(outcome_source={"kind": "drift", "nope": 1}))
    path = tmp_path / "c.json"
    path.write_text(json.dumps(small_config().to_dict()))
    assert ProtocolConfig.load(path).to_dict() == small_config().to_dict()
