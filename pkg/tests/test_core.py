import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from agreemesh.core import (ActionMessage, Bucketing, TranscriptError, bucket_of,
                            buckets_for_width, carried_predictions, clamp_unit,
                            dumps_transcript, loads_transcript, read_transcript,
                            round_subsequence, speaker_of, write_transcript)

from conftest import lengths_transcript, make_transcript


# -- bucketing --------------------------------------------------------------

@pytest.mark.parametrize("n, v, expected", [(4, 0.25, 2), (4, 1.0, 4), (1, 0.0, 1),
                                            (1, 0.73, 1), (1, 1.0, 1), (4, 0.0, 1),
                                            (4, 0.2499999, 1), (10, 0.3, 4)])
def test_bucket_of_examples(n, v, expected):
    assert bucket_of(v, n) == expected


@pytest.mark.parametrize("n", [1, 2, 3, 10])
def test_bucket_partition_exhaustive(n):
    b = Bucketing(n)
    for v in np.round(np.arange(1001) * 1e-3, 12):
        hits = [i for i in range(1, n + 1)
                if (b.interval(i)[0] <= v < b.interval(i)[1]) or (i == n and v == 1.0)]
        assert hits == [bucket_of(float(v), n)]


@given(st.integers(1, 200), st.floats(0.0, 1.0))
def test_bucket_membership(n, v):
    i = bucket_of(v, n)
    assert 1 <= i <= n
    assert (i - 1) / n <= v or np.isclose((i - 1) / n, v)
    assert v < i / n or i == n


def test_bucket_rejects_out_of_range():
    with pytest.raises(ValueError):
        bucket_of(1.2, 4)
    with pytest.raises(ValueError):
        bucket_of(-0.1, 4)
    with pytest.raises(ValueError):
        Bucketing(0)


def test_buckets_for_width():
    assert buckets_for_width(0.1) == 10
    assert buckets_for_width(1.0) == 1
    assert buckets_for_width(50_000 ** (-1 / 3)) == 37
    assert buckets_for_width(0.3) == 4


def test_clamp_counts_moves():
    out, moved = clamp_unit([1.0 + 1e-15, 0.5])
    assert moved and out[0] == 1.0
    out, moved = clamp_unit([0.2])
    assert not moved
    with pytest.raises(ValueError):
        clamp_unit([np.nan])


# -- round selectors ------------------------------------------------------------

def test_round_subsequence_examples():
    assert round_subsequence(lengths_transcript([3, 1, 5]), 2).tolist() == [1, 3]
    assert round_subsequence(lengths_transcript([3, 1, 5]), 1).tolist() == [1, 2, 3]
    assert round_subsequence(lengths_transcript([2, 2, 2]), 3).tolist() == []
    with pytest.raises(TranscriptError):
        round_subsequence(lengths_transcript([2]), 0)


def test_carried_predictions_examples():
    tr = make_transcript([([0.1, 0.2], 1), ([0.1, 0.2, 0.3, 0.4, 0.5, 0.6], 0)])
    carried = carried_predictions(tr, 4)
    assert carried[:, 0].tolist() == [0.2, 0.4]
    one = make_transcript([([0.7], 1)])
    assert carried_predictions(one, 1)[:, 0].tolist() == [0.7]
    with pytest.raises(TranscriptError):
        carried_predictions(lengths_transcript([]), 1)


def test_carried_predictions_side_check():
    tr = lengths_transcript([3])
    carried_predictions(tr, 2, side="human")
    with pytest.raises(TranscriptError):
        carried_predictions(tr, 2, side="model")


@given(st.lists(st.integers(1, 9), min_size=1, max_size=30), st.integers(1, 10))
def test_round_restriction_properties(lengths, k):
    days = [([float(r) / 10 for r in range(1, L + 1)], 0.0) for L in lengths]
    tr = make_transcript(days)
    assert len(round_subsequence(tr, k + 1)) <= len(round_subsequence(tr, k))
    a, b = carried_predictions(tr, k), carried_predictions(tr, k + 2)
    short = tr.lengths() < k
    assert np.array_equal(a[short], b[short])


def test_speaker_schedule():
    assert [speaker_of(k) for k in range(1, 6)] == [1, 2, 1, 2, 1]
    assert [speaker_of(k, 3) for k in range(1, 8)] == [1, 2, 3, 1, 2, 3, 1]


# -- serialization --------------------------------------------------------------

def test_jsonl_field_order_and_roundtrip(tmp_path):
    tr = make_transcript([([0.1, 1 / 3], 1), ([0.25], 0)], epsilon=0.2)
    tr.days[1].conversation.agreed = False
    text = dumps_transcript(tr)
    lines = text.splitlines()
    head = json.loads(lines[0])
    assert head["format"] == "agreemesh-transcript" and head["epsilon"] == 0.2
    rec = json.loads(lines[1])
    assert list(rec) == ["t", "messages", "predictions", "outcome", "len", "agreed"]
    assert rec["t"] == 1 and rec["len"] == 2
    back = loads_transcript(text)
    assert dumps_transcript(back) == text
    assert back.days[0].conversation.predictions[1][0] == 1 / 3
    assert back.agreed().tolist() == [True, False]
    path = tmp_path / "t.jsonl"
    write_transcript(tr, path)
    assert dumps_transcript(read_transcript(path)) == text


@settings(max_examples=50)
@given(st.lists(st.lists(st.floats(0, 1), min_size=1, max_size=6), min_size=1, max_size=8))
def test_jsonl_roundtrip_bit_exact(rounds):
    tr = make_transcript([(r, 1.0) for r in rounds])
    back = loads_transcript(dumps_transcript(tr))
    for a, b in zip(tr.days, back.days):
        assert a.conversation.predictions == b.conversation.predictions
        assert a.conversation.messages == b.conversation.messages


def test_action_messages_roundtrip():
    from agreemesh.core import Conversation, Day, SettingDescriptor, Transcript
    tr = Transcript(setting=SettingDescriptor("action", 2, 2,
                                              {"actions": ["a", "b"],
                                               "matrix": [[1, 0], [0, 1]]}),
                    epsilon=0.1)
    conv = Conversation()
    conv.append(ActionMessage(1), [0.2, 0.8])
    conv.append(ActionMessage(1), [0.4, 0.6])
    tr.days.append(Day(conv, (0.0, 1.0)))
    back = loads_transcript(dumps_transcript(tr))
    assert back.days[0].conversation.messages == [ActionMessage(1), ActionMessage(1)]


def test_loads_rejects_garbage():
    with pytest.raises(TranscriptError):
        loads_transcript('{"t": 1}\n')
