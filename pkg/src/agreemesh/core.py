"""Conversation data model, bucketing, round subsequences and transcript IO.

Conventions
-----------
Days ``t`` and rounds ``k`` are 1-based. With two agents the model speaks
on odd rounds and the human on even rounds; with ``n`` agents agent
``((k - 1) mod n) + 1`` speaks at round ``k``. Agent 1 is the model and
agent 2 the human.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np

from . import _kernels

SIDES = {"model": 1, "human": 2}


class TranscriptError(ValueError):
    """Raised for malformed transcripts or out-of-range queries."""


# -- messages -------------------------------------------------------------

@dataclass(frozen=True)
class NumericMessage:
    value: tuple

    def as_array(self) -> np.ndarray:
        return np.asarray(self.value, dtype=np.float64)


@dataclass(frozen=True)
class ActionMessage:
    action: int


Message = Union[NumericMessage, ActionMessage]


def numeric(values) -> NumericMessage:
    return NumericMessage(tuple(float(v) for v in np.atleast_1d(values)))


# -- clamping -------------------------------------------------------------

def clamp_unit(values) -> tuple[np.ndarray, bool]:
    """Clip a vector into ``[0, 1]`` and report whether anything moved."""
    arr = np.atleast_1d(np.asarray(values, dtype=np.float64))
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite value {arr!r}")
    out = np.clip(arr, 0.0, 1.0)
    return out, bool(np.any(out != arr))


def check_unit(values, what="value") -> np.ndarray:
    arr = np.atleast_1d(np.asarray(values, dtype=np.float64))
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError(f"{what} must lie in [0, 1], got {arr.tolist()}")
    return arr


# -- bucketing ------------------------------------------------------------

def bucket_of(v: float, n: int) -> int:
    """1-based bucket of ``v`` in the ``n``-bucket partition of [0, 1].

    Bucket ``i`` is ``[(i-1)/n, i/n)``; the last bucket is closed so that
    ``v = 1`` lands in bucket ``n``.
    """
    if n < 1:
        raise ValueError("bucket count must be positive")
    if not 0.0 <= v <= 1.0:
        raise ValueError(f"value {v} outside [0, 1]")
    return int(_kernels.bucket_indices(np.array([float(v)]), int(n))[0]) + 1


def bucket_indices(values, n: int) -> np.ndarray:
    """0-based bucket indices for an array of values in ``[0, 1]``."""
    arr = np.ascontiguousarray(values, dtype=np.float64).ravel()
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError("values must lie in [0, 1]")
    return _kernels.bucket_indices(arr, int(n))


def buckets_for_width(g: float) -> int:
    """Smallest bucket count whose width does not exceed ``g``."""
    if not 0.0 < g <= 1.0:
        raise ValueError(f"bucket width must be in (0, 1], got {g}")
    return max(1, math.ceil(1.0 / g - 1e-9))


@dataclass(frozen=True)
class Bucketing:
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("bucket count must be positive")

    @classmethod
    def from_width(cls, g: float) -> "Bucketing":
        return cls(buckets_for_width(g))

    @property
    def width(self) -> float:
        return 1.0 / self.n

    def of(self, v: float) -> int:
        return bucket_of(v, self.n)

    def interval(self, i: int) -> tuple[float, float]:
        return (i - 1) / self.n, i / self.n


# -- conversations and transcripts -----------------------------------------

def speaker_of(k: int, n_agents: int = 2) -> int:
    if k < 1:
        raise ValueError("rounds are 1-based")
    return (k - 1) % n_agents + 1


@dataclass
class Conversation:
    messages: list = field(default_factory=list)
    predictions: list = field(default_factory=list)
    agreed: bool = True

    @property
    def length(self) -> int:
        return len(self.messages)

    def append(self, message: Message, prediction) -> None:
        self.messages.append(message)
        self.predictions.append(tuple(float(v) for v in np.atleast_1d(prediction)))


@dataclass
class SettingDescriptor:
    kind: str = "canonical"
    d: int = 1
    n_agents: int = 2
    utility: dict | None = None

    def to_dict(self) -> dict:
        return {"kind": self.kind, "d": self.d, "n_agents": self.n_agents,
                "utility": self.utility}


@dataclass
class Day:
    conversation: Conversation
    outcome: tuple

    @property
    def length(self) -> int:
        return self.conversation.length


@dataclass
class Transcript:
    days: list = field(default_factory=list)
    setting: SettingDescriptor = field(default_factory=SettingDescriptor)
    epsilon: float = 0.0
    clamped: int = 0

    def __len__(self) -> int:
        return len(self.days)

    @property
    def T(self) -> int:
        return len(self.days)

    def lengths(self) -> np.ndarray:
        return np.array([day.length for day in self.days], dtype=np.int64)

    def agreed(self) -> np.ndarray:
        return np.array([day.conversation.agreed for day in self.days], dtype=bool)

    def outcomes(self) -> np.ndarray:
        return np.array([day.outcome for day in self.days], dtype=np.float64).reshape(
            len(self.days), -1)

    def speaker(self, k: int) -> int:
        return speaker_of(k, self.setting.n_agents)

    def rounds_of(self, agent: int) -> list[int]:
        top = int(self.lengths().max()) if self.days else 0
        return [k for k in range(1, top + 1) if self.speaker(k) == agent]


def agent_index(side, n_agents: int = 2) -> int:
    if isinstance(side, str):
        if side not in SIDES:
            raise ValueError(f"unknown side {side!r}")
        idx = SIDES[side]
    else:
        idx = int(side)
    if not 1 <= idx <= n_agents:
        raise ValueError(f"agent index {idx} out of range for {n_agents} agents")
    return idx


def round_mask(transcript: Transcript, k: int) -> np.ndarray:
    if k < 1:
        raise TranscriptError("rounds are 1-based")
    return transcript.lengths() >= k


def round_subsequence(transcript: Transcript, k: int) -> np.ndarray:
    """1-based day numbers of the days whose conversation reached round ``k``."""
    return np.flatnonzero(round_mask(transcript, k)) + 1


def round_predictions(transcript: Transcript, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(day_index, predictions)`` for the days reaching round ``k``.

    ``day_index`` is 0-based.
    """
    idx = np.flatnonzero(round_mask(transcript, k))
    d = transcript.setting.d
    preds = np.array([transcript.days[t].conversation.predictions[k - 1] for t in idx],
                     dtype=np.float64).reshape(len(idx), d)
    return idx, preds


def carried_predictions(transcript: Transcript, k: int, side=None) -> np.ndarray:
    """Round-``k`` predictions, carrying each early-ending day's last one.

    Days that stopped before round ``k`` contribute the prediction made at
    their final round. When ``side`` is given it must be the speaker of
    round ``k``.
    """
    if k < 1:
        raise TranscriptError("rounds are 1-based")
    if not transcript.days:
        raise TranscriptError("empty transcript")
    if side is not None:
        who = agent_index(side, transcript.setting.n_agents)
        if transcript.speaker(k) != who:
            raise TranscriptError(f"agent {who} does not speak at round {k}")
    out = np.empty((len(transcript.days), transcript.setting.d))
    for t, day in enumerate(transcript.days):
        preds = day.conversation.predictions
        out[t] = preds[min(k, len(preds)) - 1]
    return out


def carried_messages(transcript: Transcript, k: int) -> list:
    out = []
    for day in transcript.days:
        msgs = day.conversation.messages
        out.append(msgs[min(k, len(msgs)) - 1])
    return out


# -- JSONL serialization ----------------------------------------------------

HEADER_TAG = "agreemesh-transcript"


def _fmt_float(x: float) -> str:
    x = float(x)
    if not math.isfinite(x):
        raise TranscriptError(f"cannot serialize non-finite value {x}")
    return format(x, ".17g")


def _fmt_vec(vals: Iterable[float]) -> str:
    return "[" + ",".join(_fmt_float(v) for v in vals) + "]"


def _fmt_message(msg: Message) -> str:
    if isinstance(msg, ActionMessage):
        return str(int(msg.action))
    return _fmt_vec(msg.value)


def day_record(t: int, day: Day) -> str:
    conv = day.conversation
    parts = [
        f'"t":{t}',
        '"messages":[' + ",".join(_fmt_message(m) for m in conv.messages) + "]",
        '"predictions":[' + ",".join(_fmt_vec(p) for p in conv.predictions) + "]",
        f'"outcome":{_fmt_vec(day.outcome)}',
        f'"len":{conv.length}',
        f'"agreed":{"true" if conv.agreed else "false"}',
    ]
    return "{" + ",".join(parts) + "}"


def header_record(transcript: Transcript) -> str:
    head = {"format": HEADER_TAG, "version": 1}
    head.update(transcript.setting.to_dict())
    head["epsilon"] = transcript.epsilon
    head["clamped"] = transcript.clamped
    return json.dumps(head, separators=(",", ":"))


def dumps_transcript(transcript: Transcript) -> str:
    lines = [header_record(transcript)]
    lines.extend(day_record(t, day) for t, day in enumerate(transcript.days, start=1))
    return "\n".join(lines) + "\n"


def write_transcript(transcript: Transcript, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_transcript(transcript))


def _parse_message(raw, kind: str) -> Message:
    if isinstance(raw, bool):
        raise TranscriptError("boolean is not a message")
    if isinstance(raw, int) and kind == "action":
        return ActionMessage(raw)
    if isinstance(raw, list):
        return NumericMessage(tuple(float(v) for v in raw))
    raise TranscriptError(f"unrecognised message {raw!r}")


def loads_transcript(text: str) -> Transcript:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise TranscriptError("empty transcript")
    try:
        head = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise TranscriptError(f"bad header: {exc}") from exc
    if head.get("format") != HEADER_TAG:
        raise TranscriptError("missing transcript header")
    setting = SettingDescriptor(kind=head["kind"], d=int(head["d"]),
                                n_agents=int(head["n_agents"]), utility=head.get("utility"))
    tr = Transcript(setting=setting, epsilon=float(head["epsilon"]),
                    clamped=int(head.get("clamped", 0)))
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TranscriptError(f"line {lineno}: {exc}") from exc
        if rec.get("t") != len(tr.days) + 1:
            raise TranscriptError(f"line {lineno}: day numbers must be consecutive from 1")
        msgs = [_parse_message(m, setting.kind) for m in rec["messages"]]
        preds = [tuple(float(v) for v in p) for p in rec["predictions"]]
        if len(msgs) != rec["len"] or len(preds) != rec["len"]:
            raise TranscriptError(f"line {lineno}: length mismatch")
        conv = Conversation(msgs, preds, agreed=bool(rec.get("agreed", True)))
        tr.days.append(Day(conv, tuple(float(v) for v in rec["outcome"])))
    return tr


def read_transcript(path) -> Transcript:
    with open(path, encoding="utf-8") as fh:
        return loads_transcript(fh.read())


def as_vector_array(values: Sequence, d: int | None = None) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1) if d in (None, 1) else arr.reshape(-1, d)
    return arr
