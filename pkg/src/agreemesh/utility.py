"""Linear utilities over outcome vectors and best responses to predictions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class UtilitySpec:
    """``U(a, y) = sum_j matrix[a][j] * y[j]`` over a finite action set."""

    actions: tuple
    matrix: tuple

    def __post_init__(self):
        M = np.asarray(self.matrix, dtype=np.float64)
        if M.ndim != 2 or M.shape[0] != len(self.actions) or M.shape[0] == 0:
            raise ValueError("utility matrix must have one row per action")
        if not np.all(np.isfinite(M)) or M.min() < 0.0 or M.max() > 1.0:
            # on the probability simplex this keeps every utility in [0, 1]
            raise ValueError("utility entries must lie in [0, 1]")
        if len(set(self.actions)) != len(self.actions):
            raise ValueError("action ids must be unique")

    @classmethod
    def from_dict(cls, raw: dict) -> "UtilitySpec":
        if set(raw) - {"actions", "matrix"}:
            raise ValueError(f"unknown utility fields {sorted(set(raw) - {'actions', 'matrix'})}")
        return cls(tuple(str(a) for a in raw["actions"]),
                   tuple(tuple(float(v) for v in row) for row in raw["matrix"]))

    @classmethod
    def coordinate_pick(cls, d: int) -> "UtilitySpec":
        """Action ``a_j`` earns the ``j``-th outcome coordinate."""
        return cls(tuple(f"a{j + 1}" for j in range(d)),
                   tuple(tuple(1.0 if i == j else 0.0 for j in range(d)) for i in range(d)))

    def to_dict(self) -> dict:
        return {"actions": list(self.actions), "matrix": [list(r) for r in self.matrix]}

    @property
    def M(self) -> np.ndarray:
        return np.asarray(self.matrix, dtype=np.float64)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def d(self) -> int:
        return len(self.matrix[0])

    @property
    def lipschitz(self) -> float:
        """``L = max_a max_{j1, j2} (M[a, j1] - M[a, j2])``."""
        M = self.M
        return float((M.max(axis=1) - M.min(axis=1)).max())

    def value(self, action: int, y) -> float:
        return float(self.M[action] @ np.asarray(y, dtype=np.float64))

    def index(self, action_id) -> int:
        return self.actions.index(action_id)


def best_response(utility: UtilitySpec, prediction) -> int:
    """Index of the utility-maximizing action; ties go to the lowest index."""
    scores = utility.M @ np.asarray(prediction, dtype=np.float64)
    return int(np.argmax(scores))
