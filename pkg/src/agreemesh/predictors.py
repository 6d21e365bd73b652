"""Online predictors: grid calibration (known and unknown horizon) and an
unbiased predictor for finite, possibly self-referential, event families.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.optimize import linprog

from . import _kernels
from .core import bucket_indices
from .utility import UtilitySpec, best_response


def _check_outcome(y) -> float:
    y = float(np.asarray(y, dtype=np.float64).reshape(-1)[0])
    if not 0.0 <= y <= 1.0:
        raise ValueError(f"outcome {y} outside [0, 1]")
    return y


class AOSA:
    """Calibrated online predictions on the grid ``{0, 1/m, ..., 1}``.

    ``alpha[i]`` accumulates the bias of the look-ahead prediction at grid
    point ``i``. Each step emits the left end of the first adjacent pair
    whose look-ahead biases straddle zero.
    """

    def __init__(self, horizon: int | None = None, m: int | None = None):
        if m is None:
            if horizon is None or horizon < 1:
                raise ValueError("give a positive horizon or a grid size m")
            m = math.ceil(math.sqrt(horizon))
        if m < 1:
            raise ValueError("grid size must be positive")
        self.m = int(m)
        self.grid = np.arange(self.m + 1) / self.m
        self.alpha = np.zeros(self.m + 1)
        self.steps = 0

    def _pair(self) -> int:
        i = _kernels.aosa_pair(self.alpha)
        if i < 0:  # alpha[0] <= 0 <= alpha[m] always holds, so this is a bug
            raise RuntimeError("no straddling pair in the look-ahead biases")
        return i

    def predict(self) -> float:
        return float(self.grid[self._pair()])

    def observe(self, y) -> None:
        y = _check_outcome(y)
        i = self._pair()
        lo, hi = self.grid[i], self.grid[i + 1]
        j = i if abs(lo - y) <= abs(hi - y) else i + 1
        self.alpha[j] += self.grid[j] - y
        self.steps += 1

    @staticmethod
    def bound(T: int) -> float:
        return 2.0 * math.sqrt(T) + 1.0


class AOST:
    """Unknown-horizon wrapper: fresh AOSA per epoch with doubling horizons.

    Steps 1-2 run under horizon 2, steps 3-4 under 4, steps 5-8 under 8, and
    so on; each epoch uses a grid of ``ceil(sqrt(horizon))`` points.
    """

    def __init__(self):
        self.epoch_horizon = 2
        self.inner = AOSA(m=math.ceil(math.sqrt(self.epoch_horizon)))
        self.steps = 0
        self.epochs = [(self.epoch_horizon, 1)]

    def predict(self) -> float:
        return self.inner.predict()

    def observe(self, y) -> None:
        self.inner.observe(y)
        self.steps += 1
        if self.steps == self.epoch_horizon:
            self.epoch_horizon *= 2
            self.inner = AOSA(m=math.ceil(math.sqrt(self.epoch_horizon)))
            self.epochs.append((self.epoch_horizon, self.steps + 1))

    def epoch_lengths(self) -> list[int]:
        starts = [s for _, s in self.epochs] + [self.steps + 1]
        return [b - a for a, b in zip(starts, starts[1:]) if b > a]

    @staticmethod
    def bound(T: float) -> float:
        if T <= 0:
            return 0.0
        return (math.log2(2 * T) + 2.0 * math.sqrt(T)
                + 2.0 * (math.sqrt(2 * T) - 1.0) / (math.sqrt(2) - 1.0))


def make_scalar_predictor(kind: str, horizon: int | None = None):
    if kind == "aosa":
        return AOSA(horizon=horizon)
    if kind == "aost":
        return AOST()
    raise ValueError(f"unknown predictor {kind!r}")


# -- cells for the unbiased predictor -----------------------------------------
#
# A cell is a region of the prediction space on which the event indicators
# do not change. Inside a cell the potential's first-order change is linear
# in the prediction, so the learner's side of the per-step game is solved
# cell by cell.

class SingleCell:
    """One cell covering the whole box ``[0, 1]^d`` (or the simplex)."""

    n_cells = 1

    def __init__(self, d: int = 1, outcome_space: str = "box"):
        self.d = d
        self.outcome_space = outcome_space

    def cell_of(self, yhat) -> int:
        return 0

    def solve(self, c: np.ndarray, rng) -> tuple[int, np.ndarray]:
        c = c[0]
        if self.outcome_space == "simplex":
            yhat = np.zeros(self.d)
            yhat[int(np.argmin(c))] = 1.0
        else:
            yhat = (c < 0).astype(np.float64)
        return 0, yhat


class IntervalCells:
    """Scalar predictions bucketed into ``n`` equal-width cells."""

    def __init__(self, n: int):
        self.n_cells = int(n)
        self.d = 1
        self.lows = np.arange(self.n_cells) / self.n_cells

    def cell_of(self, yhat) -> int:
        return int(bucket_indices(np.atleast_1d(yhat), self.n_cells)[0])

    def solve(self, c: np.ndarray, rng) -> tuple[int, np.ndarray]:
        c = np.ascontiguousarray(c[:, 0])
        if c[0] >= 0.0:
            return 0, np.zeros(1)
        if c[-1] <= 0.0:
            return self.n_cells - 1, np.ones(1)
        i = _kernels.first_sign_change(c)
        if c[i + 1] == 0.0:
            return i + 1, np.array([self.lows[i + 1]])
        # mix the two adjacent cell floors so the outcome term cancels
        q = c[i + 1] / (c[i + 1] - c[i])
        cell = i if rng.random() < q else i + 1
        return cell, np.array([self.lows[cell]])


class ActionCells:
    """Cells indexed by the best-response action of the prediction.

    Ties in the best response go to the lowest action index, so the cell of
    action ``a`` keeps a small margin against every lower-indexed action.
    """

    MARGIN = 1e-9

    def __init__(self, utility: UtilitySpec, outcome_space: str = "simplex"):
        if outcome_space not in ("simplex", "box"):
            raise ValueError(f"unknown outcome space {outcome_space!r}")
        self.utility = utility
        self.outcome_space = outcome_space
        self.n_cells = utility.n_actions
        self.d = utility.d
        self._build_static()

    def cell_of(self, yhat) -> int:
        return best_response(self.utility, yhat)

    def _build_static(self):
        A, d = self.n_cells, self.d
        M = self.utility.M
        nt = 1 if self.outcome_space == "simplex" else d
        self._nvar = A + A * d + nt
        rows = []
        # cell membership of z_a = pi_a * mu_a
        for a in range(A):
            for b in range(A):
                if a == b:
                    continue
                row = np.zeros(self._nvar)
                row[A + a * d:A + (a + 1) * d] = M[b] - M[a]
                if b < a:
                    row[a] = self.MARGIN
                rows.append(row)
        eq = [np.concatenate((np.ones(A), np.zeros(A * d + nt)))]
        if self.outcome_space == "box":
            for a in range(A):
                for j in range(d):
                    row = np.zeros(self._nvar)
                    row[A + a * d + j] = 1.0
                    row[a] = -1.0
                    rows.append(row)
        else:
            for a in range(A):
                row = np.zeros(self._nvar)
                row[A + a * d:A + (a + 1) * d] = 1.0
                row[a] = -1.0
                eq.append(row)
        self._static_ub = np.array(rows) if rows else np.zeros((0, self._nvar))
        self._A_eq = np.array(eq)
        self._b_eq = np.zeros(len(eq))
        self._b_eq[0] = 1.0
        tb = (None, None) if self.outcome_space == "simplex" else (0.0, None)
        self._bounds = [(0.0, 1.0)] * (A + A * d) + [tb] * nt
        self._nt = nt

    def solve(self, c: np.ndarray, rng) -> tuple[int, np.ndarray]:
        A, d = self.n_cells, self.d
        scale = np.abs(c).max()
        c = c / scale if scale > 0 else c
        obj = np.concatenate((np.zeros(A), c.reshape(-1), np.ones(self._nt)))
        # adversary's best outcome: t >= -sum_a pi_a c_a[j]
        dyn = np.zeros((d, self._nvar))
        for j in range(d):
            dyn[j, :A] = -c[:, j]
            dyn[j, A + A * d + (0 if self._nt == 1 else j)] = -1.0
        A_ub = np.vstack((dyn, self._static_ub))
        res = linprog(obj, A_ub=A_ub, b_ub=np.zeros(A_ub.shape[0]), A_eq=self._A_eq,
                      b_eq=self._b_eq, bounds=self._bounds, method="highs")
        if res.status != 0:
            raise RuntimeError(f"equilibrium LP failed: {res.message}")
        pi = np.clip(res.x[:A], 0.0, None)
        pi /= pi.sum()
        a = int(rng.choice(A, p=pi)) if np.count_nonzero(pi > 1e-12) > 1 else int(np.argmax(pi))
        mu = np.clip(res.x[A + a * d:A + (a + 1) * d] / pi[a], 0.0, 1.0)
        if self.outcome_space == "simplex":
            mu = mu / mu.sum()
        return self.cell_of(mu), mu


class UnbiasedPredictor:
    """Predictions whose bias stays small on every event of a finite family.

    Events are indexed by ``(channel s, key, cell)``: event ``(s, key, cell)``
    is active on a step whose context assigns ``key`` to channel ``s`` and
    whose prediction falls in ``cell``. Each event and output coordinate
    carries a pair of signed exponential weights on its running bias; every
    step solves the learner's side of the induced zero-sum game over cells
    and samples from it with the injected generator.

    Parameters
    ----------
    cells : SingleCell | IntervalCells | ActionCells
    n_keys : sequence of int
        Number of context keys per channel.
    rng : numpy.random.Generator
    alpha : float
        Failure probability budget used only by :meth:`bound`.
    record : bool
        Keep the full step history for ledger replay.
    """

    def __init__(self, cells, n_keys, rng, alpha: float = 0.05, record: bool = False):
        self.cells = cells
        self.d = cells.d
        self.n_keys = tuple(int(k) for k in n_keys)
        self.n_channels = len(self.n_keys)
        self.rng = rng
        self.alpha = alpha
        K = max(self.n_keys)
        self.bias = np.zeros((self.n_channels, K, cells.n_cells, self.d))
        self.counts = np.zeros((self.n_channels, K, cells.n_cells), dtype=np.int64)
        self.n_events = sum(self.n_keys) * cells.n_cells
        self.steps = 0
        self.history = [] if record else None
        self._pending = None

    def learning_rate(self) -> float:
        return min(1.0, math.sqrt(math.log(2 * self.d * self.n_events) / (self.steps + 1)))

    def weights_for(self, context) -> np.ndarray:
        """Per-cell, per-coordinate signed weight totals for the given context."""
        eta = self.learning_rate()
        z = eta * self.bias[np.arange(self.n_channels), np.asarray(context)]
        top = np.abs(z).max() if z.size else 0.0
        return (np.exp(z - top) - np.exp(-z - top)).sum(axis=0)

    def predict(self, context=(0,)) -> np.ndarray:
        context = tuple(int(k) for k in context)
        if len(context) != self.n_channels:
            raise ValueError("context must give one key per channel")
        for s, k in enumerate(context):
            if not 0 <= k < self.n_keys[s]:
                raise ValueError(f"key {k} out of range for channel {s}")
        cell, yhat = self.cells.solve(self.weights_for(context), self.rng)
        self._pending = (context, cell, yhat)
        return yhat.copy()

    def observe(self, y) -> None:
        if self._pending is None:
            raise RuntimeError("observe called without a pending prediction")
        y = np.asarray(y, dtype=np.float64).reshape(self.d)
        if np.any((y < 0) | (y > 1)):
            raise ValueError("outcome outside [0, 1]^d")
        context, cell, yhat = self._pending
        for s, k in enumerate(context):
            self.bias[s, k, cell] += yhat - y
            self.counts[s, k, cell] += 1
        self.steps += 1
        if self.history is not None:
            self.history.append((context, cell, yhat.copy(), y.copy()))
        self._pending = None

    def replay_bias(self) -> np.ndarray:
        """Recompute the bias ledger from the recorded history."""
        if self.history is None:
            raise RuntimeError("history was not recorded")
        out = np.zeros_like(self.bias)
        for context, cell, yhat, y in self.history:
            for s, k in enumerate(context):
                out[s, k, cell] += yhat - y
        return out

    def bound(self, T: int | None = None, C: float = 8.0) -> float:
        T = self.steps if T is None else T
        return unbiased_bound(T, self.d, self.n_events, self.alpha, C)


def unbiased_bound(T: float, d: int, n_events: int, alpha: float = 0.05,
                   C: float = 8.0) -> float:
    """``C * (log(d |E| T) + sqrt(T log(d |E| / alpha)))``."""
    if T <= 0:
        return 0.0
    de = d * n_events
    return C * (math.log(de * T) + math.sqrt(T * math.log(de / alpha)))
