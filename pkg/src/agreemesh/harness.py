"""Theorem-shaped checks over transcripts, bound formulas and replication helpers."""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .agents import BayesianAgent, PriorTable
from .calibration import sqe, utility_sum
from .core import (SettingDescriptor, Transcript, carried_messages,
                   carried_predictions, round_mask)
from .predictors import AOST, unbiased_bound
from .protocol import AgreementCondition, run_day
from .utility import UtilitySpec

PASS, FAIL, NOT_APPLICABLE, VACUOUS = "pass", "fail", "not-applicable", "vacuous"
THEOREMS = ("canonical", "ddim", "action", "nagent", "bayes", "bayes-action")
ALIASES = {"d-dim": "ddim", "n-agent": "nagent", "bayes-full": "bayes"}


def theorem_id(name: str) -> str:
    name = ALIASES.get(name, name)
    if name not in THEOREMS:
        raise ValueError(f"unknown theorem {name!r}; expected one of {THEOREMS}")
    return name


@dataclass
class TheoremCheck:
    theorem: str
    formula: str
    inputs: dict
    observed: float | None
    bound: float | None
    status: str
    detail: str = ""

    @property
    def slack(self) -> float | None:
        """Distance from the observed value to the bound on the passing side."""
        if self.observed is None or self.bound is None:
            return None
        if self.theorem == "utility-improvement":
            return self.observed - self.bound
        return self.bound - self.observed

    def to_dict(self) -> dict:
        return {"theorem": self.theorem, "formula": self.formula, "inputs": self.inputs,
                "observed": self.observed, "bound": self.bound, "slack": self.slack,
                "status": self.status, "detail": self.detail}

    @property
    def failed(self) -> bool:
        return self.status == FAIL

    def line(self) -> str:
        obs = "n/a" if self.observed is None else f"{self.observed:.6g}"
        bnd = "n/a" if self.bound is None else f"{self.bound:.6g}"
        extra = f" ({self.detail})" if self.detail else ""
        return (f"[{self.status.upper()}] {self.theorem}: observed {obs} vs bound {bnd} "
                f"from {self.formula}{extra}")


# -- bound formulas -------------------------------------------------------------

def corollary_bound(theorem: str, eps: float, delta: float, d: int = 1,
                    n: int = 2) -> tuple[str, float]:
    """Round bound of the simplified statement for each setting."""
    theorem = theorem_id(theorem)
    if theorem == "canonical":
        return "2/(eps^2 delta)", 2.0 / (eps ** 2 * delta)
    if theorem == "ddim":
        return "2d/(eps^2 delta)", 2.0 * d / (eps ** 2 * delta)
    if theorem == "action":
        return "1/(eps delta) + 1", 1.0 / (eps * delta) + 1.0
    if theorem == "nagent":
        return "2n/(eps^2 delta)", 2.0 * n / (eps ** 2 * delta)
    if theorem == "bayes":
        return "3d/(eps^2 delta)", 3.0 * d / (eps ** 2 * delta)
    if theorem == "bayes-action":
        return "3/(2 eps delta) + 1", 3.0 / (2 * eps * delta) + 1.0
    raise ValueError(f"unknown theorem {theorem!r}; expected one of {THEOREMS}")


def aost_rate(tau: float) -> float:
    return AOST.bound(tau)


def beta_canonical(T: int, g_m: float, g_h: float, f_m=aost_rate, f_h=aost_rate,
                   d: int = 1) -> float:
    """``3 d (g_m + g_h + f_m(g_m T)/(g_m T) + f_h(g_h T)/(g_h T))``."""
    return 3.0 * d * (g_m + g_h + f_m(g_m * T) / (g_m * T) + f_h(g_h * T) / (g_h * T))


def gamma_action(T: int, L: float, d: int, n_actions: int, f_m, f_h) -> float:
    """``(2 L d |A|^2 f_h(T/|A|^2) + 2 L d |A|^2 f_m(T/|A|^2)) / T``."""
    a2 = n_actions ** 2
    return (2 * L * d * a2 * f_h(T / a2) + 2 * L * d * a2 * f_m(T / a2)) / T


def eta_nagent(T: int, n: int, g: float, f=aost_rate) -> float:
    """``n (3 g + 6 f(g T) / (T g))``."""
    return n * (3.0 * g + 6.0 * f(g * T) / (T * g))


def delta_quantile(lengths, delta: float) -> int:
    """The ``ceil((1 - delta) T)``-th smallest length (1-based order statistic)."""
    L = np.sort(np.asarray(lengths, dtype=np.int64))
    if L.size == 0:
        raise ValueError("no lengths")
    if not 0 <= delta < 1:
        raise ValueError("delta must lie in [0, 1)")
    # round away float fuzz such as 0.9 * 100 = 90.00000000000001
    rank = math.ceil(round((1.0 - delta) * L.size, 9))
    return int(L[max(rank, 1) - 1])


# -- checks -----------------------------------------------------------------------

def length_quantile_check(lengths, eps: float, delta: float, theorem: str = "canonical",
                          d: int = 1, n: int = 2, bound: float | None = None,
                          formula: str | None = None) -> TheoremCheck:
    """Is the ``(1 - delta)``-quantile of conversation lengths within the bound?

    Days that hit the round cap should be passed with the cap as length.
    """
    L = np.asarray(lengths)
    if bound is None:
        formula, bound = corollary_bound(theorem, eps, delta, d, n)
    q = delta_quantile(L, delta)
    status = PASS if q <= bound else FAIL
    return TheoremCheck(theorem, formula or "given bound",
                        {"eps": eps, "delta": delta, "d": d, "n": n, "T": int(L.size)},
                        float(q), float(bound), status)


def monotone_error_check(transcript: Transcript, k: int, delta: float,
                         tol: float = 1e-9) -> TheoremCheck:
    """Carried round-``k`` squared error per day does not exceed rounds 1 and 2."""
    T = transcript.T
    y = transcript.outcomes()
    size = int(round_mask(transcript, k).sum())
    inputs = {"k": k, "delta": delta, "T": T, "T_k": size}
    if size < delta * T:
        return TheoremCheck("error-monotone", "SQE_k/T <= min(SQE_1, SQE_2)/T", inputs,
                            None, None, NOT_APPLICABLE, f"|T(k)|={size} < delta T")
    obs = sqe(carried_predictions(transcript, k), y) / T
    base = min(sqe(carried_predictions(transcript, 1), y),
               sqe(carried_predictions(transcript, 2), y)) / T
    return TheoremCheck("error-monotone", "SQE_k/T <= min(SQE_1, SQE_2)/T + tol", inputs,
                        obs, base + tol, PASS if obs <= base + tol else FAIL)


def error_improvement_check(transcript: Transcript, k: int, delta: float, rate: float,
                            side=None, inputs: dict | None = None) -> TheoremCheck:
    """``SQE_k/T <= min(SQE_1, SQE_2)/T - k * rate`` on carried predictions.

    ``rate`` is ``eps^2 delta - beta(T)``; ``inputs`` may carry the values it
    was computed from so the check records them.
    """
    T = transcript.T
    y = transcript.outcomes()
    size = int(round_mask(transcript, k).sum())
    inputs = dict(inputs or {}, k=k, delta=delta, rate=rate, T=T, T_k=size)
    formula = "SQE_k/T <= min(SQE_1, SQE_2)/T - k * rate"
    if size < delta * T:
        return TheoremCheck("error-improvement", formula, inputs, None, None,
                            NOT_APPLICABLE, f"|T(k)|={size} < delta T")
    obs = sqe(carried_predictions(transcript, k, side), y) / T
    base = min(sqe(carried_predictions(transcript, 1), y),
               sqe(carried_predictions(transcript, 2), y)) / T
    bound = base - k * rate
    if rate <= 0:
        return TheoremCheck("error-improvement", formula, inputs, obs, bound, VACUOUS,
                            "insufficient T: rate <= 0")
    return TheoremCheck("error-improvement", formula, inputs, obs, bound,
                        PASS if obs <= bound else FAIL)


def utility_improvement_check(transcript: Transcript, utility: UtilitySpec, k: int,
                              delta: float, rate: float,
                              inputs: dict | None = None) -> TheoremCheck:
    """``U_k >= max(U_1, U_2) + (k - 1) T rate`` on carried actions.

    ``rate`` is ``2 eps delta - gamma(T)``.
    """
    T = transcript.T
    y = transcript.outcomes()
    size = int(round_mask(transcript, k).sum())
    inputs = dict(inputs or {}, k=k, delta=delta, rate=rate, T=T, T_k=size)
    formula = "U_k >= max(U_1, U_2) + (k-1) T rate"

    def total(r):
        return utility_sum([m.action for m in carried_messages(transcript, r)], y, utility)

    if size < delta * T:
        return TheoremCheck("utility-improvement", formula, inputs, None, None,
                            NOT_APPLICABLE, f"|T(k)|={size} < delta T")
    obs = total(k)
    bound = max(total(1), total(2)) + (k - 1) * T * rate
    if rate <= 0:
        return TheoremCheck("utility-improvement", formula, inputs, obs, bound, VACUOUS,
                            "insufficient T: rate <= 0")
    return TheoremCheck("utility-improvement", formula, inputs, obs, bound,
                        PASS if obs >= bound else FAIL)


def report_checks(transcript: Transcript, theorem: str, eps: float, delta: float,
                  max_rounds: int | None = None) -> list:
    """Length-quantile check plus the per-round improvement checks that apply."""
    theorem = theorem_id(theorem)
    s = transcript.setting
    lengths = transcript.lengths()
    if max_rounds is not None:
        lengths = np.where(transcript.agreed(), lengths, max_rounds)
    checks = [length_quantile_check(lengths, eps, delta, theorem, s.d, s.n_agents)]
    if theorem in ("canonical", "ddim") and s.n_agents == 2:
        T = transcript.T
        g = T ** (-1.0 / 3.0)
        beta = beta_canonical(T, g, g, d=s.d)
        info = {"eps": eps, "beta": beta, "g": g}
        for k in transcript.rounds_of(2):
            checks.append(monotone_error_check(transcript, k, delta))
            checks.append(error_improvement_check(transcript, k, delta,
                                                  eps ** 2 * delta - beta, inputs=info))
    if theorem == "action" and s.utility is not None:
        U = UtilitySpec.from_dict(s.utility)
        T = transcript.T
        def f(tau):
            return unbiased_bound(tau, s.d, U.n_actions ** 2)

        gamma = gamma_action(T, U.lipschitz, s.d, U.n_actions, f, f)
        info = {"eps": eps, "gamma": gamma}
        for k in transcript.rounds_of(2):
            checks.append(utility_improvement_check(transcript, U, k, delta,
                                                    2 * eps * delta - gamma, inputs=info))
    return checks


# -- seeds and replication ---------------------------------------------------------

def derive_seed(master: int, index: int) -> int:
    """Independent 63-bit seed for replication ``index`` of ``master``."""
    state = np.random.SeedSequence([int(master), int(index)]).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def worker_count(requested: int | None = None) -> int:
    cap = os.environ.get("AGREEMESH_THREADS")
    n = requested or os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ValueError("AGREEMESH_THREADS must be an integer") from None
    return max(1, n)


def replicate(fn, n: int, master_seed: int, workers: int | None = None) -> list:
    """Call ``fn(seed)`` for ``n`` derived seeds; results come back in index order."""
    seeds = [derive_seed(master_seed, i) for i in range(n)]
    w = worker_count(workers)
    if w == 1:
        return [fn(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=w) as pool:
        return list(pool.map(fn, seeds))


# -- Bayesian conversations --------------------------------------------------------

def bayes_pair(prior: PriorTable, utility: UtilitySpec | None = None):
    model = BayesianAgent(prior, "model", utility).bind(1, 2)
    human = BayesianAgent(prior, "human", utility).bind(2, 2)
    return [model, human]


def bayes_condition(eps: float, utility: UtilitySpec | None, d: int) -> AgreementCondition:
    if utility is not None:
        return AgreementCondition("action", eps, utility)
    return AgreementCondition("canonical" if d == 1 else "ddim", eps)


def bayes_transcript(prior: PriorTable, eps: float, days: int, seed: int,
                     utility: UtilitySpec | None = None,
                     max_rounds: int = 10_000, agents=None) -> Transcript:
    """Run ``days`` i.i.d. days of two agents over ``prior`` (Bayesians by default)."""
    rng = np.random.default_rng(seed)
    agents = agents or bayes_pair(prior, utility)
    cond = bayes_condition(eps, utility, prior.d)
    kind = "action" if utility is not None else ("canonical" if prior.d == 1 else "ddim")
    tr = Transcript(setting=SettingDescriptor(kind, prior.d, 2,
                                              utility.to_dict() if utility else None),
                    epsilon=eps)
    for t in range(1, days + 1):
        w = prior.sample(rng)
        res = run_day(agents, cond, t, [prior.xm[w], prior.xh[w]], prior.Y[w], max_rounds)
        tr.days.append(res.day)
        tr.clamped += res.clamped
    return tr


def bayes_one_shot(prior: PriorTable, eps: float, instances: int, seed: int,
                   utility: UtilitySpec | None = None, max_rounds: int = 10_000) -> np.ndarray:
    """Lengths of independent single-day conversations between fresh Bayesians."""
    out = np.empty(instances, dtype=np.int64)
    cond = bayes_condition(eps, utility, prior.d)
    rng = np.random.default_rng(seed)
    for i in range(instances):
        agents = bayes_pair(prior, utility)
        w = prior.sample(rng)
        res = run_day(agents, cond, 1, [prior.xm[w], prior.xh[w]], prior.Y[w], max_rounds)
        conv = res.day.conversation
        out[i] = conv.length if conv.agreed else max_rounds
    return out


# -- run summaries -----------------------------------------------------------------

@dataclass
class RunSummary:
    T: int
    length_counts: dict = field(default_factory=dict)
    round_sizes: dict = field(default_factory=dict)
    non_agreement_days: int = 0
    clamped: int = 0

    def to_dict(self) -> dict:
        return {"T": self.T,
                "length_counts": {str(k): v for k, v in self.length_counts.items()},
                "round_sizes": {str(k): v for k, v in self.round_sizes.items()},
                "non_agreement_days": self.non_agreement_days, "clamped": self.clamped}

    def round_csv(self) -> str:
        lines = ["round,days_reaching"]
        lines.extend(f"{k},{v}" for k, v in sorted(self.round_sizes.items()))
        return "\n".join(lines) + "\n"


def summarize(transcript: Transcript) -> RunSummary:
    L = transcript.lengths()
    counts = np.bincount(L) if L.size else np.zeros(1, dtype=np.int64)
    s = RunSummary(T=transcript.T, clamped=transcript.clamped,
                   non_agreement_days=int((~transcript.agreed()).sum()))
    s.length_counts = {int(k): int(v) for k, v in enumerate(counts) if v}
    reach = np.cumsum(counts[::-1])[::-1]
    s.round_sizes = {int(k): int(reach[k]) for k in range(1, len(counts))}
    return s


__all__ = [
    "TheoremCheck", "aost_rate", "bayes_one_shot", "bayes_transcript",
    "beta_canonical", "corollary_bound", "delta_quantile", "derive_seed",
    "error_improvement_check", "eta_nagent", "gamma_action", "length_quantile_check",
    "monotone_error_check", "replicate", "report_checks", "summarize", "theorem_id",
    "utility_improvement_check", "worker_count",
]
