import json
import math

import numpy as np
import pytest
from scipy.stats import ks_2samp

from agreemesh import harness as H
from agreemesh.agents import PriorTable
from agreemesh.cli import main
from agreemesh.core import (ActionMessage, Conversation, Day, SettingDescriptor, Transcript,
                            read_transcript)
from agreemesh.utility import UtilitySpec

from conftest import lengths_transcript, make_transcript

CONFIG = {"setting": "canonical", "epsilon": 0.2, "days": 200, "seed": 3,
          "agents": [{"kind": "converse", "g": 0.2}, {"kind": "converse", "g": 0.2}],
          "outcome_source": {"kind": "drift", "weights": [1.0, 2.0]}}


# -- quantile checks ------------------------------------------------------------

def test_quantile_examples():
    assert H.length_quantile_check([2] * 50, 0.1, 0.1, bound=10).status == H.PASS
    lengths = [2] * 90 + [50] * 10
    c = H.length_quantile_check(lengths, 0.1, 0.1, bound=10)
    assert c.status == H.PASS and c.observed == 2
    c = H.length_quantile_check(lengths, 0.1, 0.05, bound=10)
    assert c.status == H.FAIL and c.observed == 50
    with pytest.raises(ValueError):
        H.length_quantile_check([], 0.1, 0.1, bound=10)


def test_corollary_bounds_recomputed():
    assert H.corollary_bound("canonical", 0.2, 0.2)[1] == pytest.approx(250)
    assert H.corollary_bound("canonical", 0.25, 0.25)[1] == pytest.approx(128)
    assert H.corollary_bound("d-dim", 0.25, 0.25, d=4)[1] == pytest.approx(512)
    assert H.corollary_bound("action", 0.2, 0.2)[1] == pytest.approx(26)
    assert H.corollary_bound("n-agent", 0.3, 0.3, n=3)[1] == pytest.approx(6 / 0.027)
    assert H.corollary_bound("bayes-full", 0.2, 0.2)[1] == pytest.approx(375)
    assert H.corollary_bound("bayes-action", 0.2, 0.2)[1] == pytest.approx(38.5)
    with pytest.raises(ValueError):
        H.corollary_bound("nope", 0.1, 0.1)


def test_error_terms():
    T, g = 1000, 0.1
    f = H.aost_rate
    assert H.beta_canonical(T, g, g) == pytest.approx(3 * (2 * g + 2 * f(100) / 100))
    assert H.beta_canonical(T, g, g, d=3) == pytest.approx(3 * H.beta_canonical(T, g, g))
    assert H.eta_nagent(T, 3, g) == pytest.approx(3 * (3 * g + 6 * f(100) / 100))
    lin = lambda tau: tau ** 0.5
    assert H.gamma_action(900, 1.0, 2, 3, lin, lin) == pytest.approx(4 * 2 * 9 * 10 / 900)


def test_checks_record_both_sides():
    c = H.length_quantile_check([3, 4], 0.5, 0.5)
    d = c.to_dict()
    assert d["observed"] == 3 and d["bound"] == pytest.approx(16)
    assert d["formula"] == "2/(eps^2 delta)" and d["slack"] == pytest.approx(13)
    assert "[PASS]" in c.line()


# -- improvement checks ---------------------------------------------------------

def _improving_transcript():
    # four rounds every day; round 4 predicts the outcome exactly
    rng = np.random.default_rng(0)
    days = []
    for _ in range(10):
        y = float(rng.random() < 0.5)
        days.append(([0.5, 0.5, 0.5, y], y))
    return make_transcript(days)


def test_error_improvement_examples():
    assert H.error_improvement_check(lengths_transcript([2] * 10), 4, 0.1, 0.01).status == \
        H.NOT_APPLICABLE
    tr = _improving_transcript()
    c = H.error_improvement_check(tr, 4, 0.5, 0.05)
    assert c.status == H.PASS and c.bound == pytest.approx(0.25 - 4 * 0.05)
    assert H.error_improvement_check(tr, 4, 0.5, -0.01).status == H.VACUOUS
    assert H.monotone_error_check(tr, 4, 0.5).status == H.PASS
    worse = make_transcript([([0.5, 0.5, 0.5, 1 - y], y) for y in (0.0, 1.0)])
    assert H.monotone_error_check(worse, 4, 0.5).status == H.FAIL


def _action_days(rows):
    U = UtilitySpec.coordinate_pick(2)
    tr = Transcript(setting=SettingDescriptor("action", 2, 2, U.to_dict()), epsilon=0.1)
    for acts, y in rows:
        conv = Conversation()
        for a in acts:
            conv.append(ActionMessage(a), [0.5, 0.5])
        tr.days.append(Day(conv, tuple(y)))
    return tr, U


def test_utility_improvement_examples():
    tr, U = _action_days([((0, 0), (0.0, 1.0))] * 10)
    assert H.utility_improvement_check(tr, U, 4, 0.1, 0.01).status == H.NOT_APPLICABLE
    tr, U = _action_days([((0, 0, 1, 1), (0.0, 1.0))] * 10)
    c = H.utility_improvement_check(tr, U, 4, 0.5, 0.2)
    assert c.status == H.PASS and c.observed == 10 and c.bound == pytest.approx(0 + 3 * 10 * 0.2)
    assert H.utility_improvement_check(tr, U, 4, 0.5, -1).status == H.VACUOUS
    assert H.utility_improvement_check(tr, U, 4, 0.5, 0.5).status == H.FAIL


# -- replication -------------------------------------------------------------------

def test_derive_seed_stable_and_distinct():
    seeds = [H.derive_seed(42, i) for i in range(100)]
    assert len(set(seeds)) == 100 and seeds == [H.derive_seed(42, i) for i in range(100)]


def test_replicate_order_independent_of_threads(monkeypatch):
    fn = lambda s: s % 1000
    monkeypatch.setenv("AGREEMESH_THREADS", "1")
    one = H.replicate(fn, 20, 5)
    monkeypatch.setenv("AGREEMESH_THREADS", "4")
    assert H.replicate(fn, 20, 5, workers=4) == one
    monkeypatch.setenv("AGREEMESH_THREADS", "x")
    with pytest.raises(ValueError):
        H.worker_count()


def test_one_shot_matches_within_run_distribution():
    prior = PriorTable.generate(16, np.random.default_rng(101))
    day1 = H.replicate(lambda s: int(H.bayes_transcript(prior, 0.1, 1, s).lengths()[0]),
                       500, 7)
    within = H.bayes_transcript(prior, 0.1, 500, 8).lengths()
    assert ks_2samp(day1, within).statistic < 0.1


def test_summary():
    tr = lengths_transcript([2, 2, 3, 5])
    s = H.summarize(tr)
    assert s.length_counts == {2: 2, 3: 1, 5: 1}
    assert s.round_sizes == {1: 4, 2: 4, 3: 2, 4: 1, 5: 1}
    assert s.round_csv().splitlines()[0] == "round,days_reaching"


# -- CLI -----------------------------------------------------------------------------

def test_cli_simulate_missing_config(capsys):
    assert main(["simulate", "missing.json"]) == 2
    assert "missing.json" in capsys.readouterr().err


def test_cli_bad_config(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(dict(CONFIG, extra=1)))
    assert main(["simulate", str(path)]) == 2
    assert "unknown config fields" in capsys.readouterr().err
    assert main(["report", "x.jsonl", "--check", "canonical", "--eps", "0.2",
                 "--delta", "1.5"]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["simulate"])
    assert exc.value.code == 2


def test_cli_pipeline(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(CONFIG))
    out1, out2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert main(["simulate", str(cfg), "--out", str(out1),
                 "--metrics", str(tmp_path / "m")]) == 0
    assert main(["simulate", str(cfg), "--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()
    assert json.loads((tmp_path / "m.json").read_text())["T"] == 200
    capsys.readouterr()

    assert main(["report", str(out1), "--check", "canonical", "--eps", "0.2",
                 "--delta", "0.2"]) in (0, 1)
    text = capsys.readouterr().out
    assert "bound 250 from 2/(eps^2 delta)" in text
    q = H.delta_quantile(read_transcript(out1).lengths(), 0.2)
    assert f"observed {q} " in text

    assert main(["audit", str(out1), "--side", "model", "--mode", "scalar"]) == 0
    csv = capsys.readouterr().out
    assert csv.startswith("round,event,coord,count,bias,ece,caldist_upper,caldist_exact\n")


def test_cli_report_exit_codes(tmp_path, capsys):
    prior = {"worlds": [{"xh": "0", "xm": "0", "y": [0.0], "p": 0.5},
                        {"xh": "0", "xm": "1", "y": [1.0], "p": 0.5}]}
    good = dict(CONFIG, agents=[{"kind": "bayes"}, {"kind": "bayes"}],
                outcome_source={"kind": "prior", "prior": prior})
    bad = dict(CONFIG, days=30, max_rounds=300,
               agents=[{"kind": "constant", "value": [0.5]}, {"kind": "always-disagree"}])
    for name, cfg, code in (("good", good, 0), ("bad", bad, 1)):
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps(cfg))
        out = tmp_path / f"{name}.jsonl"
        assert main(["simulate", str(path), "--out", str(out)]) == 0
        assert main(["report", str(out), "--check", "canonical", "--eps", "0.2",
                     "--delta", "0.2", "--max-rounds", "300"]) == code
    assert "[FAIL] canonical: observed 300 vs bound 250" in capsys.readouterr().out


def test_cli_prior_and_bayes(tmp_path, capsys):
    path = tmp_path / "p.json"
    assert main(["gen-prior", "--worlds", "16", "--seed", "4", "--out", str(path)]) == 0
    assert len(PriorTable.load(path).worlds) == 16
    assert main(["bayes", str(path), "--eps", "0.2", "--delta", "0.2",
                 "--instances", "50", "--json"]) == 0
    rec = json.loads(capsys.readouterr().out)[0]
    assert rec["inputs"]["bound_rounds"] == pytest.approx(375)
    assert main(["gen-prior", "--worlds", "4", "--seed", "1", "--d", "2", "--outcome",
                 "onehot", "--out", str(path)]) == 0
    assert main(["bayes", str(path), "--eps", "0.2", "--delta", "0.2", "--instances", "20",
                 "--setting", "action"]) == 0
    assert main(["audit", str(path), "--side", "model"]) == 2


def test_cli_decision_audit(tmp_path, capsys):
    cfg = {"setting": "action", "epsilon": 0.2, "days": 60, "seed": 1, "d": 2,
           "utility": {"actions": ["a", "b"], "matrix": [[1, 0], [0, 1]]},
           "agents": [{"kind": "converse-action"}, {"kind": "converse-action"}],
           "outcome_source": {"kind": "drift", "weights": [1.0, 2.0],
                              "outcome": "categorical"}}
    path = tmp_path / "a.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / "a.jsonl"
    assert main(["simulate", str(path), "--out", str(out)]) == 0
    assert main(["audit", str(out), "--side", "human", "--mode", "decision"]) == 0
    assert "a=" in capsys.readouterr().out
    assert main(["report", str(out), "--check", "action", "--eps", "0.2",
                 "--delta", "0.2"]) in (0, 1)
    assert main(["audit", str(out), "--side", "human", "--mode", "scalar"]) == 2
