import csv
import io
import json
import subprocess
from pathlib import Path

import numpy as np
import pytest

from queuetoll.cli import main
from queuetoll.continuum import ContinuumSpec, TruncatedExponential, Uniform, make_allocation
from queuetoll.costs import MM1MeanDelay, MM1TailProbability, PSLoad, Tabulated
from queuetoll.model import SystemSpec
from queuetoll.scenario import Scenario, ScenarioError
from queuetoll.simulator import SimConfig
from reference import EQ_FLOWS, OPT_MEAN_DELAY_SORTED, mean_delay_spec, unsort

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def write(tmp_path, sc: Scenario, name="s.json") -> str:
    p = tmp_path / name
    sc.save(p)
    return str(p)


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def two_by_two(**kw):
    spec = SystemSpec.from_arrays([0.4, 0.4], [2.0, 1.0], [MM1MeanDelay(1.5), MM1MeanDelay(1.5)])
    return Scenario(system=spec, **kw)


# -- scenario format -----------------------------------------------------------


@pytest.mark.parametrize(
    "sc",
    [
        two_by_two(prices=(0.3, 0.0), routing=((0.5, 0.5), (0.25, 0.75)), seed=4, name="x"),
        Scenario(
            system=SystemSpec.from_arrays(
                [0.2, 0.1, 0.3],
                [3.0, 2.0, 1.0],
                [MM1TailProbability(2.0, 0.5), PSLoad(), Tabulated((0.0, 1.0, 2.0), (1.0, 1.5, 3.0))],
                job_sizes=[1.0, 2.0, 0.5],
            ),
            sim=SimConfig(discipline="PS", horizon=100.0, job_size_distribution=("exponential", "deterministic", "exponential")),
            solver={"social_opt": {"restarts": 3}},
        ),
        Scenario(
            system=ContinuumSpec(1.0, TruncatedExponential(0.5, 4.0), (MM1MeanDelay(2.0), MM1MeanDelay(1.0))),
            prices=(0.4, 0.0),
        ),
    ],
)
def test_scenario_round_trip(sc):
    again = Scenario.from_json(sc.to_json())
    assert again == sc
    assert again.to_json() == sc.to_json()


def test_continuum_allocation_round_trip():
    cs = ContinuumSpec(1.0, Uniform(0, 10), (MM1MeanDelay(2.0), MM1MeanDelay(1.2)))
    sc = Scenario(system=cs, routing=make_allocation(cs, [0, 1], [6.0, 0.0]))
    again = Scenario.from_json(sc.to_json())
    assert again.routing.thresholds == (6.0, 0.0)
    np.testing.assert_allclose(again.routing.flows, [0.4, 0.6])


@pytest.mark.parametrize(
    "mutate,msg",
    [
        (lambda d: d.update(version=99), "version"),
        (lambda d: d["system"].update(kind="hybrid"), "kind"),
        (lambda d: d.update(prices=[1.0]), "prices"),
        (lambda d: d.update(routing=[[1.0, 0.0]]), "routing"),
        (lambda d: d["system"].pop("queues"), "malformed"),
        (lambda d: d["system"]["queues"].append({"family": "mystery"}), "family"),
    ],
)
def test_scenario_errors(mutate, msg):
    d = json.loads(two_by_two().to_json())
    mutate(d)
    with pytest.raises(ValueError, match=msg):
        Scenario.from_dict(d)


def test_invalid_json():
    with pytest.raises(ScenarioError, match="JSON"):
        Scenario.from_json("{not json")


@pytest.mark.parametrize("path", sorted(SCENARIOS.glob("*.json")), ids=lambda p: p.name)
def test_shipped_scenarios_load(path):
    sc = Scenario.load(path)
    assert Scenario.from_json(sc.to_json()) == sc


# -- commands ------------------------------------------------------------------


def test_optimize_reference(capsys, tmp_path):
    out = tmp_path / "r.json"
    code, text, _ = run(capsys, "optimize", "--scenario", str(SCENARIOS / "mean_delay_5x5.json"), "--out", str(out))
    assert code == 0
    assert "[optimize]" in text
    rep = json.loads(out.read_text())
    assert rep["summary"]["U"] <= 12.48
    assert rep["summary"]["sorted_queue_order"] == ["Q2", "Q3", "Q1", "Q5", "Q4"]
    assert {r["queue"]: r["sorted_rank"] for r in rep["tables"]["queues"]}["Q4"] == 5


def test_infeasible_scenario_exit_1(capsys, tmp_path):
    d = json.loads(two_by_two().to_json())
    d["system"]["classes"][0]["rate"] = 10.0
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(d))
    code, _, err = run(capsys, "optimize", "--scenario", str(p))
    assert code == 1
    assert "infeasible: total load exceeds capacity" in err


def test_missing_file_and_bad_args(capsys, tmp_path):
    assert run(capsys, "optimize", "--scenario", str(tmp_path / "nope.json"))[0] == 1
    assert run(capsys, "frobnicate", "--scenario", "x")[0] == 1


def test_optimize_with_oracle(capsys, tmp_path):
    out = tmp_path / "r.json"
    code, _, _ = run(capsys, "optimize", "--scenario", write(tmp_path, two_by_two()), "--oracle", "--out", str(out))
    assert code == 0
    s = json.loads(out.read_text())["summary"]
    assert abs(s["oracle_delta"]) <= 6e-3
    assert s["U"] == pytest.approx(s["oracle_U"] + s["oracle_delta"])


def test_optimize_nonconvergence_exit_2(capsys, tmp_path):
    sc = Scenario(system=mean_delay_spec(), solver={"social_opt": {"max_iters": 1, "restarts": 1}})
    assert run(capsys, "optimize", "--scenario", write(tmp_path, sc))[0] == 2


def test_equilibrium_reference(capsys, tmp_path):
    out = tmp_path / "e.csv"
    code, _, _ = run(
        capsys, "equilibrium", "--scenario", str(SCENARIOS / "mean_delay_5x5_wardrop.json"),
        "--out", str(out), "--format", "csv",
    )
    assert code == 0
    text = out.read_text()
    body = "\n".join(l for l in text.splitlines() if not l.startswith("#"))
    rows = list(csv.DictReader(io.StringIO(body)))
    gamma = [float(r["gamma"]) for r in rows]
    np.testing.assert_allclose(gamma, EQ_FLOWS, atol=0.03)
    assert "# residual=" in text


def test_equilibrium_single_queue(capsys, tmp_path):
    sc = Scenario(system=SystemSpec.from_arrays([0.5], [1.0], [MM1MeanDelay(1.0)]), prices=(1.0,))
    out = tmp_path / "e.json"
    assert run(capsys, "equilibrium", "--scenario", write(tmp_path, sc), "--out", str(out))[0] == 0
    assert json.loads(out.read_text())["summary"]["residual"] == 0.0


def test_equilibrium_continuum(capsys, tmp_path):
    out = tmp_path / "e.json"
    code, _, _ = run(capsys, "equilibrium", "--scenario", str(SCENARIOS / "continuum_uniform.json"), "--out", str(out))
    assert code == 0
    assert json.loads(out.read_text())["summary"]["residual"] <= 1e-8


def test_equilibrium_needs_prices(capsys, tmp_path):
    code, _, err = run(capsys, "equilibrium", "--scenario", write(tmp_path, two_by_two()))
    assert code == 1 and "no prices" in err


def test_prices_reference(capsys, tmp_path):
    out = tmp_path / "p.json"
    code, _, _ = run(capsys, "prices", "--scenario", str(SCENARIOS / "mean_delay_5x5.json"), "--out", str(out))
    assert code == 0
    s = json.loads(out.read_text())["summary"]
    np.testing.assert_allclose(s["prices_sorted"], [3.28, 2.77, 2.194, 1.59, 1.27], atol=0.02)
    assert s["certified"]


def test_prices_solve_round_trip(capsys, tmp_path):
    out = tmp_path / "p.json"
    code, _, _ = run(capsys, "prices", "--scenario", write(tmp_path, two_by_two()), "--solve", "--out", str(out))
    assert code == 0
    s = json.loads(out.read_text())["summary"]
    assert s["certified"] and s["residual"] <= 1e-6


def test_prices_continuum_solve(capsys, tmp_path):
    cs = ContinuumSpec(1.0, Uniform(0, 10), (MM1MeanDelay(2.0), MM1MeanDelay(1.2)))
    out = tmp_path / "p.json"
    code, _, _ = run(capsys, "prices", "--scenario", write(tmp_path, Scenario(system=cs)), "--solve", "--out", str(out))
    assert code == 0
    assert json.loads(out.read_text())["summary"]["certified"]


def test_prices_without_routing(capsys, tmp_path):
    code, _, err = run(capsys, "prices", "--scenario", write(tmp_path, two_by_two()))
    assert code == 1 and "--solve" in err


def test_verify_reference_passes_and_swap_fails(capsys, tmp_path):
    P = unsort(OPT_MEAN_DELAY_SORTED)
    good = Scenario(system=mean_delay_spec(), routing=P, solver={"verify_tol": 1e-6})
    assert run(capsys, "verify", "--scenario", write(tmp_path, good))[0] == 0
    bad_P = P.copy()
    # swap the routing rows of the most and least sensitive classes
    bad_P[[0, 4]] = bad_P[[4, 0]]
    bad = Scenario(system=mean_delay_spec(), routing=bad_P)
    code, text, _ = run(capsys, "verify", "--scenario", write(tmp_path, bad, "bad.json"))
    assert code == 2 and "passed: False" in text


def test_verify_single_queue(capsys, tmp_path):
    sc = Scenario(system=SystemSpec.from_arrays([0.5], [1.0], [MM1MeanDelay(1.0)]), routing=((1.0,),), prices=(0.0,))
    assert run(capsys, "verify", "--scenario", write(tmp_path, sc))[0] == 0


def test_simulate_with_seed_override(capsys, tmp_path):
    sc = two_by_two(routing=((1.0, 0.0), (0.0, 1.0)), sim=SimConfig(horizon=2e3, replications=2), seed=1)
    path = write(tmp_path, sc)
    outs = []
    for seed in ("7", "7", "8"):
        out = tmp_path / f"sim{len(outs)}.json"
        assert run(capsys, "simulate", "--scenario", path, "--seed", seed, "--out", str(out))[0] == 0
        outs.append(json.loads(out.read_text())["summary"])
    assert outs[0]["seed"] == 7
    assert outs[0]["U"] == outs[1]["U"] != outs[2]["U"]


def test_simulate_csv_marks_unused_queue(capsys, tmp_path):
    sc = two_by_two(routing=((1.0, 0.0), (1.0, 0.0)), sim=SimConfig(horizon=500.0, replications=2))
    out = tmp_path / "sim.csv"
    assert run(capsys, "simulate", "--scenario", write(tmp_path, sc), "--out", str(out), "--format", "csv")[0] == 0
    assert "no samples" in out.read_text()


def test_simulate_requires_config(capsys, tmp_path):
    code, _, err = run(capsys, "simulate", "--scenario", write(tmp_path, two_by_two(routing=((1.0, 0.0), (1.0, 0.0)))))
    assert code == 1 and "sim" in err


def test_text_output_six_significant_digits(capsys, tmp_path):
    code, text, _ = run(capsys, "optimize", "--scenario", write(tmp_path, two_by_two()))
    assert code == 0
    line = next(l for l in text.splitlines() if l.strip().startswith("U:"))
    assert len(line.split(":")[1].strip().replace(".", "").lstrip("0")) <= 6


def test_console_script():
    res = subprocess.run(
        ["queuetoll", "verify", "--scenario", str(SCENARIOS / "mean_delay_5x5_wardrop.json")],
        capture_output=True, text=True,
    )
    assert res.returncode == 0, res.stderr
    assert "wardrop_residual" in res.stdout
