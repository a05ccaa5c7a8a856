import json
from pathlib import Path

import pytest
import yaml
from click.testing import CliRunner

from inflatereg.harness import acceptance
from inflatereg.harness.cli import main
from inflatereg.harness.config import SCENARIOS, ConfigError, ExperimentConfig
from inflatereg.harness.scenarios import run_scenario

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

SMALL = {
    "scenario": "inflation",
    "n": 20,
    "replicates": 12,
    "seed": 5,
    "spectrum": {"constructor": "block", "params": {"d": 2000, "q": 0.1}},
    "beta": {"kind": "topk"},
    "params": {"z_inflation": 1.0, "ratio_max": 0.9},
}

TINY = {
    "ridge_sweep": {"n": 10, "spectrum": {"constructor": "isotropic", "params": {"d": 20}},
                    "beta": {"kind": "topk"}, "noise": {"kind": "gaussian", "sigma": 1.0}},
    "data_split": {"n": 36, "spectrum": {"constructor": "block", "params": {"d": 3600, "q": 0.1}},
                   "beta": {"kind": "topk"}, "noise": {"kind": "gaussian", "sigma": 0.5}},
    "spiked": {"n": 20, "params": {"d": 400, "spike": 2.0, "ratio": 2.0}},
    "unbiased_divergence": {"n": 10, "noise": {"kind": "gaussian", "sigma": 1.0},
                            "params": {"q": 0.125, "dn_ratios": [10, 100]}},
    "direction_shrink": {"n": 10, "params": {"q": 0.05, "dn_ratio": 100, "c": 0.5}},
    "theory_check": {"n": 10, "spectrum": {"constructor": "block",
                                           "params": {"d": 1000, "q": 0.1}},
                     "beta": {"kind": "topk"}, "noise": {"kind": "gaussian", "sigma": 1.0}},
    "moments_check": {"params": {"dim": 4, "draws": 20_000}},
}


def _write(tmp_path: Path, data: dict, name: str = "cfg.yaml") -> Path:
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    return path


def test_config_round_trip() -> None:
    cfg = ExperimentConfig.from_dict(SMALL)
    text = cfg.to_yaml()
    again = ExperimentConfig.from_yaml(text)
    assert again.to_yaml() == text
    assert again.spectrum["params"]["n"] == 20
    assert again.beta["k"] == 20


@pytest.mark.parametrize("bad", [
    {**SMALL, "replicates": 1},
    {**SMALL, "scenario": "nope"},
    {**SMALL, "bogus": 3},
    {**SMALL, "beta": {"kind": "custom"}},
    {**SMALL, "noise": {"kind": "heteroscedastic", "sigma": 1.0}},
    {**SMALL, "c_grid": {"policy": "explicit", "values": [1.0, 0.5]}},
    {"scenario": "moments_check", "params": {"dim": 3}},
])
def test_config_validation_errors(bad) -> None:
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(bad)


def test_shipped_configs_load() -> None:
    paths = sorted(CONFIG_DIR.glob("*.yaml"))
    assert {ExperimentConfig.load(p).scenario for p in paths} == set(SCENARIOS)


def test_inflation_report_contents() -> None:
    rep = run_scenario(ExperimentConfig.from_dict(SMALL), threads=1)
    summary = rep.results["summary"]
    for key in ("G_1", "G_c_hat", "G_ratio", "c_hat", "c_hat_se"):
        assert key in summary
    assert "prediction" in rep.theory
    assert {v.check_id for v in rep.verdicts} == {"c_hat_above_1", "risk_ratio", "prediction"}
    for v in rep.to_dict()["verdicts"]:
        assert {"check_id", "measured", "required", "passed"} <= set(v)


@pytest.mark.parametrize("scenario", sorted(TINY))
def test_every_scenario_runs(scenario) -> None:
    cfg = ExperimentConfig.from_dict({"scenario": scenario, "replicates": 6, "seed": 1,
                                      **TINY[scenario]})
    rep = run_scenario(cfg, threads=1)
    assert rep.verdicts
    json.loads(rep.to_json())


def test_moments_scenario_passes() -> None:
    cfg = ExperimentConfig.from_dict({"scenario": "moments_check", "replicates": 2,
                                      "params": {"dim": 5, "draws": 200_000}})
    assert run_scenario(cfg).passed


def test_determinism_across_threads() -> None:
    def stripped(threads):
        d = run_scenario(ExperimentConfig.from_dict(SMALL), threads=threads).to_dict()
        d.pop("timing")
        return json.dumps(d, sort_keys=True)

    assert stripped(1) == stripped(3)


def test_failure_injection_continues() -> None:
    rep = run_scenario(ExperimentConfig.from_dict(SMALL), threads=2, fail_ids=[4])
    assert rep.failures["replicates"] == 1
    assert rep.results["summary"]["replicates"] == SMALL["replicates"] - 1
    assert rep.results["summary"]["failed_ids"] == [4]


def test_output_layout(tmp_path) -> None:
    rep = run_scenario(ExperimentConfig.from_dict(SMALL), out_dir=tmp_path, dump_design=True)
    out = tmp_path / "inflation-5"
    assert (out / "report.json").exists()
    raw = (out / "inflation.csv").read_bytes()
    assert raw.startswith(b"control,mean,se\r\n")
    assert (out / "design-0.csv").read_bytes().startswith(b"x0,x1,")
    data = json.loads((out / "report.json").read_text(encoding="utf-8"))
    assert data["passed"] == rep.passed
    assert list(data) == sorted(data)


def test_invalid_config_writes_nothing(tmp_path) -> None:
    cfg = ExperimentConfig.from_dict(SMALL)
    cfg.replicates = 1
    with pytest.raises(ConfigError):
        run_scenario(cfg, out_dir=tmp_path)
    assert not any(tmp_path.iterdir())


def test_cli_exit_codes(tmp_path) -> None:
    runner = CliRunner()
    good = _write(tmp_path, SMALL)
    res = runner.invoke(main, ["run", "--config", str(good), "--out", str(tmp_path / "o"),
                               "--threads", "1"])
    assert res.exit_code == 0, res.output
    assert "[PASS] c_hat_above_1" in res.output
    assert (tmp_path / "o" / "inflation-5" / "report.json").exists()

    bad = _write(tmp_path, {**SMALL, "replicates": 1}, "bad.yaml")
    res = runner.invoke(main, ["run", "--config", str(bad)])
    assert res.exit_code == 2
    assert "replicates" in res.output

    failing = _write(tmp_path, {**SMALL, "params": {"ratio_max": 0.0}}, "fail.yaml")
    res = runner.invoke(main, ["run", "--config", str(failing), "--out", str(tmp_path / "f")])
    assert res.exit_code == 1
    assert "[FAIL] risk_ratio" in res.output

    missing = runner.invoke(main, ["run", "--config", str(tmp_path / "absent.yaml")])
    assert missing.exit_code == 2


def test_cli_env_output_dir(tmp_path) -> None:
    runner = CliRunner(env={"INFLATEREG_OUT": str(tmp_path / "env")})
    res = runner.invoke(main, ["run", "--config", str(_write(tmp_path, SMALL)),
                               "--seed", "9"])
    assert res.exit_code == 0, res.output
    assert (tmp_path / "env" / "inflation-9" / "report.json").exists()


def test_cli_list_scenarios() -> None:
    res = CliRunner().invoke(main, ["list-scenarios"])
    assert res.exit_code == 0
    assert [line.split()[0] for line in res.output.splitlines()] == list(SCENARIOS)


def test_cli_accept_subset(tmp_path) -> None:
    res = CliRunner().invoke(main, ["accept", "--only", "12", "--out", str(tmp_path),
                                    "--threads", "1"])
    assert res.exit_code == 0, res.output
    assert "[PASS] criterion 12" in res.output
    out = tmp_path / "acceptance-fast-0"
    block = json.loads((out / "verdicts.json").read_text())
    assert [c["id"] for c in block["criteria"]] == [12]
    assert "timing" in json.loads((out / "summary.json").read_text())


def test_verdict_json_byte_identical() -> None:
    first = acceptance.run_acceptance_suite("fast", 3, threads=1, only=[1, 12])
    second = acceptance.run_acceptance_suite("fast", 3, threads=2, only=[1, 12])
    assert first.verdict_json() == second.verdict_json()
    assert [r.cid for r in first.results] == [1, 12]


def test_estimator_invariants_small() -> None:
    counts = acceptance.estimator_invariants(20, 0)
    assert counts and all(v == 20 for v in counts.values()), counts
