import shlex

import pytest

from conftest import DATA, helper
from imtest.cli import ConfigError, RunConfig, load_model, main, read_config_file, run_from_config

T1 = str(DATA / "t1.mdp")
AA = str(DATA / "t1_aa.policy")


def run(*args):
    return main([str(a) for a in args])


def test_imt_on_t1(tmp_path):
    out = tmp_path / "out"
    assert run("imt", "--model", T1, "--policy", AA, "--delta", 0.9, "--epsilon", 0.001, "--m", 1, "--out", out) == 0
    rows = (out / "iterations.csv").read_text().splitlines()
    assert rows[-1].split(",")[2] == "0"
    assert {p.name for p in out.iterdir()} == {"iterations.csv", "final_verdicts.csv", "estimates.csv", "report.txt"}


def test_grid_run_writes_heatmaps_and_figures(tmp_path):
    out = tmp_path / "g"
    assert run("imt", "--model", "builtin:slippery7x7", "--policy", "cautious", "--out", out) == 0
    names = {p.name for p in out.iterdir()}
    assert "verdicts_iter_0_o0.ppm" in names and "verdicts_iter_0.png" in names
    out2 = tmp_path / "g2"
    assert run("imt", "--model", "builtin:slippery7x7", "--policy", "cautious", "--no-figures", "--out", out2) == 0
    assert not any(p.suffix == ".png" for p in out2.iterdir())


@pytest.mark.parametrize("mode", ["mt", "imtc"])
def test_other_modes(tmp_path, mode):
    model = "corridor:length=8,width=5,tilts=3,velocities=1,obstacles=2:4/3:6"
    assert run(mode, "--model", model, "--policy", "const:straight", "--delta", 0.9, "--n-test" if mode == "imtc" else "--seed",
               5 if mode == "imtc" else 2, "--out", tmp_path) == 0
    header = (tmp_path / "iterations.csv").read_text().splitlines()[0]
    assert header.endswith("implied_failure") == (mode == "imtc")


def test_rt_zero_budget(tmp_path):
    assert run("rt", "--model", T1, "--policy", AA, "--budget", 0, "--out", tmp_path) == 0
    assert (tmp_path / "rt_results.csv").read_text() == "episode,start_state,name,violated\n"


def test_rt_counts_violations(tmp_path):
    assert run("rt", "--model", T1, "--policy", str(DATA / "t1_ba.policy"), "--budget", 50, "--seed", 3,
               "--out", tmp_path) == 0
    assert "violations:" in (tmp_path / "report.txt").read_text()


def test_missing_policy_file(tmp_path):
    out = tmp_path / "o"
    assert run("imt", "--model", T1, "--policy", tmp_path / "none.policy", "--out", out) == 1
    assert not out.exists()


@pytest.mark.parametrize("args", [
    ["imt", "--model", str(DATA / "malformed" / "unknown_directive.mdp"), "--policy", AA],
    ["imt", "--model", str(DATA / "malformed" / "row_sum.mdp"), "--policy", AA],
    ["imt", "--model", "grid:" + str(DATA / "malformed" / "ragged.txt"), "--policy", "cautious"],
    ["imt", "--model", T1, "--policy", str(DATA / "malformed" / "duplicate_state.policy")],
    ["imt", "--model", T1, "--policy", AA, "--horizon", "soon"],
    ["imt", "--model", T1, "--policy", AA, "--delta", "1.5"],
    ["imtc", "--model", T1, "--policy", AA, "--objective", "performance"],
    ["imt", "--model", T1],
    ["imt", "--model", T1, "--policy", AA, "--unknown-flag"],
    ["bogus"],
])
def test_usage_and_config_errors(tmp_path, args):
    out = tmp_path / "o"
    assert main(args + ["--out", str(out)]) == 1
    assert not (out / "iterations.csv").exists()


def test_help_exits_zero(capsys):
    assert main(["imt", "--help"]) == 0
    assert "--delta-i" not in capsys.readouterr().out
    assert main(["imtc", "--help"]) == 0
    assert "--delta-i" in capsys.readouterr().out


def test_adapter_failure_exit_code(tmp_path):
    cmd = "cmd:" + shlex.join(helper("exits_after.py", 0))
    assert run("imt", "--model", T1, "--policy", cmd, "--out", tmp_path) == 2
    assert "termination: aborted" in (tmp_path / "report.txt").read_text()


def test_handshake_failure_exit_code(tmp_path):
    cmd = "cmd:" + shlex.join(helper("bad_version.py"))
    assert run("imt", "--model", T1, "--policy", cmd, "--out", tmp_path) == 2


def test_external_policy_run(tmp_path):
    cmd = "cmd:" + shlex.join(helper("table_policy.py", "0=0", "1=0"))
    assert run("imt", "--model", T1, "--policy", cmd, "--delta", 0.9, "--out", tmp_path) == 0
    assert "safe states: 3" in (tmp_path / "report.txt").read_text()


def test_non_convergence_exit_code(tmp_path, monkeypatch):
    import imtest.checker as checker
    monkeypatch.setattr(checker.max_min_and_q, "__kwdefaults__", {"tol": checker.DEFAULT_TOLERANCE, "max_iterations": 1})
    model = tmp_path / "slow.mdp"
    model.write_text("states 3\nactions a\nlabel 1 bad\n0 a 0 0.5\n0 a 1 0.25\n0 a 2 0.25\n1 a 1 1\n2 a 2 1\n")
    assert run("imt", "--model", model, "--policy", "const:a", "--out", tmp_path / "o") == 3


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# comment\nmodel = {T1}\npolicy = {AA}\ndelta = 0.9\nm = 1\nepsilon = 0.001\nhorizon = inf\n")
    assert read_config_file(cfg)["m"] == 1
    out = tmp_path / "o"
    assert run("imt", "--config", cfg, "--m", 2, "--out", out) == 0
    assert "m: 2" in (out / "report.txt").read_text()


def test_config_file_errors(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = blue\n")
    with pytest.raises(ConfigError):
        read_config_file(cfg)
    cfg.write_text("just words\n")
    with pytest.raises(ConfigError):
        read_config_file(cfg)
    assert run("imt", "--config", cfg, "--out", tmp_path / "o") == 1


def test_run_config_validation():
    assert run_from_config(RunConfig("imt", T1, AA, m=0)) == 1


def test_model_specs():
    assert load_model("builtin:oneway5x5").num_states == 84
    assert load_model("random:seed=2,states=5,actions=2,branching=2").num_states == 5
    assert load_model("file:" + T1).num_states == 4
    with pytest.raises(ConfigError):
        load_model("corridor:length")


def test_deterministic_output(tmp_path):
    args = ["mt", "--model", "builtin:slippery7x7", "--policy", "const:forward", "--seed", "7", "--no-figures"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("iterations.csv", "final_verdicts.csv", "estimates.csv", "report.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
