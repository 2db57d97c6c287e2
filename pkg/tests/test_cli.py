import json

import pytest

from gridvolt.cli import RunConfig, build_parser, main


def strip_comments(path):
    return [line for line in path.read_text().splitlines() if not line.startswith("#")]


@pytest.fixture
def toy_config(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"net": "toy6", "k_range": [2, 3], "train_days": 3, "test_days": 1,
                                "train": {"hidden": [8, 8], "batch_size": 8, "episodes": 2}}))
    return path


def run(*argv):
    return main([str(a) for a in argv])


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit) as exc:
        build_parser().parse_args(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for name in ("partition", "train", "eval", "generate-profiles"):
        assert name in out


def test_partition_scan_rows(tmp_path):
    assert run("partition", "--net", "ieee33", "--k-range", "2..8", "--gamma", "0.01,0.1,1",
               "--out", tmp_path) == 0
    scan = strip_comments(tmp_path / "partition_scan.csv")
    assert scan[0] == "k,gamma,sigma,silhouette,ncut"
    assert len(scan) == 22
    assign = strip_comments(tmp_path / "partition_assignment.csv")
    assert assign[0] == "bus_id,cluster" and len(assign) == 33
    header = (tmp_path / "partition_scan.csv").read_text().splitlines()[:3]
    assert header[0] == "# gridvolt partition"
    assert header[1].startswith("# config_hash=") and header[2] == "# seed=0"


def test_usage_errors(tmp_path, capsys):
    assert run("partition", "--net", "nothere.json", "--out", tmp_path) == 2
    assert "network file not found: nothere.json" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"train": {"gamma": 2.0}}))
    assert run("train", "--config", bad, "--out", tmp_path) == 2
    bad.write_text(json.dumps({"colour": 1}))
    assert run("partition", "--config", bad, "--out", tmp_path) == 2
    with pytest.raises(SystemExit) as exc:
        run("partition", "--k-range", "5..2")
    assert exc.value.code == 2


def test_missing_checkpoint_named(tmp_path, capsys):
    assert run("eval", "--net", "toy6", "--out", tmp_path) == 2
    err = capsys.readouterr().err
    assert str(tmp_path / "independent_td3.ckpt") in err


def test_generate_profiles(tmp_path):
    assert run("generate-profiles", "--net", "toy6", "--kind", "cloud_transient", "--count", 2,
               "--out", tmp_path) == 0
    files = sorted(p.name for p in tmp_path.glob("*.csv"))
    assert files == ["cloud_transient_000.csv", "cloud_transient_001.csv"]
    rows = strip_comments(tmp_path / files[0])
    assert rows[0] == "t,bus_or_pv_id,kind,p_mw,q_mvar"


def test_train_eval_deterministic(tmp_path, toy_config):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert run("train", "--config", toy_config, "--out", out) == 0
        assert run("train", "--config", toy_config, "--baseline", "independent", "--out", out) == 0
        assert run("eval", "--config", toy_config, "--out", out, "--transient") == 0
        outs.append(out)
    a, b = outs
    for fname in ("matd3.ckpt", "independent_td3.ckpt"):
        assert (a / fname).read_bytes() == (b / fname).read_bytes()
    for fname in ("matd3_curve.csv", "results.csv", "stress.csv"):
        assert strip_comments(a / fname) == strip_comments(b / fname)
    results = strip_comments(a / "results.csv")
    assert results[0].endswith(",err_pct")
    assert [r.split(",")[0] for r in results[1:]] == ["original", "independent_td3", "matd3", "oracle"]
    oracle = results[-1].split(",")
    assert float(oracle[-1]) == 0.0
    original = results[1].split(",")
    assert float(original[-1]) == 100.0
    curve = strip_comments(a / "matd3_curve.csv")
    assert curve[0] == "episode,cumulative_reward,mean_critic_loss,wall_ms" and len(curve) == 3
    stress = strip_comments(a / "stress.csv")
    assert stress[0] == "t_s,method,v_pu" and len(stress) == 1 + 5 * 60


def test_resume_extends_run(tmp_path, toy_config):
    out = tmp_path / "r"
    assert run("train", "--config", toy_config, "--out", out) == 0
    first = strip_comments(out / "matd3_curve.csv")
    assert run("train", "--config", toy_config, "--episodes", 4, "--resume", "--out", out) == 0
    resumed = strip_comments(out / "matd3_curve.csv")
    assert len(resumed) == 5
    assert resumed[:3] == first
    assert [r.split(",")[0] for r in resumed[1:]] == ["0", "1", "2", "3"]


def test_digest_ignores_output_location():
    a = RunConfig(out="x", jobs=4)
    b = RunConfig(out="y", jobs=1)
    assert a.digest() == b.digest()
    assert RunConfig(seed=1).digest() != a.digest()
