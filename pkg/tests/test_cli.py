import json
import subprocess
import sys

import pytest

from dltreport.cli import main

SMALL = ["--banks", "3", "--jurisdictions", "2", "--blocks", "40", "--txs-per-block", "4"]


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "seed-1"
    assert main(["generate", "--seed", "1", "--out", str(out), *SMALL]) == 0
    return out


def test_generate_twice_is_identical(tmp_path, data):
    again = tmp_path / "again"
    assert main(["generate", "--seed", "1", "--out", str(again), *SMALL]) == 0
    for name in ("events.ndjson", "registry.json", "scenario.json", "tokens.json"):
        assert (again / name).read_bytes() == (data / name).read_bytes()


def test_run_composer_resumes(tmp_path, capsys):
    d = tmp_path / "d"
    main(["generate", "--out", str(d), *SMALL])
    assert main(["run-composer", "--data", str(d)]) == 0
    first = capsys.readouterr().out
    assert main(["run-composer", "--data", str(d), "--batch-size", "5"]) == 0
    second = capsys.readouterr().out
    assert not first.startswith("appended 0 ") and second.startswith("appended 0 ")
    assert (d / "warehouse_state.json").exists()


def test_pull_in_process(data, capsys):
    assert main(["pull", "--data", str(data), "--token", "t-eba", "--template", "OWN_FUNDS_MINI",
                 "--scope-level", "SUPRANATIONAL"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["as_of_height"] == 39 and doc["report"]["template_id"] == "OWN_FUNDS_MINI"


def test_pull_bad_token(data, capsys):
    assert main(["pull", "--data", str(data), "--token", "wrong", "--path", "/head"]) == 1
    assert capsys.readouterr().out.startswith("401 UNKNOWN_TOKEN")


def test_pull_forbidden(data, capsys):
    assert main(["pull", "--data", str(data), "--token", "t-eba", "--records"]) == 1
    assert capsys.readouterr().out.startswith("403 UNAUTHORIZED_SCOPE")


def test_oracle_command(data, capsys):
    assert main(["oracle", "--data", str(data), "--template", "LIQUIDITY_MINI", "--period-end", "30"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc  # non-empty mapping of scope -> instance


def test_usage_errors_exit_2():
    for argv in (["bogus"], [], ["generate", "--seed", "x"], ["compare", "--seeds", "1-x"]):
        with pytest.raises(SystemExit) as exc:
            code = main(argv)
            raise SystemExit(code)
        assert exc.value.code == 2, argv


def test_missing_data_dir_exit_2(tmp_path):
    assert main(["run-composer", "--data", str(tmp_path / "nope")]) == 2


def test_compare_and_latency(capsys):
    assert main(["compare", "--seed", "2", "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["verdict"] == "PASS"
    assert main(["compare", "--seed", "2", "--drop-every", "10"]) == 1
    assert "verdict: FAIL" in capsys.readouterr().out
    assert main(["latency", "--seed", "1"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["pull"]["mean_lag_blocks"] <= 1


def test_serve_and_pull_over_http(data):
    proc = subprocess.Popen([sys.executable, "-m", "dltreport", "serve", "--data", str(data),
                             "--listen", "127.0.0.1:0"], stdout=subprocess.PIPE, text=True)
    try:
        line = proc.stdout.readline()
        url = line.split()[4]
        assert url.startswith("http://127.0.0.1:")
        ok = subprocess.run([sys.executable, "-m", "dltreport", "pull", "--url", url, "--token", "t-operator",
                             "--path", "/head"], capture_output=True, text=True)
        assert ok.returncode == 0 and json.loads(ok.stdout)["head"] == 39
        bad = subprocess.run([sys.executable, "-m", "dltreport", "pull", "--url", url, "--token", "nope",
                              "--path", "/head"], capture_output=True, text=True)
        assert bad.returncode == 1 and bad.stdout.startswith("401")
    finally:
        proc.terminate()
        proc.wait(timeout=10)
