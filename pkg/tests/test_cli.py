import json

import pytest

from cflil import cli


def _run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_list_presets(capsys):
    code, out, _ = _run(["--list-presets"], capsys)
    lines = [l for l in out.splitlines() if l.strip()]
    assert code == 0 and len(lines) == 3
    dexp = [l for l in lines if l.startswith("doubly_exponential")][0]
    assert "dimension < 1/2, condition fails" in dexp
    for l in lines:
        assert "sum 1/alpha_n" in l and "condition" in l


def test_condition_geometric(tmp_path, capsys):
    code, out, _ = _run(["--preset", "geometric", "--experiment", "condition",
                         "--out", str(tmp_path)], capsys)
    assert code == 0
    assert out.splitlines()[0] == "satisfied"
    doc = json.loads((tmp_path / "condition.json").read_text())
    assert doc["config"]["family.kind"] == "geometric"
    assert all(r["pass"] for r in doc["reports"])


def test_condition_negative_control_exits_one(tmp_path, capsys):
    code, out, _ = _run(["--preset", "doubly_exponential", "--experiment", "condition",
                         "--out", str(tmp_path)], capsys)
    assert code == 1 and out.splitlines()[0] == "not satisfied"


def test_moments_json(tmp_path, capsys):
    code, _, _ = _run(["--preset", "geometric", "--experiment", "moments", "--set", "n=30",
                       "--out", str(tmp_path)], capsys)
    assert code == 0
    doc = json.loads((tmp_path / "moments.json").read_text())
    assert doc["summary"]["m1"] == pytest.approx(1, abs=0.01)
    assert doc["summary"]["m4c"] == pytest.approx(9, abs=0.5)


def test_config_file_and_usage_errors(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# geometric run\nc = 4\nlambda = 2\nexperiment = condition\n")
    code, _, err = _run(["--config", str(cfg)], capsys)
    assert code == 2 and "kind" in err
    cfg.write_text("kind = geometric\nc = 4\nlambda = 2\nexperiment = condition\nfoo = 1\n")
    code, _, err = _run(["--config", str(cfg)], capsys)
    assert code == 2 and "'foo'" in err
    cfg.write_text("kind = geometric\nc = 4\nlambda = 2\nexperiment = condition\ndelta = 0.1\n"
                   f"out = {tmp_path / 'o'}\n")
    code, out, _ = _run(["--config", str(cfg)], capsys)
    assert code == 0 and "satisfied" in out
    for bad in (["--preset", "nope", "--experiment", "lil"],
                ["--preset", "geometric", "--experiment", "lil", "--seed-range", "5..2"],
                ["--preset", "geometric", "--experiment", "lil", "--set", "n=-3"],
                ["--preset", "geometric", "--experiment", "lil", "--set", "kind=geometric"],
                ["--preset", "geometric"]):
        code, _, _ = _run(bad + ["--out", str(tmp_path)], capsys)
        assert code == 2
    with pytest.raises(SystemExit) as e:
        cli.main(["--experiment", "bogus"])
    assert e.value.code == 2


def test_seed_range_parsing():
    assert cli.parse_seed_range("3..7") == (3, 7)
    with pytest.raises(cli.UsageError):
        cli.parse_seed_range("3-7")


def test_csv_byte_identical_and_headers(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("CF_RESTRICTED_THREADS", "2")
    args = ["--preset", "polynomial", "--experiment", "lil", "--seed-range", "0..3",
            "--set", "n=500"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run(args + ["--out", str(a)], capsys)[0] in (0, 1)
    monkeypatch.setenv("CF_RESTRICTED_THREADS", "1")
    assert _run(args + ["--out", str(b)], capsys)[0] in (0, 1)
    ta, tb = (a / "lil.csv").read_bytes(), (b / "lil.csv").read_bytes()
    assert ta == tb
    lines = ta.decode().splitlines()
    assert lines[0] == "# experiment=lil"
    hdr = [l for l in lines if not l.startswith("#")][0]
    assert hdr == "seed,n,S_n,lil_ratio,log_q,local_dim"


def test_simulate_and_dimension(tmp_path, capsys):
    code, _, _ = _run(["--preset", "geometric", "--experiment", "simulate", "--seed-range", "0..1",
                       "--set", "n=20", "--out", str(tmp_path)], capsys)
    assert code == 0
    rows = [l for l in (tmp_path / "simulate.csv").read_text().splitlines()
            if not l.startswith("#")]
    assert rows[0] == "seed,k,digit,log_digit,log_cond_prob" and len(rows) == 41
    code, _, _ = _run(["--preset", "polynomial", "--experiment", "dimension",
                       "--seed-range", "0..1", "--set", "n=1000", "--out", str(tmp_path)], capsys)
    doc = json.loads((tmp_path / "dimension.json").read_text())
    assert set(doc["summary"]["mean_local_dim"]) == {"100", "1000"}


def test_bad_thread_env(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("CF_RESTRICTED_THREADS", "many")
    code, _, err = _run(["--preset", "geometric", "--experiment", "simulate", "--set", "n=5",
                         "--out", str(tmp_path)], capsys)
    assert code == 2 and "CF_RESTRICTED_THREADS" in err
