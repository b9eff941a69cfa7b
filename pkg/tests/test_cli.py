import json
import os

import numpy as np
import pytest

from intercache import cli
from intercache.srd import dilate
from intercache.verify import run_checks

SMALL_SETS = ["--set", "model.grid_h=8", "--set", "model.grid_w=8", "--set", "model.frames=2",
              "--set", "model.d=16", "--set", "model.heads=2", "--set", "model.blocks=1",
              "--set", "workload.clusters=3", "--set", "workload.prompts_per_cluster=10",
              "--set", "workload.warm_start=4"]


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def workload(tmp_path, capsys):
    path = tmp_path / "wl.jsonl"
    code, out, _ = run(["gen-workload", *SMALL_SETS, "--out", str(path)], capsys)
    assert code == 0 and "3 clusters" in out
    return path


def test_gen_workload_sections(workload):
    recs = [json.loads(line) for line in workload.read_text().splitlines()]
    assert len(recs) == 30
    assert [r["section"] for r in recs[:5]] == ["warm"] * 4 + ["test"]
    assert (workload.parent / "wl.vocab.json").is_file()


def test_gen_workload_seed_changes_stream(tmp_path, workload, capsys):
    other = tmp_path / "other.jsonl"
    run(["gen-workload", *SMALL_SETS, "--set", "workload.seed=7", "--out", str(other)], capsys)
    assert other.read_text() != workload.read_text()


def test_gen_workload_invalid(tmp_path, capsys):
    code, _, err = run(["gen-workload", "--set", "workload.prompts_per_cluster=0",
                        "--out", str(tmp_path / "x.jsonl")], capsys)
    assert code != 0 and "prompts_per_cluster" in err
    assert not (tmp_path / "x.jsonl").exists()


def _run_mode(tmp_path, workload, mode, capsys, extra=()):
    paths = {k: tmp_path / f"{mode}.{k}" for k in ("records", "summary", "csv")}
    code, out, err = run(["run", *SMALL_SETS, "--workload", str(workload), "--mode", mode,
                          "--records", str(paths["records"]), "--summary", str(paths["summary"]),
                          "--csv", str(paths["csv"]), *extra], capsys)
    assert code == 0, err
    return paths, json.loads(paths["summary"].read_text())


def test_run_baseline_then_chorus(tmp_path, workload, capsys):
    _, base = _run_mode(tmp_path, workload, "baseline", capsys)
    paths, chorus = _run_mode(tmp_path, workload, "chorus", capsys,
                              ["--cache-dir", str(tmp_path / "cache"), "--mask-dump", str(tmp_path / "m.txt")])
    assert base["overall"]["hit_rate"] == 0 and base["overall"]["speedup_proxy"] == 1.0
    assert chorus["overall"]["hit_rate"] > 0 and chorus["overall"]["speedup_proxy"] > 1
    assert (tmp_path / "cache" / "index.jsonl").is_file()
    assert "[edit r=2]" in (tmp_path / "m.txt").read_text()
    assert paths["csv"].read_text().startswith("start,end,requests,hit_rate")


def test_run_nirvana_tags(tmp_path, workload, capsys):
    paths, _ = _run_mode(tmp_path, workload, "nirvana", capsys)
    recs = [json.loads(line) for line in paths["records"].read_text().splitlines()]
    assert all(r["mode"] == "nirvana" and r["k1"] == r["k2"] for r in recs)


def test_run_no_reference(tmp_path, workload, capsys):
    paths, _ = _run_mode(tmp_path, workload, "chorus", capsys, ["--no-reference"])
    assert all("ref_distance" not in json.loads(line) for line in paths["records"].read_text().splitlines())


def test_run_missing_config_no_outputs(tmp_path, capsys):
    rec = tmp_path / "r.jsonl"
    code, _, err = run(["run", "--config", str(tmp_path / "nope.ini"), "--records", str(rec),
                        "--summary", str(tmp_path / "s.json"), "--csv", str(tmp_path / "w.csv")], capsys)
    assert code != 0 and "not found" in err
    assert list(tmp_path.iterdir()) == []


def test_override_precedence(tmp_path, monkeypatch):
    ini = tmp_path / "c.ini"
    ini.write_text("[model]\nsteps = 7\nd = 8\nheads = 2\n[scheduler]\ntau = 0.5\n")
    monkeypatch.setenv("INTERCACHE_CONFIG", str(ini))
    args = cli.build_parser().parse_args(["run", "--set", "model.steps=9"])
    cfg = cli._config(args)
    assert cfg.model.steps == 9 and cfg.model.d == 8 and cfg.scheduler.tau == 0.5
    args = cli.build_parser().parse_args(["run"])
    assert cli._config(args).model.steps == 7
    monkeypatch.delenv("INTERCACHE_CONFIG")
    assert cli._config(cli.build_parser().parse_args(["run"])).model.steps == 4
    vanilla = cli._config(cli.build_parser().parse_args(["run", "--profile", "vanilla"]))
    assert vanilla.model.steps == 50 and vanilla.scheduler.tau == 0.65


def _records(n, mode="chorus"):
    return [{"index": i, "mode": mode, "hit": i % 3 == 0, "compute_fraction": 0.4 if i % 3 == 0 else 1.0}
            for i in range(n)]


def test_report_windows(tmp_path, capsys):
    p = tmp_path / "r.jsonl"
    p.write_text("".join(json.dumps(r) + "\n" for r in _records(300)))
    code, out, _ = run(["report", str(p), "--window", "100"], capsys)
    assert code == 0
    rows = [line for line in out.splitlines() if line.strip()[:1].isdigit()]
    assert len(rows) == 3 and "total" in out


def test_report_baseline_and_mixed(tmp_path, capsys):
    p = tmp_path / "r.jsonl"
    recs = [dict(r, hit=False, compute_fraction=1.0) for r in _records(20, "baseline")] + _records(20)
    p.write_text("".join(json.dumps(r) + "\n" for r in recs))
    code, out, _ = run(["report", str(p), "--window", "10"], capsys)
    assert code == 0 and "== mode: baseline ==" in out and "== mode: chorus ==" in out
    base_block = out.split("== mode: chorus ==")[0]
    assert "0.000" in base_block and "speedup proxy 1.000" in base_block


def test_report_malformed(tmp_path, capsys):
    p = tmp_path / "r.jsonl"
    p.write_text(json.dumps(_records(1)[0]) + "\n" + "not json\n")
    code, _, err = run(["report", str(p)], capsys)
    assert code != 0 and ":2:" in err


def test_verify_passes_without_side_effects(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    code, out, _ = run(["verify"], capsys)
    assert code == 0 and out.count("[PASS]") == 6 and "[FAIL]" not in out
    assert os.listdir(tmp_path) == []


def test_verify_detects_corrupted_dilation():
    def broken(mask, r):
        out = dilate(mask, r)
        if r > 0:
            out = out & ~np.asarray(mask, dtype=bool)  # punches out the centre cells
        return out

    results = dict((name, ok) for name, ok, _ in run_checks(dilate_fn=broken))
    assert not results["mask containment"]
    assert not results["dilation matches brute force"]
    assert results["scheduler monotonicity"]
