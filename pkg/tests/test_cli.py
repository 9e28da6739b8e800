from __future__ import annotations

import csv
import json
import shutil
from pathlib import Path

import pytest

from layph.cli import BENCH_FIELDS, FIXTURE_STATES, main
from layph.generators import planted_partition

DATA = Path(__file__).parent / "data"


@pytest.fixture()
def fixture_files(tmp_path):
    for name in ("fixture.txt", "fixture.upd", "fixture.groups"):
        shutil.copy(DATA / name, tmp_path / name)
    return tmp_path


def write_graph(path: Path, g) -> Path:
    path.write_text("".join(f"{u} {v} {w:g}\n" for u, v, w in g.edges()))
    return path


@pytest.fixture(scope="module")
def planted_file(tmp_path_factory):
    g, _ = planted_partition(300, 5, 0.3, 0.004, 1)
    return write_graph(tmp_path_factory.mktemp("planted") / "pp.txt", g)


def run_json(capsys, argv) -> tuple[int, dict]:
    code = main(argv)
    out = capsys.readouterr().out
    return code, json.loads(out) if out.strip().startswith("{") else {}


def test_verify_fixture(capsys):
    code, rep = run_json(capsys, ["verify-fixture"])
    assert code == 0 and rep["ok"]
    assert tuple(rep["states"]) == FIXTURE_STATES
    assert rep["stats"]["upper_vertices"] == 3 and rep["stats"]["upper_edges"] == 3


def test_preprocess_fixture_with_groups(fixture_files, capsys):
    out = fixture_files / "fixture.lg"
    code, stats = run_json(capsys, ["preprocess", str(fixture_files / "fixture.txt"), "--groups", str(fixture_files / "fixture.groups"),
                                    "--out", str(out)])
    assert code == 0 and out.exists()
    assert stats["upper_vertices"] == 3 and stats["upper_edges"] == 3
    assert stats["subgraphs"] == 2 and not stats["degenerate"]
    assert "elapsed_ms" in stats
    assert json.loads((fixture_files / "fixture.lg.stats.json").read_text()) == stats


def test_preprocess_degenerate_graph(tmp_path, capsys):
    # any pair on a directed 4-cycle has one entry, one exit and one edge
    path = tmp_path / "cycle.txt"
    path.write_text("a b\nb c\nc d\nd a\n")
    code, stats = run_json(capsys, ["preprocess", str(path), "--K", "2", "--out", str(tmp_path / "p.lg"),
                                    "--source", "a"])
    assert code == 0 and stats["degenerate"] and stats["subgraphs"] == 0


@pytest.mark.parametrize("mode", ["restart", "plain-inc", "layph"])
def test_run_fixture_modes(fixture_files, capsys, mode):
    states = fixture_files / "states.tsv"
    code, rep = run_json(capsys, ["run", str(fixture_files / "fixture.txt"), str(fixture_files / "fixture.upd"), "--mode", mode,
                                  "--verify", "--states-out", str(states)])
    assert code == 0 and rep["verify"]["ok"] and rep["mode"] == mode
    got = dict(line.split("\t") for line in states.read_text().splitlines())
    assert tuple(float(got[str(v)]) for v in range(9)) == FIXTURE_STATES


def test_three_modes_agree_with_different_costs(fixture_files, capsys):
    digests, acts = set(), []
    for mode in ("restart", "plain-inc", "layph"):
        _, rep = run_json(capsys, ["run", str(fixture_files / "fixture.txt"), str(fixture_files / "fixture.upd"), "--mode", mode])
        digests.add(rep["states_digest"])
        acts.append(rep["total_activations"])
    assert len(digests) == 1
    assert len(set(acts)) == 3


def test_container_round_trip_through_cli(fixture_files, capsys):
    lg = fixture_files / "fixture.lg"
    assert main(["preprocess", str(fixture_files / "fixture.txt"), "--groups", str(fixture_files / "fixture.groups"), "--out", str(lg)]) == 0
    capsys.readouterr()
    code, rep = run_json(capsys, ["run", str(fixture_files / "fixture.txt"), str(fixture_files / "fixture.upd"), "--container", str(lg),
                                  "--container-out", str(fixture_files / "next.lg"), "--verify"])
    assert code == 0 and rep["verify"]["ok"]
    assert rep["activations"] == {"layer_update": 0, "upload": 3, "upper_iter": 2, "assign": 3}
    assert (fixture_files / "next.lg").exists()


def test_container_for_another_graph_is_rejected(fixture_files, tmp_path, capsys):
    lg = fixture_files / "fixture.lg"
    main(["preprocess", str(fixture_files / "fixture.txt"), "--groups", str(fixture_files / "fixture.groups"), "--out", str(lg)])
    other = tmp_path / "other.txt"
    other.write_text((fixture_files / "fixture.txt").read_text() + "8 0 1\n")
    capsys.readouterr()
    assert main(["run", str(other), "--container", str(lg)]) == 2


def test_injected_fault_fails_verification(fixture_files, capsys):
    code, rep = run_json(capsys, ["run", str(fixture_files / "fixture.txt"), str(fixture_files / "fixture.upd"), "--mode", "layph",
                                  "--verify", "--inject-fault"])
    assert code == 3 and not rep["verify"]["ok"]


@pytest.mark.parametrize("algo", ["sssp", "bfs", "pagerank", "php"])
def test_run_verifies_on_planted_graph(planted_file, tmp_path, capsys, algo):
    upd = tmp_path / "u.txt"
    assert main(["gen-updates", str(planted_file), "--add", "15", "--delete", "15", "--vadd", "2", "--vdel", "2",
                 "--attach", "2", "--seed", "3", "--out", str(upd)]) == 0
    for mode in ("plain-inc", "layph"):
        code, rep = run_json(capsys, ["run", str(planted_file), str(upd), "--algo", algo, "--mode", mode,
                                      "--K", "80", "--verify", "--report", str(tmp_path / "r.json")])
        assert code == 0
        rep = json.loads((tmp_path / "r.json").read_text())
        assert rep["verify"]["ok"] and rep["schema"] == 1


def test_gen_updates_counts_and_determinism(planted_file, tmp_path):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    for out in (a, b):
        assert main(["gen-updates", str(planted_file), "--add", "300", "--delete", "200", "--seed", "9",
                     "--out", str(out)]) == 0
    lines = a.read_text().splitlines()
    assert len(lines) == 500 and a.read_text() == b.read_text()
    assert sum(line.startswith("a ") for line in lines) == 300
    assert all(1 <= float(line.split()[3]) <= 10 for line in lines if line.startswith("a "))


def test_gen_updates_vertex_batch(planted_file, tmp_path):
    out = tmp_path / "v.txt"
    assert main(["gen-updates", str(planted_file), "--vadd", "50", "--vdel", "50", "--out", str(out)]) == 0
    ops = [line.split()[0] for line in out.read_text().splitlines()]
    assert ops.count("av") == 50 and ops.count("dv") == 50


def test_gen_updates_empty_and_infeasible(planted_file, tmp_path, capsys):
    out = tmp_path / "e.txt"
    assert main(["gen-updates", str(planted_file), "--out", str(out)]) == 0
    assert out.read_text() == ""
    assert main(["gen-updates", str(planted_file), "--delete", "10000000", "--out", str(out)]) == 2
    assert "cannot delete" in capsys.readouterr().err


def test_bench_writes_schema_stable_csv(tmp_path, capsys):
    code = main(["bench", "--planted", "1000,10,0.3,1e-4", "--batch-sizes", "10,100,1000", "--algo", "pagerank",
                 "--K", "250", "--out-dir", str(tmp_path)])
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "bench.csv", encoding="utf-8")))
    assert list(rows[0]) == BENCH_FIELDS and len(rows) == 6
    acts = {(r["mode"], int(r["batch_size"])): int(r["activations"]) for r in rows}
    ratios = [acts[("layph", s)] / acts[("plain-inc", s)] for s in (10, 100, 1000)]
    # smaller batches favour the layered engine on this graph
    assert ratios[0] < ratios[1] < ratios[2]


def test_bench_is_deterministic(tmp_path):
    runs = []
    for i in range(2):
        d = tmp_path / str(i)
        main(["bench", "--planted", "400,4,0.3,1e-3", "--batch-sizes", "20", "--modes", "layph", "--K", "120",
              "--threads", "1", "--out-dir", str(d)])
        runs.append([r["activations"] for r in csv.DictReader(open(d / "bench.csv", encoding="utf-8"))])
    assert runs[0] == runs[1] and len(runs[0]) == 1


def test_bench_rejects_bad_config(tmp_path, capsys):
    assert main(["bench", "--planted", "100,2,0.3,0.01", "--batch-sizes", "0", "--out-dir", str(tmp_path)]) == 2
    assert main(["bench", "--planted", "100,2,0.3,0.01", "--K", "1", "--out-dir", str(tmp_path)]) == 2
    assert main(["bench", "--out-dir", str(tmp_path)]) == 2


def test_bad_inputs_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("1 2 3 4\n")
    assert main(["run", str(bad)]) == 2
    assert main(["run", str(tmp_path / "missing.txt")]) == 2
    good = tmp_path / "g.txt"
    good.write_text("0 1 1\n")
    assert main(["run", str(good), "--source", "zz"]) == 2
    assert "error" in capsys.readouterr().err


def test_planted_preprocess_retains_most_communities(tmp_path, capsys):
    g, _ = planted_partition(10_000, 50, 0.2, 3e-5, 7)
    path = write_graph(tmp_path / "big.txt", g)
    code, stats = run_json(capsys, ["preprocess", str(path), "--K", "250", "--seed", "1",
                                    "--out", str(tmp_path / "big.lg")])
    assert code == 0 and stats["subgraphs"] >= 45
