import csv
import os

import numpy as np
import pytest

import retort.orchestrator
from retort.cli import main
from retort.errors import AuditFailure
from retort.isotopes import compute_delta15N

from conftest import GOLDEN, deck_path

FAILING_FLOW = """\
[SOLVER]
t_end = 86400
dt_init = 86400
dt_min = 86400
dt_max = 86400
picard_max = 1

[MATERIALS]
sand k=2.24e-12 phi=0.46 psi_s=-5.02e-2 b=3.705

[GRID]
layer n=10 dz=0.05 material=sand

[INITIAL]
all S_L=0.3

[BOUNDARY]
source element=0 rate=1e-5 unit=m3/s
"""


def _tree(root):
    return sorted(os.path.relpath(os.path.join(d, f), root) for d, _, fs in os.walk(root) for f in fs)


@pytest.mark.parametrize("name", GOLDEN)
def test_check_golden_decks(name, capsys):
    assert main(["check", "--deck", deck_path(name)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("OK: ") and "species" in out and "reactions" in out


def test_check_reports_counts(capsys):
    main(["check", "--deck", deck_path("case3_gebik.deck")])
    assert capsys.readouterr().out.strip() == "OK: 6 species, 3 reactions, 0 equilibria, 1 elements"


def test_run_case2_writes_four_tables(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--deck", deck_path("case2_clogging.deck"), "--out", str(out), "--quiet"]) == 0
    assert sorted(os.listdir(out)) == ["flux.csv", "grid.csv", "probes.csv", "timeseries.csv"]
    line = capsys.readouterr().out
    assert line.startswith("OK: ") and "steps" in line and "t=1.296e+06 s" in line and "worst audit" in line


def test_iso_agrees_with_the_library(tmp_path):
    out = tmp_path / "out"
    main(["run", "--deck", deck_path("case3_gebik.deck"), "--out", str(out), "--quiet"])
    assert main(["iso", "--timeseries", str(out / "timeseries.csv"), "--n14", "NO3_14", "--n15",
                 "NO3_15[mol/L]", "--out", str(tmp_path / "iso")]) == 0
    with open(out / "timeseries.csv") as fh:
        first = next(csv.DictReader(fh))
    _, d0 = compute_delta15N([float(first["NO3_14[mol/L]"])], [float(first["NO3_15[mol/L]"])])
    with open(tmp_path / "iso" / "delta15N.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert float(rows[0]["delta15N[permil]"]) == d0[0]
    deltas = np.array([float(r["delta15N[permil]"]) for r in rows])
    assert np.all(np.diff(deltas) >= 0) and deltas[-1] > deltas[0]


def test_usage_errors(capsys):
    assert main([]) == 64
    assert main(["frobnicate"]) == 64
    assert main(["run"]) == 64
    assert main(["check", "--deck", deck_path("case1_synthetic.deck"), "--bogus"]) == 64
    assert main(["sweep", "--deck", deck_path("feat_biofilm_sweep.deck"), "--workers", "0"]) == 64


def test_deck_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.deck"
    bad.write_text("[MATERIALS]\nsoil k=abc\n")
    assert main(["check", "--deck", str(bad)]) == 2
    err = capsys.readouterr().err
    assert f"{bad}:2:" in err
    assert main(["sweep", "--deck", deck_path("case3_gebik.deck"), "--out", str(tmp_path / "o")]) == 2


def test_missing_files_exit_1(tmp_path):
    assert main(["check", "--deck", str(tmp_path / "nope.deck")]) == 1
    assert main(["iso", "--timeseries", str(tmp_path / "nope.csv"), "--n14", "a", "--n15", "b",
                 "--out", str(tmp_path)]) == 1


def test_solver_failure_exits_3(tmp_path, capsys):
    deck = tmp_path / "stiff.deck"
    deck.write_text(FAILING_FLOW)
    assert main(["run", "--deck", str(deck), "--out", str(tmp_path / "out")]) == 3
    assert "did not converge" in capsys.readouterr().err


def test_audit_failure_exits_4(tmp_path, monkeypatch, capsys):
    def broken(deck, out_dir=None):
        raise AuditFailure("closure error 1e-3 for 'water'")

    monkeypatch.setattr(retort.orchestrator, "run_simulation", broken)
    assert main(["run", "--deck", deck_path("feat_tracer.deck"), "--out", str(tmp_path)]) == 4
    assert "mass audit failure" in capsys.readouterr().err


def test_writes_only_under_out_and_repeats_exactly(tmp_path, monkeypatch):
    work = tmp_path / "cwd"
    work.mkdir()
    monkeypatch.chdir(work)
    argv = ["sweep", "--deck", deck_path("feat_biofilm_sweep.deck"), "--out", str(tmp_path / "a"),
            "--seed", "3", "--quiet"]
    assert main(argv) == 0
    assert os.listdir(work) == []
    first = {p: (tmp_path / "a" / p).read_bytes() for p in _tree(tmp_path / "a")}
    assert "ensemble.csv" in first and "replica_000/deck.txt" in first
    assert main(argv) == 0
    again = {p: (tmp_path / "a" / p).read_bytes() for p in _tree(tmp_path / "a")}
    assert again == first


def test_default_out_comes_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("RETORT_OUT", str(tmp_path / "env"))
    monkeypatch.chdir(tmp_path)
    assert main(["run", "--deck", deck_path("feat_tracer.deck"), "--quiet"]) == 0
    assert sorted(os.listdir(tmp_path)) == ["env"]
