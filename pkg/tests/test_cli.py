import csv

import numpy as np
import pytest

from bpladmm.cli import main

RPCA_SMALL = ["rpca-bench", "--size", "30", "30", "--rank", "3", "--sparsity", "0.05",
              "--noise", "0.01", "--jobs", "1"]


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_rpca_bench_writes_run_and_summary_tables(tmp_path, capsys):
    rc = main(RPCA_SMALL + ["--seeds", "2", "--out", str(tmp_path)])
    assert rc == 0
    runs = read_csv(tmp_path / "rpca_runs.csv")
    assert len(runs) == 4  # two seeds, two algorithms
    assert {row["algorithm"] for row in runs} == {"bpl-admm", "admm3"}
    assert all(row["converged"] == "1" for row in runs)
    summary = read_csv(tmp_path / "rpca_summary.csv")
    assert len(summary) == 2
    assert summary[0]["rank_L_O"] == "3"
    assert summary[0]["sparsity_S_O"] == "45"
    # machine files carry full precision (at least 10 significant digits)
    assert len(summary[0]["RE"].replace(".", "").lstrip("0")) >= 10
    out = capsys.readouterr().out
    assert "bpl-admm" in out and "E-" in out


def test_rpca_bench_seed_list_and_trace(tmp_path):
    rc = main(RPCA_SMALL + ["--seed-list", "5,9", "--out", str(tmp_path), "--dump-trace"])
    assert rc == 0
    trace = read_csv(tmp_path / "trace_rpca_bpl-admm_seed5.csv")
    assert trace[0]["n"] == "0"
    assert "merit" in trace[0]
    assert (tmp_path / "trace_rpca_admm3_seed9.csv").exists()


def test_rpca_bench_empty_seed_list_is_usage_error(tmp_path, capsys):
    rc = main(RPCA_SMALL + ["--seed-list", "", "--out", str(tmp_path)])
    assert rc == 2
    assert "seed list is empty" in capsys.readouterr().err


def test_rpca_bench_rejects_rho_at_the_bound(tmp_path, capsys):
    rc = main(RPCA_SMALL + ["--seeds", "1", "--rho", "2.0", "--out", str(tmp_path)])
    assert rc == 2
    err = capsys.readouterr().err
    assert "rho" in err and "2" in err


def test_rpca_bench_rejects_bad_rank(tmp_path, capsys):
    rc = main(RPCA_SMALL[:1] + ["--size", "10", "10", "--rank", "50", "--seeds", "1",
                                "--out", str(tmp_path)])
    assert rc == 2
    assert "rank" in capsys.readouterr().err


def test_verify_trace_accepts_good_and_rejects_tampered(tmp_path, capsys):
    rc = main(RPCA_SMALL + ["--seed-list", "3", "--out", str(tmp_path), "--dump-trace"])
    assert rc == 0
    trace_path = tmp_path / "trace_rpca_bpl-admm_seed3.csv"
    assert main(["verify-trace", str(trace_path)]) == 0
    assert "OK" in capsys.readouterr().out

    rows = trace_path.read_text().splitlines()
    header, body = rows[0], rows[1:]
    fields = body[3].split(",")
    fields[2] = repr(float(body[2].split(",")[2]) + 100.0)  # bump one merit value
    body[3] = ",".join(fields)
    tampered = tmp_path / "tampered.csv"
    tampered.write_text("\n".join([header] + body) + "\n")
    assert main(["verify-trace", str(tampered)]) == 1
    assert "merit increased" in capsys.readouterr().out


def test_dcopf_fixture_run(tmp_path, capsys):
    rc = main(["dcopf", "--fixture", "2bus", "--seeds", "1", "--jobs", "1",
               "--max-iter", "20000", "--out", str(tmp_path)])
    assert rc == 0
    solution = read_csv(tmp_path / "dcopf_solution.csv")
    assert len(solution) == 2
    assert {row["u_rounded"] for row in solution} == {"0", "1"}
    runs = read_csv(tmp_path / "dcopf_runs.csv")
    assert runs[0]["rounded_feasible"] == "1"
    summary = read_csv(tmp_path / "dcopf_summary.csv")
    assert float(summary[0]["best_objective"]) < 2.5
    assert "rounded-u feasible True" in capsys.readouterr().out


def test_dcopf_rho_gate_names_bound(tmp_path, capsys):
    rc = main(["dcopf", "--fixture", "2bus", "--seeds", "1", "--rho", "100",
               "--out", str(tmp_path)])
    assert rc == 2
    assert "200000" in capsys.readouterr().err


def test_dcopf_parses_matpower_file(tmp_path):
    from test_matpower import CASE3

    path = tmp_path / "case3.m"
    path.write_text(CASE3)
    # eta small keeps this a smoke run; it may stop at the iteration cap
    rc = main(["dcopf", "--case", str(path), "--seeds", "1", "--jobs", "1",
               "--eta", "50", "--max-iter", "300", "--allow-maxiter",
               "--out", str(tmp_path)])
    assert rc == 0
    assert (tmp_path / "dcopf_solution.csv").exists()


def test_dcopf_ragged_case_file_fails_with_line_number(tmp_path, capsys):
    from test_matpower import CASE3

    bad = CASE3.replace("2  3  0.02  0.25  0  250  250  250  0  0  1  -360  360;",
                        "2  3  0.02;")
    path = tmp_path / "bad.m"
    path.write_text(bad)
    rc = main(["dcopf", "--case", str(path), "--seeds", "1", "--out", str(tmp_path)])
    assert rc == 1
    err = capsys.readouterr().err
    assert "line" in err and "ragged" in err


def test_missing_case_file_is_reported(tmp_path, capsys):
    rc = main(["dcopf", "--case", str(tmp_path / "nope.m"), "--seeds", "1",
               "--out", str(tmp_path)])
    assert rc == 1
    assert "nope.m" in capsys.readouterr().err


def test_identical_manifests_produce_identical_csvs(tmp_path):
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    manifest = RPCA_SMALL + ["--seeds", "2", "--no-timing", "--dump-trace"]
    assert main(manifest + ["--out", str(out_a)]) == 0
    assert main(manifest + ["--out", str(out_b)]) == 0
    for name in ("rpca_runs.csv", "rpca_summary.csv", "trace_rpca_bpl-admm_seed0.csv"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes()


def test_parallel_jobs_match_serial_results(tmp_path):
    serial = tmp_path / "serial"
    parallel = tmp_path / "parallel"
    base = RPCA_SMALL[:-2]  # drop "--jobs 1"
    assert main(base + ["--jobs", "1", "--seeds", "3", "--no-timing",
                        "--out", str(serial)]) == 0
    assert main(base + ["--jobs", "3", "--seeds", "3", "--no-timing",
                        "--out", str(parallel)]) == 0
    assert (serial / "rpca_runs.csv").read_bytes() == (parallel / "rpca_runs.csv").read_bytes()
