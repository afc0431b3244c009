import numpy as np
import pytest

from ipa_inverse.cli import main
from ipa_inverse.harness import (
    RESULT_COLUMNS,
    ProblemSpec,
    format_results,
    generate_problem,
    load_config,
    parse_config,
    run_experiment,
)
from ipa_inverse.hilbert import DimensionError, read_vector, write_matrix, write_vector
from ipa_inverse.sets import membership_check

NEAR_ID = """\
# certified family
N = 16
M = 16
operator = near_identity
operator_sigma = 0.05
set = ksparse:2
noise_sigma = 0.01
seed = 10
trials = 3
"""

DEFAULT = """\
N = 32
M = 28
set = ksparse:2
seed = 1
trials = 2
"""


def test_zero_noise_exact():
    p = generate_problem(ProblemSpec(N=8, M=6, set_descriptor="ksparse:2", seed=3))
    np.testing.assert_array_equal(p.g, p.op.apply(p.f_true))
    np.testing.assert_array_equal(p.e, np.zeros(6))


def test_seeded_determinism(tmp_path):
    spec = ProblemSpec(N=8, M=6, set_descriptor="ksparse:2", noise_sigma=0.1, seed=5)
    blobs = []
    for run in range(2):
        p = generate_problem(spec)
        d = tmp_path / str(run)
        d.mkdir()
        write_matrix(d / "T.csv", p.op.to_dense())
        for name in ("f_true", "e", "g"):
            write_vector(d / f"{name}.csv", getattr(p, name))
        blobs.append([(d / n).read_bytes() for n in ("T.csv", "f_true.csv", "e.csv", "g.csv")])
    assert blobs[0] == blobs[1]


def test_in_set_signal_is_member():
    p = generate_problem(ProblemSpec(N=8, M=6, set_descriptor="ksparse:2", seed=0))
    assert membership_check(p.f_true, p.cset)


def test_normalized_columns():
    p = generate_problem(ProblemSpec(N=8, M=6, set_descriptor="ksparse:2", seed=0))
    np.testing.assert_allclose(np.linalg.norm(p.op.to_dense(), axis=0), 1.0, rtol=1e-14)


def test_near_set_distance_known():
    p = generate_problem(ProblemSpec(N=12, M=10, set_descriptor="ksparse:2", signal_kind="near_set",
                                     signal_sigma=0.01, seed=2))
    fA = p.cset.project(p.f_true).point
    assert np.linalg.norm(p.f_true - fA) == pytest.approx(0.01, rel=1e-12)


def test_file_shape_mismatch(tmp_path):
    write_matrix(tmp_path / "T.csv", np.ones((4, 5)))
    spec = ProblemSpec(N=5, M=3, set_descriptor="ksparse:1", operator_kind="from_file",
                       operator_path=str(tmp_path / "T.csv"))
    with pytest.raises(DimensionError, match="T.csv"):
        generate_problem(spec)


def test_parse_config_errors():
    with pytest.raises(ValueError, match="unknown key"):
        parse_config("N = 3\nM = 3\nset = ksparse:1\ncolour = red\n")
    with pytest.raises(ValueError, match="missing"):
        parse_config("N = 3\n")
    with pytest.raises(ValueError, match="line 1"):
        parse_config("N 3\n")


def test_parse_config_values():
    cfg = parse_config(NEAR_ID + "mu = 0.8\neps_schedule = geometric\neps = 0.1\nanalysis = mc\n")
    assert cfg.mu == 0.8 and cfg.trials == 3 and cfg.analysis_mode == "mc"
    assert cfg.eps_schedule(2) == pytest.approx(0.025)
    assert cfg.problem.operator_kind == "near_identity"


def test_run_experiment_rows():
    rows = run_experiment(parse_config(NEAR_ID))
    assert [r["trial"] for r in rows] == [0, 1, 2]
    assert [r["seed"] for r in rows] == [10, 11, 12]
    for r in rows:
        assert r["status"] == "ok" and r["condition_pass"] is True
        assert r["bound_satisfied"] is True
        assert r["lemma2_lhs"] <= r["lemma2_rhs"]
    text = format_results(rows)
    assert text.splitlines()[0] == ",".join(RESULT_COLUMNS)


def test_condition_fail_rows_continue():
    rows = run_experiment(parse_config(DEFAULT))
    assert len(rows) == 2
    for r in rows:
        assert r["status"] == "condition_fail"
        assert r["theorem4_rhs"] is None and r["n_star"] is None and r["bound_satisfied"] is None
        assert r["iters_used"] is not None


def test_trial_error_recorded(tmp_path):
    cfg = parse_config("N = 4\nM = 3\nset = ksparse:9\ntrials = 2\n")
    rows = run_experiment(cfg)
    assert all(r["status"].startswith("error:") for r in rows)


def test_bench_deterministic_and_thread_invariant(tmp_path):
    (tmp_path / "c.cfg").write_text(NEAR_ID)
    outs = []
    for name, threads in (("a", 1), ("b", 1), ("c", 4)):
        assert main(["bench", "--config", str(tmp_path / "c.cfg"), "--out", str(tmp_path / name),
                     "--threads", str(threads)]) == 0
        outs.append((tmp_path / name).read_bytes())
    assert outs[0] == outs[1] == outs[2]


@pytest.fixture
def files(tmp_path):
    p = generate_problem(ProblemSpec(N=10, M=10, set_descriptor="ksparse:2", operator_kind="near_identity", seed=1))
    write_matrix(tmp_path / "T.csv", p.op.to_dense())
    write_vector(tmp_path / "g.csv", p.g)
    write_vector(tmp_path / "f.csv", p.f_true)
    return tmp_path, p


def test_cli_solve(files, capsys):
    d, p = files
    code = main(["solve", "--operator", str(d / "T.csv"), "--measurement", str(d / "g.csv"),
                 "--set", "ksparse:2", "--mu", "auto", "--eps", "0", "--max-iter", "300", "--tol", "1e-12",
                 "--trace", str(d / "trace.csv"), "--reference", str(d / "f.csv"), "--out", str(d / "fhat.csv")])
    assert code == 0
    out = dict(line.split(",", 1) for line in capsys.readouterr().out.splitlines())
    assert out["termination"] in ("converged", "stagnated")
    np.testing.assert_allclose(read_vector(d / "fhat.csv"), p.f_true, atol=1e-8)
    assert (d / "trace.csv").read_text().splitlines()[-1].startswith("# termination=")


def test_cli_analyze_and_oracle(files, capsys):
    d, _ = files
    assert main(["analyze", "--operator", str(d / "T.csv"), "--set", "ksparse:2", "--mode", "exact",
                 "--trials", "100", "--mu", "auto"]) == 0
    out = dict(line.split(",", 1) for line in capsys.readouterr().out.splitlines())
    assert out["method"] == "exact_enumeration" and out["condition_pass"] == "true"
    assert main(["analyze", "--operator", str(d / "T.csv"), "--set", "ksparse:2", "--mode", "mc",
                 "--trials", "100", "--format", "text"]) == 0
    assert "monte_carlo" in capsys.readouterr().out
    assert main(["oracle", "--operator", str(d / "T.csv"), "--measurement", str(d / "g.csv"),
                 "--set", "ksparse:2"]) == 0
    out = dict(line.split(",", 1) for line in capsys.readouterr().out.splitlines())
    assert float(out["residual"]) < 1e-12


def test_cli_exit_codes(tmp_path, capsys):
    A = np.random.default_rng(0).standard_normal((6, 8))
    write_matrix(tmp_path / "T.csv", A)
    write_vector(tmp_path / "g.csv", np.ones(6))
    write_vector(tmp_path / "bad.csv", np.ones(5))
    base = ["--operator", str(tmp_path / "T.csv"), "--set", "ksparse:2"]
    assert main(["analyze", *base, "--require-certified"]) == 3
    assert main(["solve", *base, "--measurement", str(tmp_path / "g.csv"), "--require-certified"]) == 3
    assert main(["solve", *base, "--measurement", str(tmp_path / "bad.csv")]) == 1
    assert main(["solve", *base, "--measurement", str(tmp_path / "g.csv"), "--mu", "50"]) == 2
    assert main(["solve", "--operator", str(tmp_path / "missing.csv"), "--measurement", "x", "--set", "ksparse:1"]) == 1
    assert main(["analyze", *base[:2], "--set", "blob:1"]) == 1


def test_load_config_relative_paths(tmp_path):
    write_matrix(tmp_path / "T.csv", np.eye(4))
    (tmp_path / "c.cfg").write_text("N = 4\nM = 4\noperator = from_file\noperator_path = T.csv\nset = ksparse:1\n")
    cfg = load_config(tmp_path / "c.cfg")
    assert cfg.problem.operator_path == str(tmp_path / "T.csv")
    rows = run_experiment(cfg)
    assert rows[0]["status"] == "ok" and rows[0]["err_true"] == 0.0
