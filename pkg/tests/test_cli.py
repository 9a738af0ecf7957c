import json
import subprocess
import sys

PKG = [sys.executable, "-m", "strongcoupling"]


def run_cli(*args, timeout=600):
    return subprocess.run(PKG + list(args), capture_output=True, text=True,
                          timeout=timeout)


class TestSimulate:
    def test_deterministic_across_runs(self):
        args = ("simulate", "--n", "16", "--endpoint", "0", "--seed", "7",
                "--mode", "bridge", "--emit-paths")
        a = run_cli(*args)
        b = run_cli(*args)
        assert a.returncode == 0
        assert a.stdout == b.stdout

    def test_bridge_endpoint_closes(self):
        out = run_cli("simulate", "--n", "5", "--endpoint", "1",
                      "--mode", "bridge", "--emit-paths")
        assert out.returncode == 0
        payload = json.loads(out.stdout)
        assert payload["schema_version"] == 1
        assert payload["paths"]["w"][5] == 0.0
        assert payload["paths"]["y"][5] == 0.0

    def test_parity_violation_exit_2(self):
        out = run_cli("simulate", "--n", "3", "--endpoint", "0", "--mode", "bridge")
        assert out.returncode == 2
        assert "error" in out.stderr

    def test_walk_mode_summary_only_by_default(self):
        out = run_cli("simulate", "--n", "32", "--mode", "walk")
        payload = json.loads(out.stdout)
        assert "paths" not in payload
        assert "max_deviation" in payload["summary"]

    def test_infinite_mode(self):
        out = run_cli("simulate", "--n", "20", "--mode", "infinite")
        assert out.returncode == 0

    def test_csv_format(self):
        out = run_cli("simulate", "--n", "4", "--mode", "bridge",
                      "--emit-paths", "--format", "csv")
        lines = out.stdout.strip().splitlines()
        assert lines[0] == "i,w,y"
        assert len(lines) == 6

    def test_output_file(self, tmp_path):
        target = tmp_path / "out.json"
        out = run_cli("simulate", "--n", "8", "--out", str(target))
        assert out.returncode == 0
        assert json.loads(target.read_text())["n"] == 8

    def test_io_failure_exit_3(self):
        out = run_cli("simulate", "--n", "8", "--out", "/nonexistent/dir/x.json")
        assert out.returncode == 3


class TestVerify:
    def test_marginals_experiment(self):
        out = run_cli("verify", "--experiment", "marginals", "--n", "8",
                      "--reps", "20000")
        assert out.returncode == 0
        payload = json.loads(out.stdout)
        assert payload["pass"] is True
        assert payload["results"]["8"]["walk_signs_p"] > 0.001

    def test_growth_experiment_json(self):
        out = run_cli("verify", "--experiment", "growth", "--scheme",
                      "kmt-recursive", "--n", "64,128,256", "--reps", "150")
        assert out.returncode == 0
        payload = json.loads(out.stdout)
        assert payload["results"]["model"] == "linear-in-log-n"
        assert len(payload["results"]["table"]) == 3

    def test_growth_experiment_csv_columns(self):
        out = run_cli("verify", "--experiment", "growth", "--scheme",
                      "independent", "--n", "16,32", "--reps", "120",
                      "--format", "csv")
        lines = out.stdout.strip().splitlines()
        assert lines[0] == "scheme,n,replicate,max_dev,seed_path"
        assert len(lines) == 1 + 2 * 120

    def test_unknown_scheme_exit_2(self):
        out = run_cli("verify", "--experiment", "growth", "--scheme", "unknown",
                      "--n", "16", "--reps", "120")
        assert out.returncode == 2

    def test_covariance_experiment(self):
        out = run_cli("verify", "--experiment", "covariance", "--n", "8",
                      "--reps", "30000", "--mode", "bridge")
        assert out.returncode == 0

    def test_moments_experiment(self):
        out = run_cli("verify", "--experiment", "moments", "--n", "16,64",
                      "--reps", "5000", "--theta-grid", "0.2",
                      "--lambda-grid", "0.1,0.2")
        assert out.returncode == 0
        payload = json.loads(out.stdout)
        assert payload["results"]["pinned"]["lambdas"] == [0.1, 0.2]

    def test_tails_experiment(self):
        out = run_cli("verify", "--experiment", "tails", "--n", "256",
                      "--reps", "4000")
        assert out.returncode == 0
        payload = json.loads(out.stdout)
        assert payload["results"]["tail"]["slope"] < 0.0

    def test_stein_experiment(self):
        out = run_cli("verify", "--experiment", "stein", "--n", "4")
        assert out.returncode == 0

    def test_threads_do_not_change_bytes(self):
        base = ("verify", "--experiment", "growth", "--scheme", "kmt-recursive",
                "--n", "64,128", "--reps", "200", "--seed", "11")
        a = run_cli(*base, "--threads", "1")
        b = run_cli(*base, "--threads", "8")
        assert a.returncode == b.returncode == 0
        assert a.stdout == b.stdout


class TestSteinCheck:
    def test_default_battery_passes(self):
        out = run_cli("stein-check", "--n", "6")
        assert out.returncode == 0
        payload = json.loads(out.stdout)
        assert payload["pass"] is True
        worst = max(
            res for byphi in payload["results"]["continuous_residuals"].values()
            for res in byphi.values()
        )
        assert worst < 1e-7

    def test_negative_control_exit_1(self):
        out = run_cli("stein-check", "--n", "4", "--negative-control")
        assert out.returncode == 1
        payload = json.loads(out.stdout)
        assert payload["results"]["negative_control_residual"] > 1e-2

    def test_enumeration_cutoff_exit_2(self):
        out = run_cli("stein-check", "--n", "14")
        assert out.returncode == 2

    def test_csv_output(self):
        out = run_cli("stein-check", "--n", "3", "--format", "csv")
        assert out.stdout.splitlines()[0] == "kind,case,phi,residual"
