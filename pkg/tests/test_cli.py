import json
import os
import subprocess
import sys

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "..", "src", "quiverflow", "configs")


def run_cli(*args):
    return subprocess.run([sys.executable, "-m", "quiverflow.cli", *args],
                          capture_output=True, text=True)


def config_path(name):
    return os.path.abspath(os.path.join(CONFIG_DIR, name))


def read_tree(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for fn in files:
            path = os.path.join(dirpath, fn)
            rel = os.path.relpath(path, root)
            with open(path, "rb") as fh:
                out[rel] = fh.read()
    return out


def test_check_subcommand_passes(tmp_path):
    res = run_cli("check", "--config", config_path("a2_check.json"),
                  "--out", str(tmp_path / "arch"))
    assert res.returncode == 0, res.stderr
    doc = json.loads((tmp_path / "arch" / "outputs" / "checks.json").read_text())
    assert all(c["passed"] for c in doc["checks"])


def test_retract_archive_counts(tmp_path):
    res = run_cli("retract", "--config", config_path("slit_retract.json"),
                  "--out", str(tmp_path / "arch"))
    assert res.returncode == 0, res.stderr
    doc = json.loads((tmp_path / "arch" / "outputs" / "retract.json").read_text())
    assert doc["census_counts"]["base"]["low_with_unstable"] == 2
    assert doc["census_counts"]["base"]["high"] == 1
    assert doc["stable_under_refinement"]
    assert doc["condition4"]["slit_quotient"]["holds"] is False
    assert doc["condition4"]["slit_quotient"]["witness_sample"] is not None
    assert doc["condition4"]["smooth_saddle"]["holds"] is True


def test_malformed_config_names_field(tmp_path):
    doc = json.load(open(config_path("a2_check.json")))
    doc["dims"]["2"] = -1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    res = run_cli("check", "--config", str(bad), "--out", str(tmp_path / "arch"))
    assert res.returncode == 2
    assert "dims.2" in res.stderr


def test_wrong_subcommand_for_config(tmp_path):
    res = run_cli("flow", "--config", config_path("a2_check.json"),
                  "--out", str(tmp_path / "arch"))
    assert res.returncode == 2
    assert "experiment" in res.stderr


def test_missing_alpha_entry_is_named(tmp_path):
    doc = json.load(open(config_path("a2_check.json")))
    del doc["alpha"]["2"]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    res = run_cli("check", "--config", str(bad), "--out", str(tmp_path / "arch"))
    assert res.returncode == 2
    assert "alpha.2" in res.stderr


def test_flow_archive_and_reexport_identical(tmp_path):
    arch = tmp_path / "arch"
    res = run_cli("flow", "--config", config_path("jordan2_flow.json"),
                  "--out", str(arch))
    assert res.returncode == 0, res.stderr
    csv_path = arch / "outputs" / "trace_000.csv"
    before = csv_path.read_bytes()
    header = before.decode().splitlines()[0]
    assert header.startswith("t,f,gradnorm,")
    assert "cyc:trx:re" in header and "rel:comm" in header

    res2 = run_cli("export", "--archive", str(arch), "--what", "trace")
    assert res2.returncode == 0, res2.stderr
    assert csv_path.read_bytes() == before


def test_export_missing_artifact(tmp_path):
    arch = tmp_path / "arch"
    res = run_cli("flow", "--config", config_path("jordan2_flow.json"),
                  "--out", str(arch))
    assert res.returncode == 0
    res2 = run_cli("export", "--archive", str(arch), "--what", "census")
    assert res2.returncode == 1
    assert "retract.json" in res2.stderr


def test_seed_override_recorded_and_changes_outputs(tmp_path):
    a, b, c = (tmp_path / n for n in ("a", "b", "c"))
    base = config_path("a2_strata.json")
    assert run_cli("strata", "--config", base, "--out", str(a)).returncode == 0
    assert run_cli("strata", "--config", base, "--out", str(b),
                   "--seed-override", "99").returncode == 0
    assert run_cli("strata", "--config", base, "--out", str(c),
                   "--seed-override", "99").returncode == 0
    snap_b = json.loads((b / "config.json").read_text())
    assert snap_b["seed"] == 99
    assert read_tree(b / "outputs") == read_tree(c / "outputs")
    assert read_tree(a / "outputs") != read_tree(b / "outputs")


def test_threads_do_not_change_bytes(tmp_path):
    one, four = tmp_path / "one", tmp_path / "four"
    base = config_path("a2_critical.json")
    assert run_cli("critical", "--config", base, "--out", str(one)).returncode == 0
    assert run_cli("critical", "--config", base, "--out", str(four),
                   "--threads", "4").returncode == 0
    assert read_tree(one / "outputs") == read_tree(four / "outputs")


def test_check_exit_three_on_violation(tmp_path):
    # max_time too small for any level crossing: the contract check fails
    doc = json.load(open(config_path("a2_check.json")))
    doc["integrator"]["max_time"] = 1e-7
    bad = tmp_path / "weak.json"
    bad.write_text(json.dumps(doc))
    res = run_cli("check", "--config", str(bad), "--out", str(tmp_path / "arch"))
    assert res.returncode == 3
    assert "invariant violations" in res.stderr


def test_missing_experiment_params_named(tmp_path):
    doc = json.load(open(config_path("product_broken.json")))
    del doc["params"]["levels"]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    res = run_cli("broken", "--config", str(bad), "--out", str(tmp_path / "arch"))
    assert res.returncode == 2
    assert "params.levels" in res.stderr


def test_runtime_failure_exit_code(tmp_path):
    # an anchor that is not on the stated level is a runtime failure of the
    # lines experiment, reported with exit 1 and a failure record
    doc = json.load(open(config_path("a2_lines.json")))
    doc["params"]["z"] = 0.123
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    res = run_cli("lines", "--config", str(bad), "--out", str(tmp_path / "arch"))
    assert res.returncode == 0      # per-anchor errors are reported in-line
    doc2 = json.loads((tmp_path / "arch" / "outputs" / "lines.json").read_text())
    assert all(e["status"] == "error" for e in doc2["lines"])


def test_export_checkpoints_and_slice(tmp_path):
    arch_b = tmp_path / "broken"
    res = run_cli("broken", "--config", config_path("product_broken.json"),
                  "--out", str(arch_b))
    assert res.returncode == 0, res.stderr
    res = run_cli("export", "--archive", str(arch_b), "--what", "checkpoints")
    assert res.returncode == 0
    body = (arch_b / "outputs" / "checkpoints.csv").read_text()
    assert body.splitlines()[0] == "member,param,level,coord_index,value"

    arch_s = tmp_path / "slice"
    res = run_cli("slice", "--config", config_path("a2_slice.json"),
                  "--out", str(arch_s))
    assert res.returncode == 0, res.stderr
    res = run_cli("export", "--archive", str(arch_s), "--what", "slice")
    assert res.returncode == 0
    body = (arch_s / "outputs" / "slice.csv").read_text()
    assert body.splitlines()[0].startswith("vector_index,coord_0")
    assert len(body.splitlines()) == 3          # header + two fiber vectors


def test_strict_escalates_census_instability(tmp_path):
    doc = json.load(open(config_path("slit_retract.json")))
    doc["params"]["grid"] = [4, 8]
    doc["params"]["refine"] = [8, 16]
    coarse = tmp_path / "coarse.json"
    coarse.write_text(json.dumps(doc))
    res = run_cli("retract", "--config", str(coarse), "--out", str(tmp_path / "a"))
    assert res.returncode == 0
    assert "census unstable" in res.stderr
    res2 = run_cli("retract", "--config", str(coarse), "--out", str(tmp_path / "b"),
                   "--strict")
    assert res2.returncode == 1
