"""Command-line interface: dispatch, artifacts, exit categories."""

from __future__ import annotations

import json
import math
import subprocess
import sys

import pytest

from unifeed import channel_from_json, run_episode, solve_capacity, solve_ctilde1
from unifeed.cli import (
    EXIT_IO,
    EXIT_NONCONVERGED,
    EXIT_OK,
    EXIT_USAGE,
    EXIT_VIOLATIONS,
    RunConfig,
    config_from_obj,
    dispatch,
    load_config,
)
from unifeed.montecarlo import SWEEP_COLUMNS, read_sweep_csv, run_span
from unifeed.numerics import trial_seed
from unifeed.scheme import SchemeConfig, StepRecord

BSC_DOC = {
    "name": "bsc(0.1)",
    "nx": 2,
    "ny": 2,
    "ns": 1,
    "q": [[[0.9, 0.1]], [[0.1, 0.9]]],
    "g": [[[0, 0], [0, 0]]],
    "s1": 0,
}

# coarse-but-converging solver settings keep the symmetric family fast here
SYM = ["--family", "symmetric", "--params", "0.5,0.1",
       "--grid-res", "1/25", "--action-res", "1/10"]


@pytest.fixture()
def bsc_path(tmp_path):
    path = tmp_path / "bsc.json"
    path.write_text(json.dumps(BSC_DOC), encoding="utf-8")
    return str(path)


def run_cli(capsys, args):
    code = dispatch(args)
    captured = capsys.readouterr()
    lines = captured.out.splitlines()
    payload = json.loads(lines[0]) if lines else None
    return code, payload, captured.out


# ---------------------------------------------------------------------------
# validate


def test_validate_trapdoor_reports_not_strictly_positive(capsys):
    code, payload, out = run_cli(capsys, ["validate", "--family", "trapdoor"])
    assert code == EXIT_OK
    assert payload["ok"] is True
    assert payload["strictly_positive"] is False
    assert payload["violations"] == []
    assert "strictly_positive=false" in out


def test_validate_reports_violations_with_nonzero_exit(tmp_path, capsys):
    doc = dict(BSC_DOC, q=[[[0.9, 0.2]], [[0.1, 0.9]]])  # row sums to 1.1
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    code, payload, out = run_cli(capsys, ["validate", "--channel", str(path)])
    assert code == EXIT_VIOLATIONS
    assert payload["ok"] is False
    assert payload["violations"]
    assert "ok=false" in out


def test_missing_channel_source_is_usage_error(capsys):
    assert dispatch(["validate"]) == EXIT_USAGE


def test_wrong_family_parameter_count(capsys):
    # validate reports the problem as a violation; other commands treat it
    # as unusable configuration
    assert dispatch(["validate", "--family", "chemical", "--params", "0.5,0.5"]) \
        == EXIT_VIOLATIONS
    assert dispatch(["bounds", "--family", "chemical", "--params", "0.5,0.5"]) \
        == EXIT_USAGE


def test_missing_channel_file_is_io_error(capsys):
    assert dispatch(["validate", "--channel", "/nonexistent/chan.json"]) == EXIT_IO


# ---------------------------------------------------------------------------
# run configuration


def test_empty_config_fills_documented_defaults():
    cfg = config_from_obj({})
    assert cfg.p0 == 0.9
    assert cfg.precision_bits == 256
    assert cfg.grid_res == 1.0 / 200.0
    assert cfg.K == (10,)
    assert cfg.pe == (1e-3,)
    assert cfg.variant == "two_stage_alternative"


def test_config_rejects_confirmation_threshold_at_error_boundary():
    # float arithmetic would accept 0.999 < 1 - 1e-3; the exact decimal
    # comparison must reject the equality
    with pytest.raises(ValueError, match="strictly below"):
        config_from_obj({"p0": 0.999, "pe": 1e-3})


def test_config_file_boundary_rejection_maps_to_usage_exit(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"p0": 0.999, "pe": 1e-3}), encoding="utf-8")
    code = dispatch(["validate", "--family", "trapdoor", "--config", str(path)])
    assert code == EXIT_USAGE


def test_config_roundtrip_is_idempotent():
    obj = {
        "channel": {"family": "symmetric", "params": [0.5, 0.1]},
        "K": [10, 20, 30],
        "pe": [1e-3, 1e-6, 1e-9, 1e-12],
        "p0": 0.9,
        "grid_res": 0.005,
        "seed": 42,
        "max_trials": 5000,
    }
    once = config_from_obj(obj).to_json()
    twice = config_from_obj(once).to_json()
    assert once == twice
    # the channel source is normalized to the explicit table form
    assert once["channel"]["name"] == "symmetric(0.5,0.1)"
    assert once["K"] == [10, 20, 30]


def test_config_scalars_normalize_to_lists():
    cfg = config_from_obj({"K": 8, "pe": 0.01})
    assert cfg.K == (8,)
    assert cfg.pe == (0.01,)


def test_config_unknown_field_rejected():
    with pytest.raises(ValueError, match="unknown config fields"):
        config_from_obj({"grid_resolution": 0.01})


def test_malformed_config_file_is_io_error(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{not json", encoding="utf-8")
    code = dispatch(["validate", "--family", "trapdoor", "--config", str(path)])
    assert code == EXIT_IO


def test_load_config_reads_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"seed": 9, "K": [4]}), encoding="utf-8")
    cfg = load_config(str(path))
    assert cfg.seed == 9
    assert cfg.K == (4,)
    assert cfg.p0 == 0.9


# ---------------------------------------------------------------------------
# capacity


def test_capacity_json_matches_direct_solve(bsc_path, tmp_path, capsys):
    policy_csv = tmp_path / "policy.csv"
    json_path = tmp_path / "cap.json"
    code, payload, out = run_cli(
        capsys,
        ["capacity", "--channel", bsc_path,
         "--json", str(json_path), "--policy-csv", str(policy_csv)],
    )
    assert code == EXIT_OK
    direct = solve_capacity(channel_from_json(BSC_DOC))
    assert payload["C"] == direct.capacity
    assert payload["converged"] is True
    assert payload["grid_res"] == direct.grid_res
    assert payload["config"]["precision_bits"] == 256

    on_disk = json.loads(json_path.read_text(encoding="utf-8"))
    assert on_disk == payload

    lines = policy_csv.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "belief_0,state,input,probability"
    # one-state grid has a single belief point; ns * nx = 2 rows
    assert len(lines) == 1 + 2


def test_capacity_nats_flag_scales_by_ln2(bsc_path, capsys):
    _, bits, _ = run_cli(capsys, ["capacity", "--channel", bsc_path])
    _, nats, _ = run_cli(capsys, ["capacity", "--channel", bsc_path, "--nats"])
    assert bits["units"] == "bits"
    assert nats["units"] == "nats"
    assert math.isclose(nats["C"], bits["C"] * math.log(2.0), rel_tol=1e-15)


def test_capacity_nonconvergence_exit_code(capsys):
    code, payload, _ = run_cli(capsys, ["capacity", *SYM, "--max-iter", "1"])
    assert code == EXIT_NONCONVERGED
    assert payload["converged"] is False


# ---------------------------------------------------------------------------
# bounds


def test_bounds_symmetric_emits_finite_ctilde1(capsys):
    code, payload, _ = run_cli(
        capsys, ["bounds", "--family", "symmetric", "--params", "0.5,0.1"]
    )
    assert code == EXIT_OK
    assert isinstance(payload["ctilde1"], float)
    assert payload["ctilde1"] > 0.0
    assert isinstance(payload["ctilde1_star"], float)
    assert payload["dominance_flag"] is None
    assert payload["capacity"] is None


def test_bounds_trapdoor_serializes_infinity_as_string(capsys):
    code, payload, _ = run_cli(capsys, ["bounds", "--family", "trapdoor"])
    assert code == EXIT_OK
    assert payload["ctilde1"] == "inf"
    assert payload["ctilde1_star"] == "inf"


def test_bounds_dominance_flag_and_warning(capsys):
    # ctilde1_star for symmetric(0.5, 0.1) is ~1.53; a pretend capacity of
    # 2.0 sits above it and must flip the flag and trigger the warning
    code, payload, out = run_cli(
        capsys,
        ["bounds", "--family", "symmetric", "--params", "0.5,0.1",
         "--capacity", "2.0"],
    )
    assert code == EXIT_OK
    assert payload["dominance_flag"] is False
    assert payload["capacity"] == 2.0
    assert "warning:" in out

    code, payload, out = run_cli(
        capsys,
        ["bounds", "--family", "symmetric", "--params", "0.5,0.1",
         "--capacity", "0.37"],
    )
    assert payload["dominance_flag"] is True
    assert "warning:" not in out


def test_bounds_policies_csv(tmp_path, capsys):
    path = tmp_path / "policies.csv"
    code, payload, _ = run_cli(
        capsys,
        ["bounds", "--family", "symmetric", "--params", "0.5,0.1",
         "--policies-csv", str(path)],
    )
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "s0,s1,x0,x1"
    assert len(lines) == 1 + 4  # ns * ns pairs
    for line, (s0, s1) in zip(lines[1:], [(0, 0), (0, 1), (1, 0), (1, 1)]):
        cells = line.split(",")
        assert [int(cells[0]), int(cells[1])] == [s0, s1]
        assert int(cells[2]) == payload["policies"]["x0"][s0][s1]
        assert int(cells[3]) == payload["policies"]["x1"][s0][s1]


def test_bounds_solve_capacity_embeds_value(bsc_path, capsys):
    code, payload, _ = run_cli(
        capsys, ["bounds", "--channel", bsc_path, "--solve-capacity"]
    )
    assert code == EXIT_OK
    assert isinstance(payload["capacity"], float)
    assert payload["dominance_flag"] is True  # ctilde1_star > C for this kernel


# ---------------------------------------------------------------------------
# simulate


def test_simulate_single_episode_matches_run_episode(bsc_path, capsys):
    code, payload, _ = run_cli(
        capsys,
        ["simulate", "--channel", bsc_path, "--K", "6", "--pe", "1e-3",
         "--seed", "11"],
    )
    assert code == EXIT_OK

    spec = channel_from_json(BSC_DOC)
    cap = solve_capacity(spec)
    exp = solve_ctilde1(spec, capacity=cap.capacity)
    config = SchemeConfig(num_bits=6, error_target=1e-3)
    direct = run_episode(spec, config, cap.policy, exp.policies, seed=11)
    assert payload["message"] == direct.message
    assert payload["decoded"] == direct.decoded
    assert payload["steps"] == direct.steps
    assert payload["error"] == direct.error
    assert payload["truncated"] is False
    assert payload["rate"] == pytest.approx(6 / direct.steps)
    assert payload["seed"] == 11


def test_simulate_is_deterministic(bsc_path, capsys):
    args = ["simulate", "--channel", bsc_path, "--K", "4", "--pe", "1e-2",
            "--seed", "3"]
    _, first, _ = run_cli(capsys, args)
    _, second, _ = run_cli(capsys, args)
    assert first == second


def test_simulate_step_trace_rows_match_steps(bsc_path, tmp_path, capsys):
    trace = tmp_path / "steps.csv"
    code, payload, _ = run_cli(
        capsys,
        ["simulate", "--channel", bsc_path, "--K", "6", "--pe", "1e-3",
         "--seed", "5", "--trace-csv", str(trace)],
    )
    assert code == EXIT_OK
    lines = trace.read_text(encoding="utf-8").splitlines()
    assert lines[0] == ",".join(StepRecord._fields)
    assert len(lines) == 1 + payload["steps"]
    ts = [int(line.split(",")[0]) for line in lines[1:]]
    assert ts == list(range(1, payload["steps"] + 1))


def test_simulate_drpm_trace_requires_fraction_arithmetic(bsc_path, tmp_path, capsys):
    code = dispatch(
        ["simulate", "--channel", bsc_path, "--K", "4", "--pe", "1e-2",
         "--drpm-trace", str(tmp_path / "d.csv")]
    )
    assert code == EXIT_USAGE


def test_simulate_drpm_trace_covers_stage_one_steps(bsc_path, tmp_path, capsys):
    drpm = tmp_path / "drpm.csv"
    steps = tmp_path / "steps.csv"
    code, payload, _ = run_cli(
        capsys,
        ["simulate", "--channel", bsc_path, "--K", "6", "--pe", "1e-3",
         "--seed", "7", "--arithmetic", "fraction",
         "--drpm-trace", str(drpm), "--trace-csv", str(steps)],
    )
    assert code == EXIT_OK

    step_rows = steps.read_text(encoding="utf-8").splitlines()[1:]
    stage1_ts = [
        int(row.split(",")[0]) for row in step_rows if row.split(",")[1] == "1"
    ]
    drpm_rows = drpm.read_text(encoding="utf-8").splitlines()
    assert drpm_rows[0] == "t,w,u,interval_lo,interval_hi,x"
    body = [row.split(",") for row in drpm_rows[1:]]
    assert [int(r[0]) for r in body] == stage1_ts
    for r in body:
        assert int(r[1]) == payload["message"]
        u, lo, hi = float(r[2]), float(r[3]), float(r[4])
        assert 0.0 <= lo <= u <= hi <= 1.0
        assert int(r[5]) in (0, 1)


def test_simulate_multi_trial_rejects_trace_flags(bsc_path, tmp_path, capsys):
    code = dispatch(
        ["simulate", "--channel", bsc_path, "--K", "4", "--pe", "1e-2",
         "--trials", "3", "--trace-csv", str(tmp_path / "t.csv")]
    )
    assert code == EXIT_USAGE


def test_simulate_multi_trial_matches_run_span(bsc_path, capsys):
    code, payload, _ = run_cli(
        capsys,
        ["simulate", "--channel", bsc_path, "--K", "4", "--pe", "1e-2",
         "--trials", "25", "--seed", "2", "--arithmetic", "double"],
    )
    assert code == EXIT_OK

    spec = channel_from_json(BSC_DOC)
    cap = solve_capacity(spec)
    exp = solve_ctilde1(spec, capacity=cap.capacity)
    config = SchemeConfig(num_bits=4, error_target=1e-2, arithmetic="double")
    stats = run_span(
        spec, config, cap.policy, exp.policies, master_seed=2, start=0, stop=25
    )
    assert payload["n_trials"] == 25
    assert payload["mean_steps"] == stats.mean_steps
    assert payload["errors"] == stats.errors
    assert payload["truncations"] == stats.truncations


# ---------------------------------------------------------------------------
# sweep


SWEEP_RULE = ["--min-trials", "3", "--max-trials", "3", "--batch-size", "3",
              "--arithmetic", "double"]


def test_sweep_grid_emits_twelve_rows(tmp_path, capsys):
    out = tmp_path / "sweep.csv"
    code, payload, _ = run_cli(
        capsys,
        ["sweep", *SYM, "--K", "10,20,30", "--pe", "1e-3,1e-6,1e-9,1e-12",
         *SWEEP_RULE, "--seed", "5", "--out", str(out)],
    )
    assert code == EXIT_OK
    assert payload["rows"] == 12

    rows = read_sweep_csv(str(out))
    assert len(rows) == 12
    assert [(r.K, r.pe_target) for r in rows] == [
        (k, p) for k in (10, 20, 30) for p in (1e-3, 1e-6, 1e-9, 1e-12)
    ]
    header = out.read_text(encoding="utf-8").splitlines()[0]
    assert header == ",".join(SWEEP_COLUMNS)

    meta = json.loads((tmp_path / "sweep.csv.meta.json").read_text(encoding="utf-8"))
    assert meta["context"]["seed"] == 5
    assert meta["context"]["config"]["K"] == [10, 20, 30]
    assert [p["seed"] for p in meta["points"]] == [
        trial_seed(5, i) for i in range(12)
    ]


def test_sweep_byte_identical_across_jobs(tmp_path, capsys, monkeypatch):
    base = ["sweep", *SYM, "--K", "4,8", "--pe", "1e-2,1e-3",
            *SWEEP_RULE, "--seed", "1"]
    serial = tmp_path / "serial.csv"
    parallel = tmp_path / "parallel.csv"
    env_path = tmp_path / "env.csv"

    assert dispatch([*base, "--out", str(serial)]) == EXIT_OK
    assert dispatch([*base, "--out", str(parallel), "--jobs", "2"]) == EXIT_OK
    monkeypatch.setenv("UNIFEED_JOBS", "3")
    assert dispatch([*base, "--out", str(env_path)]) == EXIT_OK
    capsys.readouterr()

    assert serial.read_bytes() == parallel.read_bytes()
    assert serial.read_bytes() == env_path.read_bytes()


def test_sweep_resume_reuses_finished_rows(tmp_path, capsys):
    out = tmp_path / "sweep.csv"
    args = ["sweep", *SYM, "--K", "4", "--pe", "1e-2,1e-3",
            *SWEEP_RULE, "--seed", "2", "--out", str(out)]
    assert dispatch(args) == EXIT_OK
    first = out.read_bytes()
    assert dispatch(args) == EXIT_OK
    capsys.readouterr()
    assert out.read_bytes() == first


def test_jobs_must_be_positive(bsc_path, tmp_path, capsys):
    code = dispatch(
        ["sweep", "--channel", bsc_path, "--K", "4", "--pe", "1e-2",
         *SWEEP_RULE, "--out", str(tmp_path / "s.csv"), "--jobs", "0"]
    )
    assert code == EXIT_USAGE


def test_jobs_env_fallback_must_be_integer(bsc_path, tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("UNIFEED_JOBS", "many")
    code = dispatch(
        ["sweep", "--channel", bsc_path, "--K", "4", "--pe", "1e-2",
         *SWEEP_RULE, "--out", str(tmp_path / "s.csv")]
    )
    assert code == EXIT_USAGE


# ---------------------------------------------------------------------------
# drift


def test_drift_appends_report_rows(bsc_path, tmp_path, capsys):
    out = tmp_path / "drift.csv"
    args = ["drift", "--channel", bsc_path, "--K", "4", "--pe", "1e-9",
            "--episodes", "10", "--window", "5", "--burn-in", "2",
            "--out", str(out)]
    code, payload, _ = run_cli(capsys, args)
    assert code == EXIT_OK
    assert payload["passed"] is True
    assert [rep["stage"] for rep in payload["reports"]] == ["stage1", "stage2_h0"]

    assert dispatch(args) == EXIT_OK
    capsys.readouterr()
    lines = out.read_text(encoding="utf-8").splitlines()
    assert lines[0].startswith("channel,stage,window")
    assert len(lines) == 1 + 4  # two runs x two stages, single header


def test_drift_single_stage_selection(bsc_path, capsys):
    code, payload, _ = run_cli(
        capsys,
        ["drift", "--channel", bsc_path, "--K", "4", "--pe", "1e-2",
         "--episodes", "8", "--stage", "stage1"],
    )
    assert code == EXIT_OK
    assert [rep["stage"] for rep in payload["reports"]] == ["stage1"]
    assert payload["reports"][0]["n_samples"] > 0


def test_drift_infeasible_window_is_usage_error(bsc_path, capsys):
    # at pe=1e-2 confirmation lasts ~2 steps; a 50-step window never fits
    code = dispatch(
        ["drift", "--channel", bsc_path, "--K", "4", "--pe", "1e-2",
         "--episodes", "5", "--stage", "stage2_h0", "--window", "50"]
    )
    assert code == EXIT_USAGE


def test_drift_stage2_needs_two_stage_variant(bsc_path, capsys):
    code = dispatch(
        ["drift", "--channel", bsc_path, "--K", "4", "--pe", "1e-2",
         "--variant", "one_stage", "--stage", "stage2_h0"]
    )
    assert code == EXIT_USAGE


# ---------------------------------------------------------------------------
# console entry point


def test_console_script_round_trip():
    proc = subprocess.run(
        [sys.executable, "-m", "unifeed.cli", "validate", "--family", "trapdoor"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert "strictly_positive=false" in proc.stdout
