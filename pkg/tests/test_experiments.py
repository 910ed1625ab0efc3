"""Runner plumbing: config parsing, fits, determinism, resume, calibration, CLI."""

import os

import numpy as np
import pytest

from brwlab.cli import main
from brwlab.errors import ConfigError, FitError
from brwlab.experiments import (
    CSV_HEADER,
    EXIT_CHECK_FAILED,
    EXIT_OK,
    EXIT_OPERATIONAL,
    ExperimentConfig,
    calibrate,
    fit_exponent,
    make_config,
    parse_config,
    read_rows,
    replica_seed,
    run,
)


def test_parse_config_values(tmp_path):
    cfg_file = tmp_path / "exp.cfg"
    cfg_file.write_text(
        "# comment line\n"
        "experiment = scaling\n"
        "dim = 4\n"
        "n_list = 64, 128, 256   # inline comment\n"
        "lambdas = 0.4, 0.2\n"
        "replicas = 7\n"
        "eps = 0.025\n"
        "out = out.csv\n"
    )
    cfg = make_config(str(cfg_file))
    assert cfg.experiment == "scaling"
    assert cfg.dim == 4
    assert cfg.n_list == (64, 128, 256)
    assert cfg.lambda_list == (0.4, 0.2)
    assert cfg.replicas == 7
    assert cfg.eps == 0.025
    assert cfg.out_path == "out.csv"


def test_parse_config_error_reports_line(tmp_path):
    cfg_file = tmp_path / "bad.cfg"
    cfg_file.write_text("experiment = scaling\nreplicas ten\n")
    with pytest.raises(ConfigError, match="bad.cfg:2"):
        make_config(str(cfg_file))


def test_config_validation():
    with pytest.raises(ConfigError, match="unknown experiment"):
        make_config(None, experiment="warp")
    with pytest.raises(ConfigError, match="dim"):
        make_config(None, experiment="scaling", dim=6)
    with pytest.raises(ConfigError, match="inadmissible"):
        make_config(None, experiment="scaling", offspring="binary", n_list=(4,))
    with pytest.raises(ConfigError, match="unknown configuration keys"):
        make_config(None, experiment="scaling", froop=3)


def test_flags_override_file(tmp_path):
    cfg_file = tmp_path / "exp.cfg"
    cfg_file.write_text("experiment = scaling\nseed = 5\ndim = 3\n")
    cfg = make_config(str(cfg_file), seed=11)
    assert cfg.seed == 11 and cfg.dim == 3


def test_replica_seeds_distinct():
    cfg = make_config(None, experiment="scaling")
    seeds = {
        tuple(replica_seed(cfg, n, 0.0, rep).generate_state(2))
        for n in (64, 128)
        for rep in range(5)
    }
    assert len(seeds) == 10


def test_fit_exponent_exact_power_law():
    rows = [{"n": n, "cap_exact": n**0.75} for n in (64, 256, 1024, 4096)]
    slope, intercept, r_sq = fit_exponent(rows, "n", "cap_exact")
    assert slope == pytest.approx(0.75, abs=1e-9)
    assert r_sq == pytest.approx(1.0, abs=1e-12)


def test_fit_exponent_degenerate_inputs():
    with pytest.raises(FitError):
        fit_exponent([{"n": 64, "y": 1.0}, {"n": 128, "y": 2.0}], "n", "y")
    rows = [{"n": n, "y": 0.0} for n in (64, 128, 256)]
    with pytest.raises(FitError):
        fit_exponent(rows, "n", "y")


def _tiny_cfg(tmp_path, name, **kw):
    defaults = dict(
        experiment="scaling",
        dim=3,
        n_list=(32, 64, 128),
        replicas=2,
        seed=7,
        workers=1,
        out_path=str(tmp_path / name),
    )
    defaults.update(kw)
    return ExperimentConfig(**defaults)


def test_run_writes_sorted_csv(tmp_path):
    cfg = _tiny_cfg(tmp_path, "a.csv")
    code = run(cfg, log=lambda *a, **k: None)
    assert code in (EXIT_OK, EXIT_CHECK_FAILED)  # tiny sizes may miss the slope window
    lines = open(cfg.out_path).read().splitlines()
    assert lines[0] == CSV_HEADER
    assert len(lines) == 1 + 3 * 2
    rows = read_rows(cfg.out_path)
    keys = [(int(r["n"]), int(r["replica"])) for r in rows]
    assert keys == sorted(keys)
    for r in rows:
        assert r["lambda"] == "" and r["wall_seconds"] == ""
        assert float(r["cap_exact"]) > 0
        assert int(r["range_count"]) >= 1


def test_rerun_is_byte_identical(tmp_path):
    cfg_a = _tiny_cfg(tmp_path, "a.csv")
    cfg_b = _tiny_cfg(tmp_path, "b.csv")
    run(cfg_a, log=lambda *a, **k: None)
    run(cfg_b, log=lambda *a, **k: None)
    assert open(cfg_a.out_path, "rb").read() == open(cfg_b.out_path, "rb").read()


def test_worker_count_does_not_change_bytes(tmp_path):
    cfg_a = _tiny_cfg(tmp_path, "a.csv", workers=1)
    cfg_b = _tiny_cfg(tmp_path, "b.csv", workers=2)
    run(cfg_a, log=lambda *a, **k: None)
    run(cfg_b, log=lambda *a, **k: None)
    assert open(cfg_a.out_path, "rb").read() == open(cfg_b.out_path, "rb").read()


def test_resume_skips_done_rows(tmp_path):
    partial = _tiny_cfg(tmp_path, "c.csv", replicas=1)
    run(partial, log=lambda *a, **k: None)
    full = _tiny_cfg(tmp_path, "c.csv", replicas=2)
    messages = []
    run(full, log=messages.append)
    assert any("resuming" in m for m in messages)
    fresh = _tiny_cfg(tmp_path, "d.csv", replicas=2)
    run(fresh, log=lambda *a, **k: None)
    assert open(full.out_path, "rb").read() == open(fresh.out_path, "rb").read()


def test_zero_replicas_header_only(tmp_path):
    cfg = _tiny_cfg(tmp_path, "e.csv", replicas=0)
    assert run(cfg, log=lambda *a, **k: None) == EXIT_OK
    assert open(cfg.out_path).read() == CSV_HEADER + "\n"


def test_intersection_rows(tmp_path):
    cfg = ExperimentConfig(
        experiment="intersection",
        dim=3,
        n_list=(128,),
        lambda_list=(0.4, 0.2),
        replicas=2,
        mc_reps=100,
        probe_count=4,
        seed=3,
        out_path=str(tmp_path / "i.csv"),
    )
    run(cfg, log=lambda *a, **k: None)
    rows = read_rows(cfg.out_path)
    assert len(rows) == 4
    assert {r["lambda"] for r in rows} == {"0.4", "0.2"}
    for r in rows:
        assert 0.0 <= float(r["max_escape"]) <= 1.0


def test_intersection_requires_lambdas(tmp_path):
    cfg = ExperimentConfig(
        experiment="intersection", n_list=(64,), replicas=1,
        out_path=str(tmp_path / "x.csv"),
    )
    with pytest.raises(ConfigError):
        run(cfg, log=lambda *a, **k: None)


def test_calibrate_fresh_passes(capsys):
    assert calibrate() is True
    out = capsys.readouterr().out
    assert "[FAIL]" not in out
    assert out.count("[PASS]") >= 10


def test_calibrate_catches_corrupt_cache(tmp_path, capsys):
    # valid magic, wrong payload: positive but non-harmonic values
    import struct

    from brwlab.green import CACHE_MAGIC, DEFAULT_NEAR_RADIUS, _build_dense, _canonical_items

    r0 = DEFAULT_NEAR_RADIUS[3]
    dense = _build_dense(3, r0)
    items = _canonical_items(dense, 3)
    vals = np.array([v for _, v in items])
    vals[100] *= 1.5  # break harmonicity but stay positive
    with open(tmp_path / f"green_d3_r{r0}.grnt", "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<III", 1, 3, r0))
        fh.write(vals.astype("<f8").tobytes())
    ok = calibrate(cache_dir=str(tmp_path), dims=(3,))
    assert ok is False
    assert "[FAIL]" in capsys.readouterr().out


def test_cli_calibrate_rejects_dim_six(capsys):
    assert main(["calibrate", "--dim", "6"]) == EXIT_OPERATIONAL


def test_cli_sample_tree_round_trip(tmp_path):
    from brwlab.trees import import_tree

    out = str(tmp_path / "tree.txt")
    assert main(["sample-tree", "--n", "33", "--seed", "4", "--out", out]) == EXIT_OK
    tree = import_tree(out)
    assert tree.size == 33


def test_cli_sample_brw(tmp_path):
    from brwlab.walks import import_range

    out = str(tmp_path / "range.bin")
    code = main(["sample-brw", "--n", "64", "--dim", "3", "--seed", "4", "--out", out])
    assert code == EXIT_OK
    rs = import_range(out)
    assert rs.count >= 1
    assert os.path.exists(out + ".snake.csv")


def test_cli_experiment_with_config(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    out = tmp_path / "out.csv"
    cfg_file.write_text(
        "experiment = cardinality\ndim = 3\nn_list = 32,64,128\nreplicas = 2\nseed = 2\n"
        f"out = {out}\n"
    )
    code = main(["cardinality", "--config", str(cfg_file)])
    assert code in (EXIT_OK, EXIT_CHECK_FAILED)
    assert out.exists()


def test_cli_bad_config_is_operational_error(tmp_path):
    cfg_file = tmp_path / "bad.cfg"
    cfg_file.write_text("experiment = scaling\nreplicas = pony\n")
    assert main(["scaling", "--config", str(cfg_file)]) == EXIT_OPERATIONAL
