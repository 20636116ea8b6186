import json
from dataclasses import replace

import pytest

from subway_ems.cli import main
from subway_ems.experiment import ExperimentConfig, GridConfig, Pipeline, StaleArtifact


def tiny_config(out, **kw):
    base = dict(
        n_optimization=12,
        n_assessment=6,
        grid=GridConfig(n_soc=11, n_pm10=11, n_braking=5, n_levels=5),
        k_offline=4,
        k_residual=4,
        k_online=4,
        lambda_scan=(3e-3,),
        lambda_scan_scenarios=4,
        output_dir=str(out),
    )
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def built(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = tiny_config(out)
    path = out / "cfg.json"
    cfg.save(path)
    for stage in (["gen-scenarios"], ["fit-noise"], ["offline-sdpo"], ["assess", "--policies", "sdpo"]):
        assert main(["--config", str(path), *stage]) == 0
    return out, path


def manifest(out, stage):
    return json.loads((out / f"{stage}.manifest.json").read_text())


def test_unknown_subcommand_exits_nonzero():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code != 0


def test_assess_before_offline_fails_cleanly(tmp_path, capsys):
    cfg = tiny_config(tmp_path)
    cfg.save(tmp_path / "cfg.json")
    assert main(["--config", str(tmp_path / "cfg.json"), "gen-scenarios"]) == 0
    code = main(["--config", str(tmp_path / "cfg.json"), "assess", "--policies", "sdpo"])
    assert code != 0
    assert "offline-sdpo" in capsys.readouterr().err


def test_manifest_contents(built):
    out, _ = built
    man = manifest(out, "gen-scenarios")
    assert man["config_hash"] == ExperimentConfig.load(out / "cfg.json").config_hash()
    assert set(man["seeds"]) == {"optimization", "assessment"}
    assert "numpy" in man["versions"] and "optimization.csv" in man["outputs"]


def test_rerun_reproduces_hashes(built):
    out, path = built
    before = manifest(out, "gen-scenarios")["outputs"]
    fit_before = manifest(out, "fit-noise")["outputs"]
    assert main(["--config", str(path), "gen-scenarios"]) == 0
    assert main(["--config", str(path), "fit-noise"]) == 0
    assert manifest(out, "gen-scenarios")["outputs"] == before
    assert manifest(out, "fit-noise")["outputs"] == fit_before


def test_changed_config_is_stale(built, capsys):
    out, path = built
    other = replace(ExperimentConfig.load(path), seed_optimization=77, seed_assessment=78)
    with pytest.raises(StaleArtifact):
        Pipeline(other).offline_sdpo()
    assert main(["--config", str(path), "--seed", "77", "offline-sdpo"]) != 0
    assert "config" in capsys.readouterr().err


def test_tampered_artifact_is_stale(built, tmp_path):
    out, path = built
    cfg = ExperimentConfig.load(path)
    copy = tmp_path / "copy"
    copy.mkdir()
    for f in out.iterdir():
        if f.is_file():
            (copy / f.name).write_bytes(f.read_bytes())
    data = bytearray((copy / "marginals.npy").read_bytes())
    data[len(data) // 2] ^= 0xFF
    (copy / "marginals.npy").write_bytes(bytes(data))
    with pytest.raises(StaleArtifact):
        Pipeline(replace(cfg, output_dir=str(copy))).offline_sdpo()


def test_report_and_compare(built, capsys):
    out, path = built
    assert main(["--config", str(path), "report", "--policies", "sdpo"]) == 0
    table = json.loads((out / "summary.json").read_text())
    row = table["policies"]["sdpo"]
    assert {"money_savings", "pm10_mean", "grid_energy_savings_kwh", "online_ms"} <= set(row)
    assert main(["--config", str(path), "compare", "--a", "sdpo", "--b", "sdpo"]) == 0
    assert json.loads((out / "compare_sdpo_vs_sdpo.json").read_text())["ties"] == 6


def test_export_and_validate(built):
    out, path = built
    assert main(["--config", str(path), "export-milp", "--t0", "10", "--horizon", "4", "--scenario", "1"]) == 0
    assert (out / "subproblem_t10_h4_s1.mps").read_text().startswith("NAME")
    assert main(["--config", str(path), "validate-discretization"]) == 0
    rep = json.loads((out / "discretization.json").read_text())
    assert rep["delta_2min"]["mean_rel_error_pct"][1] <= 1.0


def test_simulate_writes_trace(built):
    out, path = built
    assert main(["--config", str(path), "simulate", "--policy", "reference", "--scenario", "2"]) == 0
    lines = (out / "trace_reference_2.csv").read_text().splitlines()
    assert len(lines) == 721


def test_config_round_trip(tmp_path):
    cfg = tiny_config(tmp_path)
    cfg.save(tmp_path / "c.json")
    back = ExperimentConfig.load(tmp_path / "c.json")
    assert back.config_hash() == cfg.config_hash()
    assert replace(back, output_dir="elsewhere").config_hash() == cfg.config_hash()
    with pytest.raises(ValueError):
        replace(cfg, seed_assessment=cfg.seed_optimization)
