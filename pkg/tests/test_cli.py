import json

import pytest

from bsdelab.cli import EXPERIMENTS, list_experiments, load_config, main, run

ALL_NAMES = {"paths-sanity", "decouple-sandwich", "sde-coupling-scaling", "bsde-oracle",
             "bmo-functions", "sliceable", "fefferman", "fbsde-weighted-bmo",
             "weight-assembly", "tail-goodlambda"}


def test_registry_contents():
    rows = list_experiments()
    assert {r["name"] for r in rows} == ALL_NAMES
    assert all(r["verifies"] for r in rows)
    assert all(r["runtime_s"] < 600 for r in rows)


def test_bare_name_runnable(tmp_path):
    cfg = load_config("bmo-functions")
    manifest = run(cfg, tmp_path / "out")
    assert manifest["pass"] is True
    files = {o["file"] for o in manifest["outputs"]}
    emitted = {p.name for p in (tmp_path / "out").iterdir()}
    assert emitted == files | {"manifest.json"}
    assert all(o["verifies"] for o in manifest["outputs"])


def test_unknown_experiment():
    with pytest.raises(ValueError):
        load_config("no-such-thing")
    assert main(["run", "no-such-thing"]) == 1


def test_config_file_overrides(tmp_path):
    cfg_file = tmp_path / "exp.toml"
    cfg_file.write_text(
        'experiment = "paths-sanity"\n[ensemble]\nM = 5000\nseed = 77\n', encoding="utf-8")
    cfg = load_config(str(cfg_file))
    assert cfg["ensemble"]["M"] == 5000 and cfg["ensemble"]["seed"] == 77
    assert cfg["grid"] == EXPERIMENTS["paths-sanity"].defaults["grid"]
    manifest = run(cfg, tmp_path / "out")
    assert manifest["config"]["ensemble"]["M"] == 5000


def test_defaults_not_mutated_by_overrides(tmp_path):
    before = EXPERIMENTS["bmo-functions"].defaults["ensemble"]["seed"]
    code = main(["run", "bmo-functions", "--seed", "424242",
                 "--out", str(tmp_path / "a")])
    assert code == 0
    assert EXPERIMENTS["bmo-functions"].defaults["ensemble"]["seed"] == before


def test_rerun_byte_identical(tmp_path):
    for out in ("r1", "r2"):
        assert main(["run", "sliceable", "--out", str(tmp_path / out)]) == 0
    a = (tmp_path / "r1" / "sliceable_constant.csv").read_bytes()
    b = (tmp_path / "r2" / "sliceable_constant.csv").read_bytes()
    assert a == b


def test_c8_exponent_threshold_enforced(tmp_path):
    cfg = load_config("decouple-sandwich")
    cfg["params"].update({"theta_z": 1.0, "s_inf": 0.5, "L_z": 5.0, "p": 2.0})
    with pytest.raises(ValueError, match="requires"):
        run(cfg, tmp_path / "bad")
    cfg_file = tmp_path / "bad.toml"
    cfg_file.write_text('experiment = "decouple-sandwich"\n'
                        '[params]\ntheta_z = 1.0\ns_inf = 0.5\nL_z = 5.0\n',
                        encoding="utf-8")
    assert main(["run", str(cfg_file), "--out", str(tmp_path / "bad2")]) == 1


def test_show_manifest(tmp_path, capsys):
    main(["run", "bmo-functions", "--out", str(tmp_path / "m")])
    capsys.readouterr()
    assert main(["show-manifest", str(tmp_path / "m")]) == 0
    out = capsys.readouterr().out
    assert json.loads(out)["experiment"] == "bmo-functions"


def test_list_command(capsys):
    assert main(["list"]) == 0
    out = capsys.readouterr().out
    for name in ALL_NAMES:
        assert name in out
