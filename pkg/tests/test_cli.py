import json

import pytest

from hardylab.cli import build_parser, main


def test_version(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--version"])
    assert e.value.code == 0
    assert "hardylab" in capsys.readouterr().out


def test_unknown_subcommand_is_argparse_error():
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == 2


def test_spectrum_pass_exit_zero(tmp_path, capsys):
    code = main(["spectrum", "--set", "mesh_n=400",
                 "--set", "eps_values=[0.1,0.05]",
                 "--out", str(tmp_path)])
    out = capsys.readouterr().out
    assert code == 0
    assert "spectrum: PASS" in out
    assert (tmp_path / "spectrum.csv").exists()
    assert (tmp_path / "manifest.json").exists()


def test_bad_override_exits_two(tmp_path, capsys):
    code = main(["spectrum", "--set", "bogus=1", "--out", str(tmp_path)])
    assert code == 2
    assert "unknown config keys" in capsys.readouterr().err


def test_underresolved_exits_two(tmp_path, capsys):
    code = main(["spectrum", "--set", "mesh_n=20",
                 "--set", "eps_values=[0.01]", "--out", str(tmp_path)])
    assert code == 2


def test_invariant_failure_exits_one(tmp_path, capsys):
    code = main(["observability", "--set", "mesh_n=100", "--set", "nt=100",
                 "--set", "m_values=[10,10]", "--out", str(tmp_path)])
    out = capsys.readouterr().out
    assert code == 1
    assert "FAIL" in out
    assert "observability: INVARIANT" in out


def test_config_file_and_experiment_mismatch(tmp_path, capsys):
    cfgfile = tmp_path / "cfg.json"
    cfgfile.write_text(json.dumps({"experiment": "blowup", "mesh_n": 400}))
    code = main(["spectrum", "--config", str(cfgfile), "--out", str(tmp_path)])
    assert code == 2
    assert "names experiment" in capsys.readouterr().err


def test_config_file_drives_run(tmp_path, capsys):
    cfgfile = tmp_path / "cfg.json"
    cfgfile.write_text(json.dumps({
        "experiment": "spectrum", "mesh_n": 400, "eps_values": [0.1, 0.05],
    }))
    code = main(["spectrum", "--config", str(cfgfile), "--out", str(tmp_path)])
    assert code == 0
    # --out wins over the config's out_dir
    assert (tmp_path / "spectrum.csv").exists()


def test_missing_config_file(tmp_path, capsys):
    code = main(["spectrum", "--config", str(tmp_path / "nope.json")])
    assert code == 2
    assert "not found" in capsys.readouterr().err


def test_server_unreachable_exits_two(tmp_path, capsys):
    code = main(["spectrum", "--set", "mesh_n=400",
                 "--server", "http://127.0.0.1:1",  # nothing listens here
                 "--out", str(tmp_path)])
    assert code == 2
    assert "cannot reach service" in capsys.readouterr().err


def test_parser_has_all_subcommands():
    parser = build_parser()
    text = parser.format_help()
    for name in ("hardy", "spectrum", "blowup", "stabilize", "weights",
                 "carleman", "control", "observability", "serve"):
        assert name in text
