import json
import subprocess
import sys

import pytest

from spepattern.cli import format_sweep_table, main, split_configs, SweepRow

TRAIN = ["--steps", "2", "--snapshot-every", "1", "--batch-size", "4", "--base-channels", "8", "--z-dim", "8"]


@pytest.fixture(scope="module")
def hv_data(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli") / "hv"
    assert main(["synth", "--out", str(d), "--n", "8", "--size", "8", "--sym", "hv"]) == 0
    return d


@pytest.fixture(scope="module")
def run(hv_data):
    out = hv_data.parent / "run"
    assert main(["train", str(hv_data), "--spe", "hv", "--out", str(out), *TRAIN]) == 0
    return out


def test_help_shows_defaults():
    out = subprocess.run([sys.executable, "-m", "spepattern", "train", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    assert "(default: 1.0)" in out.stdout and "(default: 2000)" in out.stdout


def test_bad_flag_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--no-such-flag"])
    assert exc.value.code == 2


@pytest.mark.parametrize("argv", [["synth", "--out", "x", "--sym", "hq"], ["train", "d", "--out", "r", "--attn", "eattn@5"]])
def test_invalid_values_exit_2(argv):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2


def test_square_odd_size_accepted(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "d"), "--n", "2", "--size", "15", "--sym", "np"]) == 0


def test_verify(hv_data, tmp_path, capsys):
    assert main(["verify", str(hv_data), "--json", str(tmp_path / "r.json")]) == 0
    report = json.loads((tmp_path / "r.json").read_text())
    assert {"h", "v"} <= set(report["common_set"])
    assert "common symmetry set" in capsys.readouterr().out


def test_verify_asymmetric_exit_3(tmp_path):
    main(["synth", "--out", str(tmp_path / "a"), "--n", "4", "--size", "8", "--sym", "none"])
    assert main(["verify", str(tmp_path / "a")]) == 3


def test_verify_empty_dir_exit_1(tmp_path):
    assert main(["verify", str(tmp_path)]) == 1


def test_train_outputs(run):
    assert sorted(p.name for p in (run / "checkpoints").iterdir()) == ["step_000001.spgc", "step_000002.spgc"]
    assert (run / "losses.csv").is_file() and (run / "config.json").is_file()


def test_train_spe_mismatch_exit_4(hv_data, tmp_path):
    assert main(["train", str(hv_data), "--spe", "np", "--out", str(tmp_path / "r"), *TRAIN]) == 4


def test_train_attention_on_missing_resolution_exit_2(hv_data, tmp_path):
    assert main(["train", str(hv_data), "--attn", "eattn@16", "--out", str(tmp_path / "r"), *TRAIN]) == 2


def test_train_nan_exit_5(hv_data, tmp_path):
    assert main(["train", str(hv_data), "--lr", "nan", "--out", str(tmp_path / "r"), *TRAIN]) == 5


def test_generate(run, tmp_path):
    ck = run / "checkpoints" / "step_000002.spgc"
    assert main(["generate", str(ck), "--out", str(tmp_path / "a.png")]) == 0
    assert main(["generate", str(ck), "--out", str(tmp_path / "b.png")]) == 0
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()


def test_generate_bad_magic_exit_6(tmp_path):
    (tmp_path / "x.spgc").write_bytes(b"NOPE" + bytes(20))
    assert main(["generate", str(tmp_path / "x.spgc"), "--out", str(tmp_path / "o.png")]) == 6


def test_generate_missing_exit_1(tmp_path):
    assert main(["generate", str(tmp_path / "none.spgc"), "--out", str(tmp_path / "o.png")]) == 1


def test_evaluate(hv_data, run, tmp_path, capsys):
    ck = run / "checkpoints" / "step_000002.spgc"
    assert main(["evaluate", str(hv_data), str(ck), "--nfake", "16", "--out", str(tmp_path / "m.json")]) == 0
    rep = json.loads((tmp_path / "m.json").read_text())
    assert rep["n_fake"] == 16 and rep["k_pr"] == 3 and rep["k_dc"] == 5
    capsys.readouterr()
    assert main(["evaluate", str(hv_data), "--fake-from-real"]) == 0
    assert json.loads(capsys.readouterr().out)["precision"] == 1.0


def test_evaluate_needs_checkpoint(hv_data):
    assert main(["evaluate", str(hv_data)]) == 2


def test_split_configs():
    assert split_configs("hv,np,hvnp,[hv;np],none") == ["hv", "np", "hvnp", "[hv;np]", "none"]
    assert split_configs("[hv,np],hv") == ["[hv,np]", "hv"]


def test_sweep_table_order():
    rows = [SweepRow("hv", fid=3.0), SweepRow("np", error="boom"), SweepRow("none", fid=1.0)]
    lines = format_sweep_table(rows).splitlines()
    assert lines[2].startswith("| none*") and lines[3].startswith("| hv |") and "boom" in lines[4]


def test_sweep(hv_data, tmp_path, capsys):
    out = tmp_path / "sw"
    code = main(["sweep", str(hv_data), "--configs", "hv,np,none", "--out", str(out), "--nfake", "8", *TRAIN])
    assert code == 0
    rows = json.loads((out / "sweep.json").read_text())
    assert [r["config"] for r in rows] == ["hv", "np", "none"]
    assert rows[1]["error"].startswith("SpeMismatch") and not rows[0]["error"]
    assert "|" in capsys.readouterr().out
