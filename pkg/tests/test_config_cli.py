import csv
import json
import subprocess
import sys

import pytest

from steinlab.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_PASS, main
from steinlab.config import SEED_ENV, load_config, parse_seed
from steinlab.errors import ConfigError
from steinlab.experiments import CSV_COLUMNS

SMALL_BOUNDS = """
[experiment]
k_grid = [1, 4]
kd_pairs = 2000
[mc]
replications = 2000
"""

SMALL_KERNEL = """
[experiment]
probes = 4
pairs = 1000
kd_pairs = 2000
"""


def _write(tmp_path, text, name="c.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_defaults_without_file():
    spec = load_config(None, "bounds", environ={})
    assert spec.dim == 2 and spec.R == 1.0
    assert spec.k_grid == (1, 4, 16, 64)
    assert [p.name for p in spec.profiles] == ["g_plus", "g_balanced"]
    assert load_config(None, "rates", environ={}).k_grid == tuple(2**j for j in range(9))


@pytest.mark.parametrize("text", [
    "[experiment]\nfoo = 1\n",
    "[experiment]\nradius = -1.0\n",
    "[experiment]\ndim = 1\n",
    "[experiment]\ndim = 2.5\n",
    "[experiment]\nk_grid = [4, 1]\n",
    "[experiment]\nprofiles = [\"nope\"]\n",
    "[mc]\nreplications = 0\n",
    "[mc]\nmaster_seed = -3\n",
    "[kernel]\neta_center = [0.1]\n",
    "[experiment\n",
    "[profiles.bad]\ncoeffs = [[1.0, 1.0]]\n",
])
def test_invalid_configs(tmp_path, text):
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, text), "bounds", environ={})


def test_unknown_experiment_and_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(None, "fit", environ={})
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "absent.toml"), "bounds", environ={})


def test_seed_precedence(tmp_path):
    path = _write(tmp_path, "[mc]\nmaster_seed = 5\n")
    assert load_config(path, "bounds", environ={}).mc.master_seed == 5
    assert load_config(path, "bounds", environ={SEED_ENV: "9"}).mc.master_seed == 9
    assert load_config(path, "bounds", seed="11", environ={SEED_ENV: "9"}).mc.master_seed == 11


def test_parse_seed_range():
    assert parse_seed(str(2**64 - 1), "s") == 2**64 - 1
    for bad in ("-1", str(2**64), "abc", "1.5"):
        with pytest.raises(ConfigError):
            parse_seed(bad, "s")


def test_custom_profile(tmp_path):
    path = _write(tmp_path, """
[experiment]
profiles = ["tent"]
[profiles.tent]
coeffs = [1.0, -1.0]
""")
    spec = load_config(path, "bounds", environ={})
    assert spec.profiles[0].name == "tent"
    assert spec.resolved["profiles"]["tent"]["coeffs"] == [[1.0, -1.0]]
    two = load_config(_write(tmp_path, """
[experiment]
profiles = ["tent2"]
[profiles.tent2]
breaks = [0.0, 0.5, 1.0]
coeffs = [[1.0, -1.0], [1.0, -1.0]]
""", "p2.toml"), "bounds", environ={})
    assert two.profiles[0].moment(2, 2) == pytest.approx(spec.profiles[0].moment(2, 2))


def test_cli_config_errors_exit_2(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv(SEED_ENV, raising=False)
    assert main(["bounds", "--config", _write(tmp_path, "[experiment]\nfoo = 1\n")]) == EXIT_CONFIG
    assert "foo" in capsys.readouterr().err
    path = _write(tmp_path, SMALL_BOUNDS, "ok.toml")
    assert main(["bounds", "--config", path, "--workers", "0"]) == EXIT_CONFIG
    assert main(["bounds", "--config", path, "--seed", "-4"]) == EXIT_CONFIG
    monkeypatch.setenv(SEED_ENV, "not-a-seed")
    assert main(["bounds", "--config", path]) == EXIT_CONFIG
    with pytest.raises(SystemExit) as exc:
        main(["bounds"])
    assert exc.value.code == EXIT_CONFIG
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate", "--config", path])
    assert exc.value.code == EXIT_CONFIG


def test_cli_bounds_outputs(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv(SEED_ENV, raising=False)
    path = _write(tmp_path, SMALL_BOUNDS)
    out = tmp_path / "out"
    assert main(["bounds", "--config", path, "--out", str(out)]) == EXIT_PASS
    lines = capsys.readouterr().out.splitlines()
    assert all(line.startswith("PASS") for line in lines[:-1])
    with open(out / "results.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert ",".join(rows[0]) == ("profile,d,R,k,n_mc,seed,w1,w1_se,bound_classical,"
                                 "bound_third_cumulant,bound_o1k,kd_empirical")
    assert len(rows) == 1 + 2 * 2
    plus = [r for r in rows[1:] if r[0] == "g_plus"]
    assert all(r[10] == "" for r in plus)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["passed"] and summary["provenance"]["seed"] == 20240601


def test_cli_reruns_are_byte_identical(tmp_path, monkeypatch):
    path = _write(tmp_path, SMALL_BOUNDS)
    monkeypatch.setenv(SEED_ENV, "77")
    main(["bounds", "--config", path, "--out", str(tmp_path / "a")])
    main(["bounds", "--config", path, "--out", str(tmp_path / "b"), "--workers", "3"])
    monkeypatch.delenv(SEED_ENV)
    main(["bounds", "--config", path, "--out", str(tmp_path / "c")])
    a = (tmp_path / "a" / "results.csv").read_bytes()
    assert a == (tmp_path / "b" / "results.csv").read_bytes()
    assert a != (tmp_path / "c" / "results.csv").read_bytes()
    assert ",77," in a.decode()


def test_cli_verify_kernel_and_negative_control(tmp_path):
    path = _write(tmp_path, SMALL_KERNEL)
    assert main(["verify-kernel", "--config", path, "--out", str(tmp_path / "ok")]) == EXIT_PASS
    bad = _write(tmp_path, SMALL_KERNEL + "[kernel]\neta_center = [0.5, 0.0]\neta_radius = 0.25\n",
                 "bad.toml")
    assert main(["verify-kernel", "--config", bad, "--out", str(tmp_path / "bad")]) == EXIT_FAIL
    checks = (tmp_path / "bad" / "checks.csv").read_text()
    assert "divergence_identity" in checks


def test_rates_curves_are_two_column(tmp_path, monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)
    path = _write(tmp_path, """
[experiment]
k_grid = [1, 2, 4]
kd_pairs = 2000
separation_replications = 2000
[mc]
replications = 1000
""")
    out = tmp_path / "r"
    main(["rates", "--config", path, "--out", str(out)])
    dat = (out / "bound_o1k_g_balanced.dat").read_text().splitlines()
    assert dat[0].startswith("#")
    body = [line.split() for line in dat[1:]]
    assert [int(r[0]) for r in body] == [1, 2, 4]
    assert all(len(r) == 2 for r in body)
    checks = (out / "checks.csv").read_text()
    for name in ("slope_classical_g_plus", "slope_o1k_g_balanced", "w1_separation_k4"):
        assert name in checks


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "steinlab", "bounds", "--config",
                           _write(tmp_path, "[experiment]\nfoo = 1\n")],
                          capture_output=True, text=True)
    assert proc.returncode == EXIT_CONFIG
