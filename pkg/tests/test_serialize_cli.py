import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hermitefilter import cli
from hermitefilter import config as cfgmod
from hermitefilter import serialize
from hermitefilter.basis import BasisSpec, CoeffVector
from hermitefilter.errors import BankFormatError
from hermitefilter.nlf import init_filter, run_online


# -- coefficient and matrix files -------------------------------------------

@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 5.0), st.floats(-20.0, 20.0), st.integers(0, 30), st.integers(0, 2**32 - 1))
def test_coeffs_round_trip(tmp_path_factory, alpha, beta, n, seed):
    c = CoeffVector(BasisSpec(alpha, beta, n), np.random.default_rng(seed).standard_normal(n + 1) * 1e3)
    path = tmp_path_factory.mktemp("c") / "c.csv"
    serialize.coeffs_to_csv(c, path)
    back = serialize.coeffs_from_csv(path)
    assert back.spec == c.spec and np.array_equal(back.values, c.values)


def test_coeffs_rejects_bad_file(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("alpha,beta,n_modes\n1.0,0.0,3\n1.0\n")
    with pytest.raises(ValueError):
        serialize.coeffs_from_csv(p)


def test_matrix_round_trip(tmp_path):
    spec = BasisSpec(2.4637, -1.5, 5)
    M = np.random.default_rng(0).standard_normal((6, 6))
    data = serialize.matrix_to_bytes(M, spec)
    assert len(data) == 8 + 16 + 8 * 36
    assert struct.unpack_from("<q", data)[0] == 6
    back, s = serialize.matrix_from_bytes(data)
    assert np.array_equal(back, M) and s == spec
    serialize.save_matrix(tmp_path / "m.bin", M, spec)
    assert np.array_equal(serialize.load_matrix(tmp_path / "m.bin")[0], M)
    serialize.matrix_to_csv(tmp_path / "m.csv", M)
    rows = (tmp_path / "m.csv").read_text().splitlines()
    assert len(rows) == 6 and float(rows[2].split(",")[3]) == M[2, 3]
    with pytest.raises(ValueError):
        serialize.matrix_from_bytes(data[:-8])


# -- window banks -----------------------------------------------------------

def test_bank_round_trip(tmp_path, almost_linear):
    _, bank = almost_linear
    path, manifest = serialize.save_bank(bank, tmp_path / "bank.hfke")
    data = path.read_bytes()
    J1, N1 = 7, 26
    header = struct.calcsize("<4sIqqdddd")
    trailer = struct.calcsize("<Bddqdd")
    assert len(data) == header + J1 * 8 + J1 * N1 * N1 * 8 + trailer
    magic, version, j1, n1, alpha, lw, overlap, dt_obs = struct.unpack_from("<4sIqqdddd", data)
    assert (magic, version, j1, n1, alpha, lw, overlap, dt_obs) == (b"HFKE", 1, 7, 26, 1.0, 3.0, 0.5, 0.01)
    back = serialize.load_bank(path)
    assert back.storage == bank.storage == J1 * N1 * N1
    assert back.betas.tolist() == bank.betas.tolist()
    assert back.killing == bank.killing and back.shift_threshold == bank.shift_threshold
    assert back.covered == bank.covered
    for a, b in zip(bank.windows, back.windows):
        assert np.array_equal(a.propagator, b.propagator)
        assert np.array_equal(a.rule.nodes, b.rule.nodes)
    lines = manifest.read_text().splitlines()
    assert lines[0] == "index,beta,n_intervals,entries,sha256" and len(lines) == 8


def test_loaded_bank_runs_identically(tmp_path, cubic):
    model, bank = cubic
    serialize.save_bank(bank, tmp_path / "b.hfke")
    back = serialize.load_bank(tmp_path / "b.hfke")
    y = np.concatenate([[0.0], np.cumsum(np.random.default_rng(1).normal(0, 0.1, 50))])
    a = run_online(bank, model, y)
    b = run_online(back, model, y)
    assert np.array_equal(a.mean, b.mean)


def test_bank_corruption_detected(tmp_path, cubic):
    _, bank = cubic
    path, _ = serialize.save_bank(bank, tmp_path / "b.hfke")
    data = bytearray(path.read_bytes())
    with pytest.raises(BankFormatError):
        serialize.bank_from_bytes(b"XXXX" + bytes(data[4:]))
    with pytest.raises(BankFormatError):
        serialize.bank_from_bytes(bytes(data[:-1]))
    data[200] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(BankFormatError, match="checksum"):
        serialize.load_bank(path)


def test_bank_storage_assertion(cubic):
    _, bank = cubic

    class Lying:
        def __getattr__(self, name):
            return getattr(bank, name)

        storage = bank.storage + 1

    with pytest.raises(BankFormatError, match="expected"):
        serialize.bank_to_bytes(Lying())


def test_bank_table_version(tmp_path):
    from hermitefilter.nlf import Window, WindowBank
    from hermitefilter.basis import gauss_hermite_rule

    spec = BasisSpec(1.0, 0.0, 2)
    table = np.stack([np.eye(3) * (k + 1) for k in range(4)])
    bank = WindowBank((Window(spec, table, gauss_hermite_rule(6)),), 3.0, 0.5, 3.0, 0.01)
    data = serialize.bank_to_bytes(bank)
    assert struct.unpack_from("<I", data, 4)[0] == 2
    back = serialize.bank_from_bytes(data)
    assert np.array_equal(back.windows[0].propagator, table)
    assert back.storage == 4 * 9 and back.domain is None


# -- series CSVs ------------------------------------------------------------

def test_write_csv_repr_round_trip(tmp_path):
    v = np.random.default_rng(2).standard_normal(20)
    serialize.write_csv(tmp_path / "s.csv", ["a", "i", "flag"], [v, np.arange(20), v > 0])
    header, cols = serialize.read_csv(tmp_path / "s.csv")
    assert header == ["a", "i", "flag"]
    assert np.array_equal(cols["a"], v)
    assert (tmp_path / "s.csv").read_text().splitlines()[1].split(",")[1] == "0"
    with pytest.raises(ValueError):
        serialize.write_csv(tmp_path / "x.csv", ["a", "b"], [[1.0], [1.0, 2.0]])


def test_estimates_and_snapshots_csv(tmp_path, cubic):
    model, bank = cubic
    y = np.zeros(201)
    res = run_online(bank, model, y, recover_density=True, snapshot_every=100, grid=np.linspace(-3, 3, 7))
    serialize.estimates_to_csv(res, tmp_path / "e.csv")
    header, cols = serialize.read_csv(tmp_path / "e.csv")
    assert header == ["t", "mean", "mass", "window_index", "shift_count"]
    assert cols["t"].size == 200
    serialize.snapshots_to_csv(res, tmp_path / "s.csv")
    header, cols = serialize.read_csv(tmp_path / "s.csv")
    assert header == ["t", "x", "u_normalized"] and cols["x"].size == 2 * 7
    assert cols["u_normalized"].max() == 1.0


# -- configuration ----------------------------------------------------------

@pytest.mark.parametrize("name", cfgmod.EXPERIMENTS)
def test_config_round_trip(name):
    cfg = cfgmod.ExperimentConfig(name)
    assert cfgmod.loads(cfgmod.dumps(cfg), name) == cfg


def test_config_overrides_and_types():
    cfg = cfgmod.loads("[filter_cubic]\nseed = 7\nn_particles = 10, 20\nsingle_window = no\n", "filter_cubic")
    assert cfg["seed"] == 7 and cfg["n_particles"] == (10.0, 20.0) and cfg["single_window"] is False
    assert cfg["dt_obs"] == 0.01
    assert cfg.with_overrides(dt_obs="0.02")["dt_obs"] == 0.02


@pytest.mark.parametrize(
    "text",
    [
        "[filter_cubic]\nbogus = 1\n",
        "[filter_cubic]\nseed = x\n",
        "[filter_cubic]\nhorizon = -1\n",
        "not an ini file",
    ],
)
def test_config_errors(text):
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.loads(text, "filter_cubic")


def test_unknown_experiment():
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.ExperimentConfig("nope")


# -- command line -----------------------------------------------------------

def _run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_cli_translate_table(tmp_path, capsys):
    code, out, err = _run(["translate_table", "--out", str(tmp_path)], capsys)
    assert code == 0 and err == ""
    assert "translate_table.csv" in out
    header, cols = serialize.read_csv(tmp_path / "translate_table.csv")
    assert header == ["p0", "error_0", "error_3"]


def test_cli_config_error_json(tmp_path, capsys):
    code, _, err = _run(["filter_cubic", "--out", str(tmp_path), "--set", "bogus=1"], capsys)
    assert code == 2
    line = json.loads(err.strip())
    assert line["error"] == "config" and line["experiment"] == "filter_cubic" and "bogus" in line["message"]


def test_cli_missing_config_file(tmp_path, capsys):
    code, _, err = _run(["convergence", "--config", str(tmp_path / "none.ini")], capsys)
    assert code == 2 and json.loads(err)["error"] == "config"


def test_cli_seed_rules(tmp_path, capsys):
    code, _, err = _run(["scaling_demo", "--out", str(tmp_path), "--seed", "3"], capsys)
    assert code == 2 and "no seed" in json.loads(err)["message"]
    code, _, err = _run(["filter_cubic", "--out", str(tmp_path), "--seed", str(2**64)], capsys)
    assert code == 2


def test_cli_runtime_error_json(tmp_path, capsys):
    # N = 2 cannot meet the truncation tolerance
    code, _, err = _run(
        ["filter_custom", "--out", str(tmp_path), "--set", "n_modes=2", "--set", "alpha=3"], capsys
    )
    assert code == 1
    line = json.loads(err)
    assert line["error"] == "tolerance_unreachable"


def test_cli_custom_model_parse_error(tmp_path, capsys):
    code, _, err = _run(["filter_custom", "--out", str(tmp_path), "--set", "h=x+("], capsys)
    assert code == 2 and json.loads(err)["error"] == "config"


def test_cli_custom_filter_small(tmp_path, capsys):
    argv = ["filter_custom", "--out", str(tmp_path), "--set", "horizon=0.5", "--set", "n_particles=20"]
    code, out, _ = _run(argv, capsys)
    assert code == 0
    header, cols = serialize.read_csv(tmp_path / "estimates.csv")
    assert cols["t"].size == 50
    rows = dict(line.split(",") for line in (tmp_path / "summary.csv").read_text().splitlines()[1:])
    assert float(rows["steps"]) == 50 and float(rows["flops"]) == 50 * float(rows["matvec_size"])
    # timings go to stdout only, never into the artifacts
    assert "time online_seconds_per_step" in out
    assert not any("seconds" in k for k in rows)


@pytest.mark.parametrize(
    "argv",
    [
        ["scaling_demo"],
        ["convergence", "--set", "n_modes=5,15"],
        ["translate_table"],
        ["filter_custom", "--set", "horizon=0.3", "--set", "n_particles=10"],
    ],
)
def test_cli_determinism(tmp_path, capsys, argv):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(argv[:1] + ["--out", str(a)] + argv[1:]) == 0
    assert cli.main(argv[:1] + ["--out", str(b)] + argv[1:]) == 0
    capsys.readouterr()
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes(), n
