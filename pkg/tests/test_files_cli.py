import csv
import io
import json

import numpy as np
import pytest

from conftest import dimer_energy
from rwmp_lab.cli import main
from rwmp_lab.dft import HubbardOracle
from rwmp_lab.fermion import build_hubbard
from rwmp_lab.files import (csv_text, hamiltonian_from_dict, hamiltonian_to_dict, load_hamiltonian, load_vectors,
                            save_hamiltonian, save_vectors)


def _rows(text):
    return list(csv.reader(io.StringIO(text)))


def test_hamiltonian_round_trip_U(tmp_path):
    h = build_hubbard(3, 0.7, 2.5, [0.1, -0.2, 1 / 3])
    save_hamiltonian(h, tmp_path / "h.json", U=2.5)
    back = load_hamiltonian(tmp_path / "h.json")
    np.testing.assert_array_equal(back.t, h.t)
    np.testing.assert_array_equal(back.V, h.V)


def test_hamiltonian_round_trip_tensor():
    h = build_hubbard(2, 1.0, 4.0, [0.2, -0.2])
    back = hamiltonian_from_dict(json.loads(json.dumps(hamiltonian_to_dict(h))))
    np.testing.assert_array_equal(back.V, h.V)
    np.testing.assert_array_equal(back.t, h.t)


@pytest.mark.parametrize("doc", [
    {"t_matrix": [[0, 1], [1, 0]], "U": 1},
    {"n_sites": 2, "t_matrix": [[0, 1], [1, 0]]},
    {"n_sites": 2, "t_matrix": [[0, 1], [1, 0]], "U": 1, "V_tensor": []},
    {"n_sites": 3, "t_matrix": [[0, 1], [1, 0]], "U": 1},
])
def test_hamiltonian_spec_errors(doc):
    with pytest.raises(ValueError):
        hamiltonian_from_dict(doc)


def test_vectors_round_trip(tmp_path):
    a = np.array([0.1, 1 / 3, -2e-17])
    save_vectors(tmp_path / "v.json", v_s=a, density=[1.0, 1.0])
    back = load_vectors(tmp_path / "v.json")
    assert back["v_s"].tobytes() == a.tobytes()
    np.testing.assert_array_equal(back["density"], [1.0, 1.0])


def test_csv_text_formats():
    text = csv_text(["a", "b", "c", "d"], [(1, 0.1, True, None)])
    assert text == "a,b,c,d\n1,0.1,True,\n"


def test_cli_hamiltonian(tmp_path, capsys):
    assert main(["--out", str(tmp_path), "hamiltonian", "--U", "4"]) == 0
    rows = _rows(capsys.readouterr().out)
    assert rows[0] == ["label", "coefficient"]
    assert rows[-1][0] == "ground_energy"
    assert float(rows[-1][1]) == pytest.approx(dimer_energy(1.0, 4.0), abs=1e-10)
    assert (tmp_path / "hamiltonian.json").exists() and (tmp_path / "pauli_terms.csv").exists()
    assert main(["hamiltonian", "--hamiltonian", str(tmp_path / "hamiltonian.json")]) == 0
    again = _rows(capsys.readouterr().out)
    assert float(again[-1][1]) == pytest.approx(float(rows[-1][1]), abs=1e-12)


def test_cli_qpe(capsys):
    assert main(["--seed", "3", "qpe", "--v=-0.2,0.2"]) == 0
    row = _rows(capsys.readouterr().out)[1]
    E = HubbardOracle(2, 1.0, 4.0, 2).energy(np.array([-0.2, 0.2]))
    assert float(row[3]) == pytest.approx(E, abs=0.02)


def test_cli_rte(capsys):
    assert main(["rte"]) == 0
    row = _rows(capsys.readouterr().out)[1]
    assert float(row[4]) >= 0.99


def test_cli_qae(capsys):
    assert main(["qae", "--rounds", "200", "--eps", "0.05"]) == 0
    rows = _rows(capsys.readouterr().out)
    assert rows[0][:3] == ["label", "rounds", "accepted"]
    assert len(rows) > 1


def test_cli_invert_ks(tmp_path, capsys):
    assert main(["--out", str(tmp_path), "invert-ks", "--v=-0.5,0.5", "--tol", "1e-8"]) == 0
    capsys.readouterr()
    got = load_vectors(tmp_path / "ks_potential.json")
    np.testing.assert_allclose(got["density"], got["target"], atol=1e-8)


def test_cli_thermal_and_respond(tmp_path, capsys):
    save_vectors(tmp_path / "p.json", v_s=[0.2, -0.2])
    assert main(["thermal-density", "--potential-file", str(tmp_path / "p.json"), "--tau", "0.5"]) == 0
    rows = _rows(capsys.readouterr().out)
    assert sum(float(r[1]) for r in rows[2:]) == pytest.approx(2.0)
    assert main(["respond", "--v-s=0.2,-0.2", "--points", "5"]) == 0
    assert len(_rows(capsys.readouterr().out)) == 1 + 5 * 4


def test_cli_run_train_solve(tmp_path, capsys):
    cfg = {"backend": "oracle", "sweep": {"start": -1.0, "stop": 1.0, "points": 11}, "train": []}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    out = tmp_path / "run"
    assert main(["--config", str(tmp_path / "cfg.json"), "--out", str(out), "run-rwmp"]) == 0
    assert main(["--out", str(out), "train", "--data", str(out / "records.csv"), "--epochs", "3000"]) == 0
    assert main(["solve", "--model", str(out / "model_E_v.json"), "--v=-0.3,0.3"]) == 0
    rows = dict(_rows(capsys.readouterr().out.split("quantity,value\n")[-1]))
    E = HubbardOracle(2, 1.0, 4.0, 2).energy(np.array([-0.3, 0.3]))
    assert float(rows["energy"]) == pytest.approx(E, abs=1e-2)


def test_cli_config_errors(tmp_path, capsys):
    assert main(["run-rwmp"]) == 2
    (tmp_path / "bad.json").write_text(json.dumps({"backend": "gpu"}))
    assert main(["--config", str(tmp_path / "bad.json"), "run-rwmp"]) == 2
    assert "config error" in capsys.readouterr().err


def test_cli_value_errors(capsys):
    assert main(["thermal-density", "--tau", "0.1"]) == 1
    assert main(["solve", "--model", "missing.json", "--v=0,0"]) == 1
    assert "error" in capsys.readouterr().err
