import json

import numpy as np
import pytest

from rwmp_lab.dft import HubbardOracle, invert_to_ks
from rwmp_lab.fermion import jordan_wigner, build_hubbard, shift_and_scale
from rwmp_lab.ml import MLModel, backward, load_model
from rwmp_lab.rwmp import (RECORD_COLUMNS, ConfigError, PotentialSchedule, RWMPConfig, batch_dispatch,
                           classical_user_solve, process_system, ramp_potential, records_to_csv, run_rwmp)


@pytest.fixture(scope="module")
def oracle():
    return HubbardOracle(2, 1.0, 4.0, 2)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    d = tmp_path_factory.mktemp("models")
    cfg = RWMPConfig(backend="oracle", quantities="vs", sweep={"start": -2.0, "stop": 2.0, "points": 41},
                     train=["E[v]", "F[n]", "vs[v]"], train_epochs=8000)
    out = run_rwmp(cfg, d)
    return d, out


def test_config_unknown_key():
    with pytest.raises(ConfigError, match="unknown config keys"):
        RWMPConfig.from_dict({"n_sites": 2, "colour": "red"})


@pytest.mark.parametrize("kw", [dict(backend="gpu"), dict(quantities="all"), dict(qpe_repetitions=2),
                                dict(qae_eps=1.5), dict(potentials=[[0.0]]), dict(train=["E[x]"]),
                                dict(n_electrons=5)])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        RWMPConfig(**kw)


def test_config_json_round_trip(tmp_path):
    cfg = RWMPConfig(potentials=[[0.1, -0.1]], seed=7)
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg.to_dict()))
    assert RWMPConfig.from_json(p) == cfg
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        RWMPConfig.from_json(p)


def test_ramp_potential():
    np.testing.assert_allclose(ramp_potential(2, 1.0), [-0.5, 0.5])
    np.testing.assert_allclose(ramp_potential(3, 2.0), [-1.0, 0.0, 1.0])


def test_schedule_nearest_neighbor_order():
    sched = PotentialSchedule(np.array([[0.0, 0.0], [1.0, -1.0], [0.1, -0.1], [0.5, -0.5]]))
    np.testing.assert_allclose(sched.nearest_neighbor().potentials[:, 0], [0.0, 0.1, 0.5, 1.0])


def test_schedule_bound():
    sched = PotentialSchedule(np.array([[0.0, 0.0], [1.0, -1.0]]), bound=0.25)
    with pytest.raises(ConfigError, match="dv_bound"):
        sched.check()
    with pytest.raises(ConfigError):
        run_rwmp(RWMPConfig(potentials=[[0.0, 0.0], [1.0, -1.0]], train=[]))


def test_empty_schedule(tmp_path):
    out = run_rwmp(RWMPConfig(train=[]), tmp_path / "o")
    assert out.records == [] and out.files == []
    assert not (tmp_path / "o").exists()


def test_single_system_oracle(oracle):
    v = np.array([-0.3, 0.3])
    out = run_rwmp(RWMPConfig(backend="oracle", quantities="vs", potentials=[v.tolist()], train=[]))
    rec, = out.records
    assert rec.status == "ok"
    assert rec.E == oracle.energy(v)
    np.testing.assert_array_equal(rec.n, oracle.density(v))
    np.testing.assert_allclose(rec.v_s, invert_to_ks(oracle.density(v), 2).v_s, atol=1e-6)


def test_single_system_quantum(oracle):
    v = np.array([-0.25, 0.25])
    cfg = RWMPConfig(potentials=[v.tolist()], train=[], qae_rounds=4000)
    rec, = run_rwmp(cfg).records
    scale = shift_and_scale(jordan_wigner(build_hubbard(2, 1.0, 4.0, v))).scale
    assert rec.status == "ok"
    assert abs(rec.E - oracle.energy(v)) <= 2.0 ** -cfg.qpe_bits * scale
    np.testing.assert_allclose(rec.n, oracle.density(v), atol=3 * 2 / np.sqrt(cfg.qae_rounds))
    assert rec.n.sum() == pytest.approx(2.0)
    assert rec.qae_fidelity >= 1 - cfg.qae_eps
    assert rec.rte_fidelity >= cfg.rte_threshold


def test_warm_start_beats_cold():
    base = dict(sweep={"start": 0.0, "stop": 1.0, "points": 6}, train=[], qae_rounds=50)
    warm = run_rwmp(RWMPConfig(**base))
    cold = run_rwmp(RWMPConfig(warm_start=False, **base))
    assert warm.total_rte_steps < cold.total_rte_steps
    assert all(r.initial_fidelity >= 0.99 for r in warm.records[1:])
    assert all(r.qae_fidelity >= 1 - 0.01 for r in warm.records)


def test_stage_error_skips_and_continues():
    cfg = RWMPConfig(potentials=[[0.0, 0.0], [0.1, -0.1]], rte_max_steps=1, warm_start=False, train=[])
    out = run_rwmp(cfg)
    assert [r.status for r in out.records] == ["skipped", "skipped"]
    assert "StageError" in out.records[0].error
    assert out.samples == []


def test_csv_byte_identical(tmp_path):
    cfg = dict(sweep={"start": 0.0, "stop": 0.5, "points": 3}, quantities="both", train=[], qae_rounds=100,
               seed=11)
    run_rwmp(cfg, tmp_path / "a")
    run_rwmp(cfg, tmp_path / "b")
    a, b = (tmp_path / "a" / "records.csv").read_bytes(), (tmp_path / "b" / "records.csv").read_bytes()
    assert a == b
    assert a.decode().splitlines()[0] == ",".join(RECORD_COLUMNS)


def test_seed_changes_records():
    cfg = dict(potentials=[[0.1, -0.1]], train=[], qae_rounds=100)
    a = records_to_csv(run_rwmp(dict(cfg, seed=1)).records)
    b = records_to_csv(run_rwmp(dict(cfg, seed=2)).records)
    assert a != b


def test_exported_models(trained):
    d, out = trained
    for name in ("model_E_v.json", "model_F_n.json", "model_vs_v.json", "records.csv"):
        assert (d / name).exists()
    m = load_model(d / "model_F_n.json")
    assert m.metadata["n_electrons"] == 2 and m.metadata["U"] == 4.0


def test_classical_solve_density(trained, oracle):
    d, _ = trained
    for delta in (-1.3, 0.45, 1.7):
        v = ramp_potential(2, delta)
        res = classical_user_solve([d / "model_F_n.json"], v, 2)
        assert res.trusted and res.converged
        np.testing.assert_allclose(res.density, oracle.density(v), atol=1e-2)
        assert res.energy == pytest.approx(oracle.energy(v), abs=1e-2)


def test_classical_solve_vs_route(trained, oracle):
    d, _ = trained
    v = ramp_potential(2, 0.8)
    res = classical_user_solve([d / "model_vs_v.json", d / "model_E_v.json"], v, 2, omega=[0.0, 1.0], tau=0.3)
    np.testing.assert_allclose(res.density, oracle.density(v), atol=1e-2)
    assert res.energy == pytest.approx(oracle.energy(v), abs=1e-2)
    assert res.chi.chi.shape == (2, 2, 2)
    assert res.thermal_density.sum() == pytest.approx(2.0)


def test_classical_solve_training_point(trained, oracle):
    d, out = trained
    v = out.samples[10].v
    res = classical_user_solve([d / "model_E_v.json"], v, 2)
    assert res.energy == pytest.approx(oracle.energy(v), abs=1e-3)


def test_classical_solve_refuses_electron_mismatch(trained):
    d, _ = trained
    with pytest.raises(ValueError, match="electrons"):
        classical_user_solve([d / "model_E_v.json"], [0.0, 0.0], 3)


def test_classical_solve_out_of_manifold_warns(trained):
    d, _ = trained
    with pytest.warns(RuntimeWarning, match="untrusted"):
        res = classical_user_solve([d / "model_E_v.json"], [-3.0, 3.0], 2)
    assert not res.trusted


def test_classical_solve_needs_models():
    with pytest.raises(ValueError):
        classical_user_solve([], [0.0, 0.0], 2)


def _configs(n):
    return [RWMPConfig(potentials=[ramp_potential(2, 0.2 * i).tolist()], train=[], qae_rounds=100, seed=i)
            for i in range(n)]


def test_batch_parallel_equals_serial():
    model = MLModel.build(2, 1, (4,), rng=np.random.default_rng(0))
    serial = batch_dispatch(_configs(5), 1, model)
    parallel = batch_dispatch(_configs(5), 4, model)
    assert records_to_csv(serial.records) == records_to_csv(parallel.records)
    assert [i for i, _ in serial.samples] == list(range(5))
    for (a, b), (c, e) in zip(serial.gradient, parallel.gradient):
        assert a.tobytes() == c.tobytes() and b.tobytes() == e.tobytes()
    assert serial.cost == parallel.cost


def test_batch_matches_process_system():
    cfgs = _configs(3)
    out = batch_dispatch(cfgs, 2)
    for i, cfg in enumerate(cfgs):
        rec, _ = process_system(cfg, i, cfg.potentials[0])
        assert records_to_csv([rec]) == records_to_csv([out.records[i]])


def test_batch_worker_failure():
    cfgs = _configs(4)
    cfgs[2] = RWMPConfig(train=[])
    model = MLModel.build(2, 1, (3,))
    out = batch_dispatch(cfgs, 3, model)
    assert [i for i, _ in out.samples] == [0, 1, 3]
    assert out.failures[0][0] == 2 and "empty schedule" in out.failures[0][1]
    X = np.array([s.v for _, s in out.samples])
    Y = np.array([[s.E] for _, s in out.samples])
    ref = backward(model, X, Y)
    for (a, b), (c, e) in zip(out.gradient, ref):
        np.testing.assert_array_equal(a, c)


def test_batch_parallelism_positive():
    with pytest.raises(ValueError):
        batch_dispatch(_configs(1), 0)


def test_qga_inversion_in_pipeline(oracle):
    v = [-0.5, 0.5]
    rec, = run_rwmp(RWMPConfig(backend="oracle", quantities="vs", inversion="qga", potentials=[v],
                               train=[])).records
    assert rec.status == "ok"
    np.testing.assert_allclose(rec.v_s, invert_to_ks(oracle.density(np.array(v)), 2).v_s, atol=1e-2)
