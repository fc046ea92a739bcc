import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from stochmode.bath import BrownianUnderdamped, build_decomposition, pseudomode_params_from_decomposition
from stochmode.dynamics import DriveSpec, SystemSpec, integrate, thermal_init
from stochmode.ensemble import (
    EnsembleConfig,
    EnsembleError,
    averaged_reduced_state,
    batch_moments,
    combine_moments,
    entropy_series,
    entropy_std,
    run_ensemble,
)
from stochmode.noise import NoiseModel, coeffs_analytic, sample_field
from stochmode.qcore import DensityMatrix, HilbertLayout, sigma_x, sigma_z, von_neumann_entropy

HORIZON = 4.0
GRID = tuple(np.linspace(0, HORIZON, 9))


@pytest.fixture(scope="module")
def setup():
    J = BrownianUnderdamped(omega0=1.0, gamma=0.05, lam=0.2 / math.sqrt(2 * math.pi))
    dec = build_decomposition(J, None, T=HORIZON)
    pm = pseudomode_params_from_decomposition(dec, fock_dim=4)
    sys = SystemSpec(0.5 * sigma_z(), (sigma_x(),), {"sz": sigma_z(), "sx": sigma_x()})
    model = coeffs_analytic(dec, HORIZON, 100)
    rho0 = thermal_init(pm, rho_s=np.diag([1.0, 0.0]))
    return sys, pm, model, rho0


def cfg(N, **kw):
    base = dict(N_stoch=N, global_seed=7, grid=GRID, observables=("sz", "sx"), h=0.05)
    base.update(kw)
    return EnsembleConfig(**base)


def test_single_trajectory_has_zero_spread(setup):
    sys, pm, model, rho0 = setup
    res = run_ensemble(sys, pm, [model], rho0, cfg(1, store_reduced_state=True))
    assert np.all(res.std["sz"] == 0)
    assert np.all(entropy_std(res) == 0)


def test_zero_noise_gives_identical_trajectories(setup):
    sys, pm, _, rho0 = setup
    zero = NoiseModel(HORIZON, 5, np.zeros(6))
    res = run_ensemble(sys, pm, [zero], rho0, cfg(6, batch_size=4))
    det = integrate(sys, pm, None, rho0, np.array(GRID), h=0.05)
    assert np.all(res.std["sz"] == 0)
    assert np.max(np.abs(res.mean["sz"] - det.observables["sz"])) <= 1e-14
    assert res.metadata["deterministic"]


def test_no_noise_runs_once(setup):
    sys, pm, _, rho0 = setup
    res = run_ensemble(sys, pm, [], rho0, cfg(50))
    assert res.metadata["trajectories_integrated"] == 1
    assert np.all(res.std["sx"] == 0)


@given(seed=st.integers(0, 2**31), n=st.integers(1, 8), cut=st.integers(0, 8))
def test_merged_moments_match_naive(seed, n, cut):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 3)) + 1j * rng.normal(size=(n, 3))
    cut = min(cut, n - 1) if n > 1 else 0
    parts = [x[:cut], x[cut:]] if cut else [x]
    acc = batch_moments(parts[0])
    for p in parts[1:]:
        acc = combine_moments(acc, batch_moments(p))
    m = x.mean(axis=0)
    M2 = np.sum(np.abs(x - m) ** 2, axis=0)
    assert acc[0] == n
    assert np.allclose(acc[1], m, atol=1e-12)
    assert np.allclose(acc[2], M2, atol=1e-12)


def test_mean_of_batch_means_equals_overall_mean(setup):
    sys, pm, model, rho0 = setup
    a = run_ensemble(sys, pm, [model], rho0, cfg(10, batch_size=3))
    b = run_ensemble(sys, pm, [model], rho0, cfg(10, batch_size=10))
    for k in ("sz", "sx"):
        assert np.max(np.abs(a.mean[k] - b.mean[k])) <= 1e-12
        assert np.max(np.abs(a.std[k] - b.std[k])) <= 1e-12


def test_matches_individually_integrated_trajectories(setup):
    sys, pm, model, rho0 = setup
    res = run_ensemble(sys, pm, [model], rho0, cfg(5, batch_size=2))
    runs = []
    for j in range(5):
        field = sample_field(model, 7, (0, j))
        runs.append(integrate(sys, pm, DriveSpec((field,)), rho0, np.array(GRID), h=0.05).observables["sz"])
    runs = np.array(runs)
    assert np.max(np.abs(res.mean["sz"] - runs.mean(axis=0))) <= 1e-12
    naive_std = np.sqrt(np.sum(np.abs(runs - runs.mean(axis=0)) ** 2, axis=0)) / 5
    assert np.max(np.abs(res.std["sz"] - naive_std)) <= 1e-12


def test_worker_count_does_not_change_results(setup):
    sys, pm, model, rho0 = setup
    a = run_ensemble(sys, pm, [model], rho0, cfg(40, batch_size=5, workers=1, store_reduced_state=True))
    b = run_ensemble(sys, pm, [model], rho0, cfg(40, batch_size=5, workers=4, store_reduced_state=True))
    for k in a.mean:
        assert np.array_equal(a.mean[k], b.mean[k]) and np.array_equal(a.std[k], b.std[k])
    assert np.array_equal(a.reduced_mean, b.reduced_mean)


def test_spread_scales_as_inverse_sqrt_N(setup):
    sys, pm, model, rho0 = setup
    stds = [run_ensemble(sys, pm, [model], rho0, cfg(N, batch_size=64)).std["sz"][1:] for N in (64, 1024)]
    slope = math.log(np.mean(stds[0]) / np.mean(stds[1])) / math.log(1024 / 64)
    assert slope == pytest.approx(0.5, abs=0.1)


def test_hermiticity_defect_shrinks_with_N(setup):
    sys, pm, model, rho0 = setup
    defect = []
    for N in (8, 512):
        res = run_ensemble(sys, pm, [model], rho0, cfg(N, batch_size=64, store_reduced_state=True))
        defect.append(np.mean([averaged_reduced_state(res, i).hermiticity_defect() for i in range(1, len(GRID))]))
    assert defect[1] < defect[0] / 3


def test_entropy_products(setup):
    sys, pm, model, rho0 = setup
    det = run_ensemble(sys, pm, [], rho0, cfg(1, store_reduced_state=True))
    st_ = det.reduced_mean[-1]
    ref = von_neumann_entropy(DensityMatrix(HilbertLayout((2,)), st_))
    assert entropy_series(det)[-1] == pytest.approx(ref, abs=1e-12)
    assert entropy_series(det)[0] == pytest.approx(0.0, abs=1e-12)
    one_batch = run_ensemble(sys, pm, [model], rho0, cfg(4, batch_size=4, store_reduced_state=True))
    assert np.all(np.isnan(entropy_std(one_batch)))
    many = run_ensemble(sys, pm, [model], rho0, cfg(20, batch_size=4, store_reduced_state=True))
    s = entropy_std(many)
    assert np.all(np.isfinite(s)) and np.all(s[1:] > 0)
    no_state = run_ensemble(sys, pm, [model], rho0, cfg(2))
    with pytest.raises(ValueError):
        averaged_reduced_state(no_state, 0)
    with pytest.raises(ValueError):
        entropy_series(no_state)


def test_csv_and_json_output(setup, tmp_path):
    sys, pm, model, rho0 = setup
    res = run_ensemble(sys, pm, [model], rho0, cfg(8, batch_size=4, store_reduced_state=True))
    res.to_csv(tmp_path / "r.csv", entropy=True)
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert rows[0] == ["t", "sz_re", "sz_im", "sz_std", "sx_re", "sx_im", "sx_std", "entropy", "entropy_std"]
    assert len(rows) == len(GRID) + 1
    assert float(rows[-1][1]) == res.mean["sz"][-1].real
    res.to_json(tmp_path / "r.json", config=cfg(8).to_dict())
    d = json.load(open(tmp_path / "r.json"))
    assert d["N_stoch"] == 8 and d["config"]["global_seed"] == 7
    assert d["metadata"]["hilbert_dims"] == [2, 4]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_failing_trajectory_is_named(setup):
    sys, pm, model, rho0 = setup
    loud = NoiseModel(HORIZON, model.N_xi, model.coeffs * 1e30)
    with pytest.raises(EnsembleError) as ei:
        run_ensemble(sys, pm, [loud], rho0, cfg(6, batch_size=3))
    assert ei.value.trajectory == 0 and ei.value.seed == 7
    assert "trajectory 0" in str(ei.value)


def test_validation(setup):
    sys, pm, model, rho0 = setup
    with pytest.raises(ValueError):
        run_ensemble(sys, pm, [model, model], rho0, cfg(2))
    with pytest.raises(KeyError):
        run_ensemble(sys, pm, [model], rho0, cfg(2, observables=("sy",)))
    with pytest.raises(ValueError, match="noise window"):
        run_ensemble(sys, pm, [model], rho0, cfg(2, grid=tuple(np.linspace(0, 8, 9))))
    with pytest.raises(ValueError):
        EnsembleConfig(N_stoch=0, global_seed=1, grid=GRID)
