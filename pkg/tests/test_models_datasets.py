import math

import numpy as np
import pytest

from fidsel import datasets, rng
from fidsel.datasets import (
    OdeDataset,
    RegressionDataset,
    example1_function,
    gen_example1,
    gen_example2,
    gen_example3,
    gen_ode_data,
    load_dataset,
    save_dataset,
)
from fidsel.errors import DomainError
from fidsel.models import (
    LinearModelParams,
    OdeModelParams,
    design_matrix,
    design_row,
    linear_predict,
    ode_euler,
    ode_exact,
    ode_problem,
    regression_problem,
)

# -- models -----------------------------------------------------------------


def test_design_row():
    np.testing.assert_array_equal(design_row(0.0), [0.0, 1.0])
    np.testing.assert_array_equal(design_row(1.0), [1.0, 1.0])
    assert design_row(0.3) @ [10.0, 50.0] == pytest.approx(53.0, rel=1e-15)
    assert linear_predict(LinearModelParams(10.0, 50.0), 0.3) == pytest.approx(53.0, rel=1e-15)


def test_params_validation():
    with pytest.raises(DomainError):
        LinearModelParams(math.nan, 1.0)
    with pytest.raises(DomainError):
        OdeModelParams(math.inf)
    np.testing.assert_array_equal(OdeModelParams(5.0).as_array(), [5.0])


def test_ode_exact():
    assert ode_exact(5.0, 1.0, 0.0) == 5.0
    assert ode_exact(5.0, 1.0, 0.5) == pytest.approx(5.0 * math.exp(0.5), rel=1e-15)
    assert ode_exact(0.0, 3.0, 7.0) == 0.0


def test_ode_euler_zero_steps():
    assert ode_euler(5.0, 1.0, 1e-3, 0) == 5.0


def test_ode_euler_against_recurrence():
    x = 5.0
    for _ in range(500):
        x = x * (1.0 + 1e-3)
    assert ode_euler(5.0, 1.0, 1e-3, 500) == pytest.approx(x, rel=1e-12)
    assert ode_euler(5.0, 1.0, 1e-3, 500) == pytest.approx(5.0 * 1.001**500, rel=1e-12)


def test_ode_euler_underestimates_growth():
    ratio = ode_euler(5.0, 1.0, 1e-3, 30_000) / ode_exact(5.0, 1.0, 30.0)
    assert 0.0 < ratio < 1.0


def test_ode_euler_first_order():
    t = 0.5
    errs = []
    for dt in (1e-3, 5e-4):
        k = int(round(t / dt))
        errs.append(abs(ode_euler(1.0, 1.0, dt, k) - ode_exact(1.0, 1.0, t)))
    assert 1.9 <= errs[0] / errs[1] <= 2.1


def test_forward_maps_linear():
    ds = gen_ode_data(seed=0)
    for op in ("exact", "euler"):
        prob = ode_problem(ds, op)
        g = lambda x: (np.array([[x]]) @ prob.A.T)[0]
        np.testing.assert_allclose(g(2.0) + g(3.0), g(5.0), rtol=1e-14)
    A = design_matrix([0.1, 0.7, 1.3])
    t1, t2 = np.array([1.0, 2.0]), np.array([-3.0, 0.5])
    np.testing.assert_allclose(A @ (t1 + t2), A @ t1 + A @ t2, rtol=1e-14)


def test_ode_problem_operators():
    ds = gen_ode_data(seed=0)
    ex, eu = ode_problem(ds, "exact"), ode_problem(ds, "euler")
    np.testing.assert_allclose(ex.A[:, 0], np.exp(ds.obs_times), rtol=1e-14)
    np.testing.assert_allclose(eu.A[:, 0], 1.001 ** (500 * np.arange(1, 61)), rtol=1e-11)
    with pytest.raises(DomainError):
        ode_problem(ds, "rk4")


# -- generators -------------------------------------------------------------


def test_example1_c1_matching():
    assert example1_function(1.0) == pytest.approx(60.0, rel=1e-14)
    assert example1_function(2.0) == pytest.approx(2.0 * math.exp(5.0) + 58.0, rel=1e-14)
    assert example1_function(0.3) == pytest.approx(53.0, rel=1e-15)
    h = 1e-6
    left = (example1_function(1.0) - example1_function(1.0 - h)) / h
    right = (example1_function(1.0 + h) - example1_function(1.0)) / h
    assert left == pytest.approx(right, rel=1e-4)
    with pytest.raises(DomainError):
        example1_function(0.5, c=0.0)


def test_example1_dataset():
    ds = gen_example1(noise_var=0.0)
    np.testing.assert_allclose(ds.xs, np.arange(1, 21) / 10.0)
    np.testing.assert_allclose(ds.ys, example1_function(ds.xs), rtol=1e-15)
    with pytest.raises(DomainError):
        gen_example1(c=0.0)


def test_example2_dataset():
    ds = gen_example2(var_clean=0.0, var_corrupt=0.0)
    assert ds.ys[-1] == pytest.approx(70.0)
    np.testing.assert_allclose(ds.ys, 10.0 * ds.xs + 50.0, rtol=1e-15)
    noisy = gen_example2(seed=3)
    assert noisy.assumed_noise_var == 0.01
    resid = noisy.ys - (10.0 * noisy.xs + 50.0)
    assert np.max(np.abs(resid[:17])) < 1.0
    assert np.max(np.abs(resid[17:])) > 5.0
    same = gen_example2(var_corrupt=0.01, seed=3)
    assert np.max(np.abs(same.ys - (10.0 * same.xs + 50.0))) < 1.0
    with pytest.raises(DomainError):
        gen_example2(corrupt_from=0)


def test_example3_dataset():
    ds = gen_example3(noise_var=0.0)
    assert len(ds) == 21
    assert ds.ys[10] == pytest.approx(0.0, abs=1e-15)
    assert ds.ys[-1] == pytest.approx(-4.0)
    left = np.abs(ds.ys - (4.0 * ds.xs - 4.0)) < 1e-12
    right = np.abs(ds.ys - (-4.0 * ds.xs + 4.0)) < 1e-12
    assert left.sum() == 11 and right.sum() == 11
    with pytest.raises(DomainError):
        gen_example3(a1=4.0, b1=-4.0, a2=-4.0, b2=5.0)


def test_ode_dataset():
    ds = gen_ode_data(noise_var=0.0)
    assert len(ds) == 60
    np.testing.assert_allclose(ds.obs_times, np.arange(1, 61) / 2.0)
    assert ds.ys[0] == pytest.approx(5.0 * math.exp(0.5), rel=1e-15)
    assert ds.ys[-1] == pytest.approx(5.0 * math.exp(30.0), rel=1e-15)
    assert ds.steps_per_obs == 500 and ds.euler_dt == 1e-3
    with pytest.raises(DomainError):
        gen_ode_data(n_obs=0)


def test_generators_seeded():
    for g in (gen_example1, gen_example2, gen_example3, gen_ode_data):
        a, b, c = g(seed=7), g(seed=7), g(seed=8)
        np.testing.assert_array_equal(a.ys, b.ys)
        assert not np.array_equal(a.ys, c.ys)


def test_noise_stream_pinned():
    # first polar-method normals of the data stream; changes here break reproducibility
    z = rng.polar_normals(rng.stream(0, "data:example1"), 4)
    ds = gen_example1(seed=0, noise_var=1.0)
    np.testing.assert_allclose(z, [1.45616842, 0.1845648, 0.28038066, -0.54872355], atol=5e-9)
    np.testing.assert_allclose(ds.ys[:4] - example1_function(ds.xs[:4]), z, rtol=0, atol=1e-12)


def test_polar_normals_moments():
    z = rng.polar_normals(rng.stream(1, "t"), 200_000)
    assert abs(z.mean()) < 0.01 and abs(z.var() - 1.0) < 0.015


def test_dataset_validation():
    with pytest.raises(DomainError):
        RegressionDataset([0.0, 0.0], [1.0, 2.0], 1.0)
    with pytest.raises(DomainError):
        RegressionDataset([0.0, 1.0], [1.0], 1.0)
    with pytest.raises(DomainError):
        RegressionDataset([0.0], [1.0], 0.0)
    with pytest.raises(DomainError):
        OdeDataset(1.0, [0.5, 1.1], [1.0, 2.0], 1.0, 1e-3, 500)


@pytest.mark.parametrize("make", [lambda: gen_example2(seed=4), lambda: gen_example3(seed=1),
                                  lambda: gen_ode_data(seed=2).subset([0, 3, 4])])
def test_save_load_roundtrip(tmp_path, make):
    ds = make()
    path = save_dataset(ds, tmp_path / "d.csv")
    back = load_dataset(path)
    assert type(back) is type(ds)
    np.testing.assert_array_equal(back.ys, ds.ys)
    np.testing.assert_array_equal(back.locations, ds.locations)
    if isinstance(ds, OdeDataset):
        np.testing.assert_array_equal(back.obs_index, ds.obs_index)
    save_dataset(back, tmp_path / "e.csv")
    assert (tmp_path / "d.csv").read_bytes() == (tmp_path / "e.csv").read_bytes()


def test_header_records_seed(tmp_path):
    path = save_dataset(gen_example3(seed=5), tmp_path / "d.csv")
    meta, names, rows = datasets.read_table(path)
    assert meta["seed"] == 5 and meta["generator"] == "PCG64"
    assert names == ["x", "y", "label"] and len(rows) == 21


def test_regression_problem():
    ds = gen_example1(seed=0)
    prob = regression_problem(ds)
    assert prob.n_obs == 20 and prob.dim == 2
    np.testing.assert_allclose(prob.residuals(np.array([10.0, 50.0])), ds.ys - (10 * ds.xs + 50))
