import numpy as np
import pytest

from mrmr.errors import NotPositiveDefiniteError
from mrmr.evaluation import (
    BenchmarkConfig,
    autocorrelation,
    correlation_report,
    export_diagnostics,
    loss_matrices,
    loss_predictions,
    run_benchmark,
    split_protocols,
)
from mrmr.mcem import FitConfig
from mrmr.model import MixedDataset, ResponseSchema
from mrmr.sampler import LatentSampleTensor, McmcConfig
from mrmr.simgen import SimDesign
from mrmr.tuning import TuningGrid


def test_loss_matrices():
    B = np.arange(6.0).reshape(3, 2)
    assert loss_matrices(B, B) == (0.0, None)
    assert loss_matrices(np.zeros((3, 4)), np.ones((3, 4)))[0] == 12.0
    assert loss_matrices(np.eye(2), np.zeros((2, 2)), np.eye(2), 2 * np.eye(2)) == (2.0, 2.0)
    with pytest.raises(ValueError):
        loss_matrices(np.eye(2), np.eye(3))


def test_loss_predictions():
    s = ResponseSchema(0, 0, 1)
    assert loss_predictions(np.array([[1.0], [0], [1], [0]]), np.full((4, 1), 0.6), s) == (None, None, 0.5)
    s = ResponseSchema(1, 1, 1)
    Y = np.array([[0.5, 3.0, 1.0]])
    assert loss_predictions(Y, Y, s) == (0.0, 0.0, 0.0)
    assert loss_predictions(np.array([[4.0]]), np.array([[6.0]]), ResponseSchema(0, 1, 0)) == (None, 2.0, None)
    with pytest.raises(ValueError):
        loss_predictions(np.zeros((2, 3)), np.zeros((3, 3)), s)


def test_correlation_report():
    np.testing.assert_array_equal(correlation_report(np.eye(3)), np.eye(3))
    C = correlation_report(np.array([[2.0, -1.0], [-1.0, 2.0]]))
    np.testing.assert_allclose(C, [[1, 0.5], [0.5, 1]], atol=1e-15)
    with pytest.raises(NotPositiveDefiniteError):
        correlation_report(np.array([[1.0, 2.0], [2.0, 1.0]]))


def rows_data(n, seed=0):
    rng = np.random.default_rng(seed)
    return MixedDataset(rng.normal(size=(n, 2)), rng.normal(size=(n, 1)), ResponseSchema(1, 0, 0))


def test_random_split():
    data = rows_data(20)
    (tr, te), = split_protocols(data, "random_split", seed=3, n_train=15)
    assert tr.n == 15 and te.n == 5
    rows = np.vstack([tr.X, te.X])
    assert sorted(map(tuple, rows)) == sorted(map(tuple, data.X))
    (tr2, _), = split_protocols(data, "random_split", seed=3, n_train=15)
    assert np.array_equal(tr.X, tr2.X)
    with pytest.raises(ValueError):
        split_protocols(data, "random_split", seed=0, n_train=20)


def test_leave_one_group_out():
    data = rows_data(14 * 33)
    groups = np.repeat(np.arange(14), 33)
    folds = split_protocols(data, "leave_one_group_out", groups=groups)
    assert len(folds) == 14
    assert all(te.n == 33 and tr.n == 429 for tr, te in folds)
    with pytest.raises(ValueError):
        split_protocols(data, "leave_one_group_out", groups=np.zeros(data.n))
    with pytest.raises(ValueError):
        split_protocols(data, "other")


def test_autocorrelation():
    assert autocorrelation(np.ones(50)) is None
    x = np.random.default_rng(0).standard_normal(5000)
    acf = autocorrelation(x, 40)
    assert acf[0] == 1.0 and len(acf) == 41
    assert np.mean(np.abs(acf[1:]) < 3 / np.sqrt(5000)) >= 0.95


def test_export_diagnostics():
    rng = np.random.default_rng(1)
    samples = rng.normal(size=(3, 100, 2))
    samples[1, :, 1] = 2.0
    t = LatentSampleTensor(samples, np.zeros(3))
    trace, acf = export_diagnostics(None, t, [(0, 0), (1, 1)])
    assert len(trace) == 200
    const = [r for r in acf if r["obs"] == 1]
    assert const == [{"obs": 1, "coord": 1, "lag": None, "acf": None, "constant": True}]
    assert [r["lag"] for r in acf if r["obs"] == 0] == list(range(41))
    with pytest.raises(IndexError):
        export_diagnostics(None, t, [(5, 0)])


FAST = BenchmarkConfig(
    fit=FitConfig(mcmc=McmcConfig(chain_length=120, burn_in=40), em_max_iter=3),
    grid=TuningGrid((0.1, 1.0), (0.1, 1.0)),
)


@pytest.fixture(scope="module")
def small_report():
    return run_benchmark(SimDesign(p=5, seed=4), 3, cfg=FAST)


def test_benchmark_aggregates_are_traceable(small_report):
    agg = small_report.aggregates()
    for method in ("proposed", "sglm"):
        vals = np.array(small_report.values(method, "L_B"))
        assert agg[method]["L_B"]["mean"] == float(vals.mean())
        assert agg[method]["L_B"]["se"] == float(vals.std(ddof=1) / np.sqrt(vals.size))
        assert agg[method]["n_excluded"] == 0
    assert agg["sglm"]["L_Omega"]["mean"] is None


def test_benchmark_is_paired_and_reproducible(small_report):
    again = run_benchmark(SimDesign(p=5, seed=4), 3, cfg=FAST)
    assert again.to_dict() == small_report.to_dict()
    seeds = {(r["replicate"], r["seed"]) for r in small_report.records}
    assert len(seeds) == 3
    rows = small_report.table_rows()
    assert [r["method"] for r in rows] == ["proposed", "sglm"]


def test_single_replicate_has_no_se():
    rep = run_benchmark(SimDesign(p=4, seed=1), 1, methods=["sglm"], cfg=FAST)
    assert rep.aggregates()["sglm"]["L_B"]["se"] is None
    assert rep.methods == ["sglm"]
    with pytest.raises(ValueError):
        run_benchmark(SimDesign(p=4), 0, cfg=FAST)


def test_failures_are_excluded_and_counted(monkeypatch):
    from mrmr import evaluation
    from mrmr.errors import FitError

    def boom(*a, **k):
        raise FitError("synthetic")

    monkeypatch.setattr(evaluation, "grid_search", boom)
    rep = run_benchmark(SimDesign(p=4, seed=2), 2, cfg=FAST)
    agg = rep.aggregates()
    assert agg["proposed"]["n_excluded"] == 2 and agg["proposed"]["L_B"]["mean"] is None
    assert agg["sglm"]["n_replicates"] == 2
