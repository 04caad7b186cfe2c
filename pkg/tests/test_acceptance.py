"""Acceptance suite: one printed PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines live.
The synthetic comparison experiment (criterion 1) drives most of the
runtime; its artifacts are shared by the related criteria.
"""

import itertools
import json
import time
from contextlib import contextmanager

import numpy as np
import pytest

from scendens.cli import main as cli_main
from scendens.dataset import Dataset, UnitDataset, save_csv, to_unit
from scendens.gcm import GcmParams, copula_logdensity, fit_gcm
from scendens.gmcm import (
    FitOptions,
    UnconstrainedParams,
    fit_gmcm,
    gmc_copula_logdensity,
    map_gradient,
    map_objective,
)
from scendens.gmm import GmmMarginal1d, GmmParams, fit_em
from scendens.marginals import MarginalModel, fit_kde
from scendens.metrics import SinkhornConfig, compare_models, sinkhorn_distance
from scendens.modelio import FittedGcm, FittedGmcm


@contextmanager
def criterion(num, description):
    try:
        yield
    except AssertionError:
        print(f"ACCEPTANCE {num:02d} FAIL  {description}")
        raise
    print(f"ACCEPTANCE {num:02d} PASS  {description}")


def normalized_base(K, d, seed, spread=1.3):
    """Random mixture with weighted marginal mean 0 and second moment 1."""
    rng = np.random.default_rng(seed)
    w = rng.dirichlet(np.full(K, 5.0))
    means = rng.normal(scale=spread, size=(K, d))
    covs = np.empty((K, d, d))
    for k in range(K):
        A = rng.normal(size=(d, d)) * 0.4
        covs[k] = A @ A.T + 0.4 * np.eye(d)
    idx = np.arange(d)
    m = w @ means
    s = w @ (covs[:, idx, idx] + means**2)
    a = 1.0 / np.sqrt(s - m * m)
    means = (means - m[None, :]) * a[None, :]
    covs = covs * np.outer(a, a)[None, :, :]
    return GmmParams(w, means, covs)


def transformed_normal_marginals(seed, n=20_000, cap=8_000):
    """KDE marginals fitted to non-Gaussian transforms of normal draws."""
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((n, 4))
    modes = rng.choice([-3.0, 3.0], size=n)
    columns = {
        "lognormal": np.exp(0.6 * g[:, 0]),
        "bimodal": 0.8 * g[:, 1] + modes,
        "skew_right": 0.5 * g[:, 2] + 0.25 * np.exp(g[:, 2]),
        "skew_left": -0.5 * g[:, 3] - 0.25 * np.exp(g[:, 3]),
    }
    margs = [fit_kde(v, max_centers=cap, seed=seed + j) for j, v in enumerate(columns.values())]
    return MarginalModel(margs, list(columns.keys()))


@pytest.fixture(scope="module")
def synthetic_experiment():
    """Ground-truth 4-D GMCM, train/test draws, and the model comparison."""
    true_model = FittedGmcm(
        base=normalized_base(K=3, d=4, seed=100),
        marginals=transformed_normal_marginals(seed=200),
    )
    train = true_model.sample(50_000, seed=300)
    test = true_model.sample(10_000, seed=301)
    cfg = SinkhornConfig(subset_size=5_000, n_subsets=10, seed=400,
                         tol=1e-6, max_iter=3000)
    start = time.time()
    report = compare_models(
        train, test, ["gmm", "gcm", "gmcm"], cfg, seed=500,
        components=4, kde_cap=12_000,
    )
    elapsed = time.time() - start
    return {"true": true_model, "train": train, "test": test,
            "report": report, "elapsed": elapsed}


@pytest.fixture(scope="module")
def fitted_2d():
    """A 2-D GMCM and GCM fitted on draws from a known 2-D generator."""
    rng = np.random.default_rng(42)
    g = rng.standard_normal((20_000, 2))
    raw = np.column_stack([np.exp(0.5 * g[:, 0]), g[:, 1]])
    true = FittedGmcm(
        base=normalized_base(K=2, d=2, seed=43),
        marginals=MarginalModel(
            [fit_kde(raw[:, 0], max_centers=4000, seed=1),
             fit_kde(raw[:, 1], max_centers=4000, seed=2)],
            ["a", "b"],
        ),
    )
    ds = true.sample(20_000, seed=44)
    marginals = MarginalModel.fit(ds, center_cap=4000, seed=45)
    unit = to_unit(ds, marginals)
    gmcm_model = FittedGmcm(
        fit_gmcm(unit, FitOptions(K=2, seed=46, max_epochs=60)), marginals
    )
    gcm_model = FittedGcm(fit_gcm(unit), marginals)
    return {"gmcm": gmcm_model, "gcm": gcm_model, "data": ds}


def test_criterion_1_synthetic_comparison(synthetic_experiment):
    report = synthetic_experiment["report"]
    with criterion(1, "synthetic comparison: GMCM best on both metrics, "
                      "non-overlapping Sinkhorn intervals vs worst"):
        by_name = {m.name: m for m in report.models}
        for m in report.models:
            assert m.error is None, f"{m.name} failed: {m.error}"
        gmcm = by_name["gmcm"]
        others = [by_name["gmm"], by_name["gcm"]]
        assert all(gmcm.heldout_loglik > o.heldout_loglik for o in others)
        assert all(gmcm.sinkhorn_mean < o.sinkhorn_mean for o in others)
        worst = max(others, key=lambda o: o.sinkhorn_mean)
        assert (gmcm.sinkhorn_mean + gmcm.sinkhorn_std
                < worst.sinkhorn_mean - worst.sinkhorn_std)
    print(f"    table 1 analogue (elapsed {synthetic_experiment['elapsed']:.0f}s):")
    for line in report.render_table().splitlines():
        print("      " + line)


def test_criterion_2_gradient_correctness():
    with criterion(2, "analytic MAP gradient matches central differences"):
        for K in (1, 2, 3):
            rng = np.random.default_rng(600 + K)
            w = rng.dirichlet(np.ones(K))
            means = rng.normal(scale=0.7, size=(K, 2))
            covs = np.empty((K, 2, 2))
            for k in range(K):
                A = rng.normal(size=(2, 2)) * 0.4
                covs[k] = A @ A.T + 0.5 * np.eye(2)
            up = UnconstrainedParams.from_gmm(GmmParams(w, means, covs))
            U = UnitDataset(np.clip(rng.uniform(size=(64, 2)), 1e-6, 1 - 1e-6))
            grad = map_gradient(up, U, 0.1).pack()
            theta = up.pack()
            step = 1e-5
            for i in range(theta.size):
                plus, minus = theta.copy(), theta.copy()
                plus[i] += step
                minus[i] -= step
                fd = (
                    map_objective(UnconstrainedParams.unpack(plus, K, 2), U, 0.1)
                    - map_objective(UnconstrainedParams.unpack(minus, K, 2), U, 0.1)
                ) / (2 * step)
                assert abs(grad[i] - fd) / max(abs(fd), 1e-8) < 1e-4


def test_criterion_3_quantile_machinery():
    with criterion(3, "mixture and KDE quantile inversion tolerances"):
        rng = np.random.default_rng(700)
        for _ in range(1000):
            K = int(rng.integers(1, 4))
            marg = GmmMarginal1d(
                weights=rng.dirichlet(np.ones(K)),
                means=rng.normal(scale=2.0, size=K),
                sigmas=rng.uniform(0.3, 2.0, size=K),
            )
            u = float(rng.uniform(1e-6, 1 - 1e-6))
            assert abs(marg.cdf(marg.quantile(u)) - u) <= 1e-10
        kde = fit_kde(rng.normal(size=1500))
        xs = rng.uniform(kde.centers.min(), kde.centers.max(), size=200)
        back = np.array([kde.quantile(u) for u in kde.cdf(xs)])
        assert np.max(np.abs(back - xs)) <= 1e-6


def test_criterion_4_density_normalization(fitted_2d):
    with criterion(4, "fitted joint and copula densities integrate to one"):
        for model in (fitted_2d["gmcm"], fitted_2d["gcm"]):
            m0, m1 = model.marginals.marginals
            xs = np.linspace(m0.support_lo, m0.support_hi, 300)
            ys = np.linspace(m1.support_lo, m1.support_hi, 300)
            gx, gy = np.meshgrid(xs, ys, indexing="ij")
            pts = np.column_stack([gx.ravel(), gy.ravel()])
            cell = (xs[1] - xs[0]) * (ys[1] - ys[0])
            total = np.exp(model.logpdf(pts)).sum() * cell
            assert total == pytest.approx(1.0, abs=2e-2)
        grid = (np.arange(300) + 0.5) / 300
        gu, gv = np.meshgrid(grid, grid, indexing="ij")
        pts = np.column_stack([gu.ravel(), gv.ravel()])
        copula_total = np.exp(
            gmc_copula_logdensity(fitted_2d["gmcm"].base, pts)
        ).sum() / 300**2
        assert copula_total == pytest.approx(1.0, abs=2e-2)


def test_criterion_5_reduction_identities():
    with criterion(5, "K=1 copula identities (Gaussian copula, independence)"):
        rng = np.random.default_rng(800)
        A = rng.normal(size=(3, 3))
        cov = A @ A.T + 0.5 * np.eye(3)
        base = GmmParams(np.array([1.0]), rng.normal(size=(1, 3)), cov[None])
        scale = np.sqrt(np.diag(cov))
        R = cov / np.outer(scale, scale)
        u = np.clip(rng.uniform(size=(1000, 3)), 1e-6, 1 - 1e-6)
        diff = gmc_copula_logdensity(base, u) - copula_logdensity(GcmParams(R), u)
        assert np.max(np.abs(diff)) <= 1e-8
        diag = GmmParams(
            np.array([1.0]),
            np.array([[0.4, -1.0, 2.0]]),
            np.diag([2.0, 0.5, 1.3])[None],
        )
        assert np.max(np.abs(gmc_copula_logdensity(diag, u))) <= 1e-9


def test_criterion_6_affine_invariance():
    with criterion(6, "per-dimension affine rescaling leaves the copula fixed"):
        base = normalized_base(K=3, d=2, seed=900)
        rng = np.random.default_rng(901)
        a = np.array([2.5, 0.4])
        b = np.array([-1.0, 3.0])
        moved = GmmParams(
            base.weights.copy(),
            base.means * a[None, :] + b[None, :],
            base.covariances * np.outer(a, a)[None, :, :],
        )
        u = np.clip(rng.uniform(size=(1000, 2)), 1e-6, 1 - 1e-6)
        diff = gmc_copula_logdensity(base, u) - gmc_copula_logdensity(moved, u)
        assert np.max(np.abs(diff)) <= 1e-8


def test_criterion_7_sinkhorn_vs_exact_transport():
    raw = SinkhornConfig(standardize=False, epsilon=1e-3, max_iter=200_000, tol=1e-10)
    with criterion(7, "Sinkhorn matches brute-force OT; symmetric; exact singletons"):
        rng = np.random.default_rng(1000)
        for n in (4, 5):
            a = rng.normal(size=(n, 2))
            b = rng.normal(size=(n, 2))
            C = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
            exact = min(
                float(np.mean([C[i, p[i]] for i in range(n)]))
                for p in itertools.permutations(range(n))
            )
            assert sinkhorn_distance(a, b, raw) == pytest.approx(exact, rel=0.01)
        x = rng.normal(size=(30, 2))
        y = rng.normal(size=(25, 2))
        cfg = SinkhornConfig(seed=0)
        assert sinkhorn_distance(x, y, cfg) == pytest.approx(
            sinkhorn_distance(y, x, cfg), abs=1e-8
        )
        point = np.array([[0.7, -0.3]])
        assert sinkhorn_distance(point, point, raw) == pytest.approx(0.0, abs=1e-12)
        one = sinkhorn_distance(
            np.array([[0.0]]), np.array([[2.0]]),
            SinkhornConfig(standardize=False, epsilon=0.5),
        )
        assert one == pytest.approx(4.0, abs=1e-9)


def test_criterion_8_em_monotonicity():
    with criterion(8, "EM training log-likelihood nondecreasing over 10 seeds"):
        rng = np.random.default_rng(1100)
        half = rng.normal(loc=-5.0, scale=1.0, size=(1000, 2))
        other = rng.normal(loc=5.0, scale=1.0, size=(1000, 2))
        data = np.vstack([half, other])
        for seed in range(10):
            _, history = fit_em(data, K=2, seed=seed, return_history=True)
            assert np.all(np.diff(history) >= -1e-10)


def test_criterion_9_sampling_faithfulness(fitted_2d):
    with criterion(9, "100k GMCM samples match the KDE marginal CDFs (KS < 0.01)"):
        model = fitted_2d["gmcm"]
        draws = model.sample(100_000, seed=1200)
        for j, marg in enumerate(model.marginals.marginals):
            xs = np.sort(draws.values[:, j])
            ecdf = np.arange(1, xs.size + 1) / xs.size
            assert np.max(np.abs(ecdf - marg.cdf(xs))) < 0.01


def test_criterion_10_dual_formula_equivalence(fitted_2d):
    with criterion(10, "change-of-variables and copula-composition paths agree"):
        model = fitted_2d["gmcm"]
        probes = fitted_2d["data"].values[:1000]
        path_a = model.logpdf(probes)
        u = np.clip(model.marginals.cdf_matrix(probes), 1e-9, 1 - 1e-9)
        path_b = model.marginals.log_pdf_matrix(probes).sum(
            axis=1
        ) + gmc_copula_logdensity(model.base, u)
        assert np.max(np.abs(path_a - path_b)) <= 1e-10


def test_criterion_11_cli_end_to_end_determinism(tmp_path):
    with criterion(11, "fit -> sample -> compare is byte-identical across runs"):
        rng = np.random.default_rng(1300)
        z = rng.multivariate_normal(
            [0, 0, 0],
            [[1.0, 0.5, 0.2], [0.5, 1.0, 0.4], [0.2, 0.4, 1.0]],
            size=1500,
        )
        values = np.column_stack([np.exp(0.5 * z[:, 0]), z[:, 1], z[:, 2]])
        data_path = tmp_path / "data.csv"
        save_csv(Dataset(["p", "q", "r"], values), data_path)

        outputs = []
        for run in ("one", "two"):
            model_path = tmp_path / f"model_{run}.json"
            sample_path = tmp_path / f"sample_{run}.csv"
            report_path = tmp_path / f"report_{run}.json"
            assert cli_main(
                ["fit", "--input", str(data_path), "--model", "gmcm",
                 "--components", "2", "--seed", "7", "--epochs", "5",
                 "--batch-size", "256", "--kde-cap", "1000",
                 "--output", str(model_path)]
            ) == 0
            assert cli_main(
                ["sample", "--model", str(model_path), "-n", "500",
                 "--seed", "8", "--output", str(sample_path)]
            ) == 0
            assert cli_main(
                ["compare", "--input", str(data_path),
                 "--models", "gmm,gcm,gmcm", "--holdout", "0.2",
                 "--components", "2", "--seed", "9", "--epochs", "5",
                 "--batch-size", "256", "--kde-cap", "1000",
                 "--sinkhorn-subsets", "3", "--sinkhorn-size", "200",
                 "--output", str(report_path)]
            ) == 0
            outputs.append(
                (model_path.read_bytes(), sample_path.read_bytes(),
                 report_path.read_bytes())
            )
        assert outputs[0][0] == outputs[1][0]
        assert outputs[0][1] == outputs[1][1]
        assert outputs[0][2] == outputs[1][2]
        report = json.loads(outputs[0][2])
        assert [m["error"] for m in report["models"]] == [None, None, None]
