"""Experiment drivers behind the command-line interface.

Each driver takes a normalized config (see :mod:`fvnn.config`) and an output
directory, and writes tidy CSV files. Work is cut into independent jobs whose
results are collected in job order, so ``jobs > 1`` never changes the output.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import PcaPipeline
from .config import config_hash, dump
from .covariance import CovarianceEstimate, balanced_covariance, balancing_weights, debiased_covariance
from .covariance import estimate as estimate_covariance
from .covariance import sample_covariance
from .data import (
    CsvSchema,
    Dataset,
    SyntheticConfig,
    binarize_targets,
    generate_two_group_gaussian,
    group_spectra,
    load_csv_dataset,
    random_orthogonal,
    split,
    standardize,
)
from .metrics import _cell, group_bias_report, report_row, write_results_csv
from .model import Architecture, init_model, predict
from .spectral import SWEEP_COLUMNS, stability_sweep
from .training import TrainConfig, gradient_check, train

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# job pool
# ---------------------------------------------------------------------------

def run_jobs(fn, jobs: list, n_jobs: int = 1) -> list:
    """``[fn(j) for j in jobs]``, optionally in worker processes; order preserved."""
    if n_jobs <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, jobs))


# ---------------------------------------------------------------------------
# shared pieces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CovArm:
    kind: str
    alpha: float | None = None
    beta: float | None = None

    def estimate(self, ds: Dataset, disadvantaged: int, clip: bool) -> CovarianceEstimate:
        return estimate_covariance(ds, self.kind, alpha=self.alpha or 0.0, beta=self.beta or 0.0,
                                   disadvantaged=disadvantaged, clip_negative=clip)


def covariance_arms(cfg: dict) -> list[CovArm]:
    cov = cfg["covariance"]
    arms = []
    for kind in cov["kinds"]:
        if kind == "sample":
            arms.append(CovArm("sample"))
        elif kind == "balanced":
            arms.extend(CovArm("balanced", alpha=a) for a in cov["alpha"])
        else:
            arms.extend(CovArm("debiased", beta=b) for b in cov["beta"])
    return arms


def task_of(cfg: dict) -> str:
    ds = cfg["dataset"]
    return ds["synthetic"]["task"] if ds["source"] == "synthetic" else ds["csv"]["task"]


def error_kind(cfg: dict) -> str:
    kind = cfg["evaluation"]["error"]
    if kind != "auto":
        return kind
    if task_of(cfg) == "classification":
        return "error"
    return "smape" if cfg["experiment"] == "synth_sweep" else "mse"


def architecture(cfg: dict, task: str, n_classes: int = 2) -> Architecture:
    m = cfg["model"]
    return Architecture.build(m["hidden"], m["K"], nonlinearity=m["nonlinearity"],
                              out_dim=1 if task == "regression" else n_classes, task=task,
                              final_activation=m["final_activation"])


def train_config(cfg: dict, gamma: float, task: str, seed: int) -> TrainConfig:
    t = cfg["train"]
    es = tuple(t["early_stop"]) if t["early_stop"] else None
    return TrainConfig(gamma=gamma, loss="mse" if task == "regression" else "cross_entropy",
                       epochs=t["epochs"], batch_size=t["batch_size"],
                       learning_rate=t["learning_rate"], optimizer=t["optimizer"],
                       beta1=t["beta1"], beta2=t["beta2"], eps=t["eps"], seed=seed,
                       early_stop=es)


def synthetic_split(cfg: dict, seed: int):
    """Draw train and test sets from one two-group Gaussian population."""
    s = cfg["dataset"]["synthetic"]
    sc = SyntheticConfig(N=s["N"], T1=s["T1"] + s["test_T1"], T2=s["T2"] + s["test_T2"],
                         eigengap_ratio=s["eigengap_ratio"], noise_std=s["noise_std"], seed=seed)
    ds, _ = generate_two_group_gaussian(sc)
    if s["task"] == "classification":
        ds = binarize_targets(ds)
    g1 = np.flatnonzero(ds.z == 1)
    g2 = np.flatnonzero(ds.z == 2)
    train_idx = np.r_[g1[: s["T1"]], g2[: s["T2"]]]
    test_idx = np.r_[g1[s["T1"]:], g2[s["T2"]:]]
    return ds.subset(train_idx), ds.subset(test_idx)


def load_split(cfg: dict, seed: int):
    d = cfg["dataset"]
    if d["source"] == "synthetic":
        tr, te = synthetic_split(cfg, seed)
    else:
        ds = load_csv_dataset(d["csv"]["path"], CsvSchema.from_dict(d["csv"]))
        tr, te = split(ds, d["test_fraction"], seed=seed, stratify_by_group=True)
    if d["standardize"]:
        tr, (te,), _ = standardize(tr, [te])
    return tr, te


def n_classes(*sets: Dataset) -> int:
    return max(2, max(int(s.y.max()) + 1 for s in sets))


def fit_methods(cfg: dict, tr: Dataset, C: CovarianceEstimate, seed: int, gammas):
    """Train every method on ``tr`` with covariance ``C``.

    Returns ``[(meta, predict_fn)]`` where ``predict_fn(X, C)`` evaluates
    the frozen method under a (possibly different) covariance.
    """
    task = tr.task
    fitted = []
    arch = architecture(cfg, task, n_classes(tr))
    for gamma in gammas:
        model, _ = train(init_model(arch, seed), tr, C, train_config(cfg, gamma, task, seed))
        fitted.append(({"method": "fvnn", "gamma": gamma},
                       lambda X, Cx, model=model: predict(model, Cx, X)))
    b = cfg["baselines"]
    for m in b["m"]:
        m_eff = min(m, tr.N)
        for kind in b["kinds"]:
            pipe = PcaPipeline(m_eff, kind, b["ridge"], b["bandwidth"], task,
                               max_support=b["max_support"], seed=seed).fit(tr, C)
            fitted.append(({"method": f"{kind}_pca", "m_pcs": m_eff},
                           lambda X, Cx, pipe=pipe: pipe.predict(X, Cx)))
    return fitted


def arm_meta(arm: CovArm, seed: int) -> dict:
    return {"covariance_kind": arm.kind, "alpha": arm.alpha, "beta": arm.beta, "seed": seed}


def write_manifest(out: Path, cfg: dict, experiment: str, wall: float, outputs) -> None:
    manifest = {"experiment": experiment, "config_hash": config_hash(cfg),
                "library_version": __version__, "wall_time_s": round(wall, 3),
                "outputs": sorted(outputs)}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    (out / "config.normalized.yaml").write_text(dump(cfg))


def summarize(rows: list[dict], keys, values=("overall_error", "bias")) -> list[dict]:
    """Mean and standard deviation of ``values`` over rows sharing ``keys``."""
    groups: dict = {}
    for r in rows:
        groups.setdefault(tuple(r.get(k) for k in keys), []).append(r)
    out = []
    for key, rs in groups.items():
        row = dict(zip(keys, key))
        row["n"] = len(rs)
        for v in values:
            a = np.array([r[v] for r in rs], dtype=float)
            row[f"{v}_mean"] = float(a.mean())
            row[f"{v}_std"] = float(a.std(ddof=1)) if len(a) > 1 else 0.0
        out.append(row)
    return out


def write_plain_csv(path, rows: list[dict], columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(c)) for c in columns])


# ---------------------------------------------------------------------------
# synthetic covariance-replacement sweep
# ---------------------------------------------------------------------------

def t1_grid(cfg: dict) -> list[int]:
    s = cfg["synth_sweep"]
    return list(range(s["T1_min"], s["T1_max"] + 1, s["T1_step"]))


def _synth_sweep_job(job):
    cfg, seed, arm = job
    dis = cfg["dataset"]["disadvantaged_group"]
    clip = cfg["covariance"]["clip_negative"]
    ek = error_kind(cfg)
    tr, te = load_split(cfg, seed)
    C_train = arm.estimate(tr, dis, clip)
    fitted = fit_methods(cfg, tr, C_train, seed, cfg["train"]["gamma"])
    te1 = np.flatnonzero(te.z == 1)
    te2 = np.flatnonzero(te.z == 2)
    rows = []
    for T1 in t1_grid(cfg):
        sub = te.subset(np.r_[te1[:T1], te2])
        C_test = arm.estimate(sub, dis, clip)
        for meta, fn in fitted:
            rep = group_bias_report(te, fn(te.X, C_test), te.task, ek)
            rows.append(report_row(rep, **arm_meta(arm, seed), **meta, T1=T1))
    return rows


def run_synth_sweep(cfg: dict, out, jobs: int = 1) -> Path:
    """Train once per (seed, covariance arm); re-estimate the covariance from test
    data with T1 group-1 samples and all group-2 samples, and score the frozen
    predictors on the full test set."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    seeds = [cfg["seed"] + t for t in range(cfg["trials"])]
    job_list = [(cfg, s, arm) for s in seeds for arm in covariance_arms(cfg)]
    rows = [r for part in run_jobs(_synth_sweep_job, job_list, jobs) for r in part]
    path = out / "synth_sweep.csv"
    write_results_csv(path, rows, 2, extra_columns=["T1"])
    keys = ("method", "covariance_kind", "alpha", "beta", "gamma", "m_pcs", "T1")
    summ = summarize(rows, keys)
    write_plain_csv(out / "synth_sweep_summary.csv", summ,
                    [*keys, "n", "overall_error_mean", "overall_error_std", "bias_mean", "bias_std"])
    tv = curve_variation(rows)
    write_plain_csv(out / "synth_sweep_variation.csv", tv,
                    ["method", "covariance_kind", "alpha", "beta", "gamma", "m_pcs", "seed",
                     "error_tv", "bias_tv"])
    write_manifest(out, cfg, "synth_sweep", time.time() - t0,
                   ["synth_sweep.csv", "synth_sweep_summary.csv", "synth_sweep_variation.csv"])
    return path


def curve_variation(rows: list[dict]) -> list[dict]:
    """Total variation (sum of absolute steps along T1) of each error and bias curve."""
    keys = ("method", "covariance_kind", "alpha", "beta", "gamma", "m_pcs", "seed")
    curves: dict = {}
    for r in rows:
        curves.setdefault(tuple(r.get(k) for k in keys), []).append(r)
    out = []
    for key, rs in curves.items():
        rs = sorted(rs, key=lambda r: r["T1"])
        e = np.array([r["overall_error"] for r in rs])
        b = np.array([r["bias"] for r in rs])
        row = dict(zip(keys, key))
        row["error_tv"] = float(np.abs(np.diff(e)).sum())
        row["bias_tv"] = float(np.abs(np.diff(b)).sum())
        out.append(row)
    return out


# ---------------------------------------------------------------------------
# fairness/accuracy tradeoff and classification
# ---------------------------------------------------------------------------

def _train_eval_job(job):
    cfg, seed, arm = job
    dis = cfg["dataset"]["disadvantaged_group"]
    ek = error_kind(cfg)
    tr, te = load_split(cfg, seed)
    C = arm.estimate(tr, dis, cfg["covariance"]["clip_negative"])
    rows = []
    for meta, fn in fit_methods(cfg, tr, C, seed, cfg["train"]["gamma"]):
        rep = group_bias_report(te, fn(te.X, C), te.task, ek)
        rows.append(report_row(rep, **arm_meta(arm, seed), **meta))
    return rows, tr.G


def _run_grid(cfg: dict, out, jobs: int, name: str) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    seeds = [cfg["seed"] + t for t in range(cfg["trials"])]
    job_list = [(cfg, s, arm) for s in seeds for arm in covariance_arms(cfg)]
    results = run_jobs(_train_eval_job, job_list, jobs)
    rows = [r for part, _ in results for r in part]
    G = results[0][1]
    path = out / f"{name}.csv"
    write_results_csv(path, rows, G)
    keys = ("method", "covariance_kind", "alpha", "beta", "gamma", "m_pcs")
    write_plain_csv(out / f"{name}_summary.csv", summarize(rows, keys),
                    [*keys, "n", "overall_error_mean", "overall_error_std", "bias_mean", "bias_std"])
    write_manifest(out, cfg, name, time.time() - t0, [f"{name}.csv", f"{name}_summary.csv"])
    return path


def run_gamma_sweep(cfg: dict, out, jobs: int = 1) -> Path:
    """FVNN for every penalty weight in ``train.gamma`` plus PCA baselines, per seed."""
    return _run_grid(cfg, out, jobs, "gamma_sweep")


def run_classification(cfg: dict, out, jobs: int = 1) -> Path:
    """Same grid on a classification task; ``trials`` counts train/test splits."""
    return _run_grid(cfg, out, jobs, "classification")


# ---------------------------------------------------------------------------
# stability of filters under covariance estimation error
# ---------------------------------------------------------------------------

def stability_setup(cfg: dict):
    """True covariances for both estimator cases.

    Returns ``(C_wide, C_narrow)``: group covariances built like the synthetic
    data (log-spaced spectrum, and the same spectrum compressed by
    ``eigengap_ratio``), with random eigenvectors.
    """
    s = cfg["stability"]
    sc = SyntheticConfig(N=s["N"], eigengap_ratio=s["eigengap_ratio"], seed=cfg["seed"])
    lam_narrow, lam_wide = group_spectra(sc)
    rng = np.random.default_rng(cfg["seed"])
    Qw, Qn = random_orthogonal(s["N"], rng), random_orthogonal(s["N"], rng)
    C_wide = (Qw * lam_wide) @ Qw.T
    C_narrow = (Qn * lam_narrow) @ Qn.T
    return (C_wide + C_wide.T) / 2, (C_narrow + C_narrow.T) / 2


def debiased_sampler(C, beta: float, fraction: float):
    """Biased samples ``(I + beta Z Z^T)^{1/2} X'`` with ``X'`` ~ N(0, C), then the
    debiased estimate; its target is ``C`` itself."""
    L = np.linalg.cholesky(C)

    def sample(T, rng):
        T1 = max(1, int(round(fraction * T)))
        z = np.r_[np.ones(T1, dtype=np.int64), np.full(T - T1, 2, dtype=np.int64)]
        Xp = rng.standard_normal((T, C.shape[0])) @ L.T
        sizes = np.array([T1, T - T1], dtype=float)
        # (I + beta Z Z^T)^{1/2} = I + Z diag(c) Z^T, c_g = (sqrt(1 + beta T_g) - 1) / T_g
        c = np.divide(np.sqrt(1 + beta * sizes) - 1, sizes, out=np.zeros(2), where=sizes > 0)
        sums = np.array([Xp[z == 1].sum(axis=0), Xp[z == 2].sum(axis=0)])
        X = Xp + (c[:, None] * sums)[z - 1]
        return debiased_covariance(X, z, beta)

    return sample


def balanced_sampler(C_g, C_h, alpha: float, fraction_h: float):
    """Balanced estimate from ``T_g`` and ``T_h`` fresh samples; returns the sampler
    and the matching true covariance ``alpha_g C_g + alpha_h C_h``."""
    Lg, Lh = np.linalg.cholesky(C_g), np.linalg.cholesky(C_h)
    N = C_g.shape[0]

    def sample(T, rng):
        Th = max(2, int(round(fraction_h * T)))
        Tg = T - Th
        Xg = rng.standard_normal((Tg, N)) @ Lg.T
        Xh = rng.standard_normal((Th, N)) @ Lh.T
        return balanced_covariance(sample_covariance(Xg)[1], sample_covariance(Xh)[1], Tg, Th, alpha)

    ag, ah = balancing_weights(1 - fraction_h, fraction_h, alpha)
    return sample, ag * C_g + ah * C_h


def _stability_job(job):
    cfg, case, filt_name, h = job
    s = cfg["stability"]
    C_wide, C_narrow = stability_setup(cfg)
    if case == "debiased":
        sampler, C_true = debiased_sampler(C_wide, s["beta"], s["group_fraction"]), C_wide
    else:
        sampler, C_true = balanced_sampler(C_wide, C_narrow, s["alpha"], s["group_fraction"])
    res = stability_sweep(h, C_true, sampler, s["T_grid"], s["trials"], seed=cfg["seed"])
    return case, filt_name, res


def run_stability(cfg: dict, out, jobs: int = 1) -> Path:
    """Filter distance, estimation error and first-order bound versus sample count,
    for the balanced and the debiased estimator, with the configured filter and
    the linear filter ``h = (0, 1)``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    h = cfg["stability"]["filter"]
    job_list = [(cfg, case, name, hh) for case in ("balanced", "debiased")
                for name, hh in (("filter", h), ("linear", [0.0, 1.0]))]
    results = run_jobs(_stability_job, job_list, jobs)
    outputs, summary = [], []
    for case, name, res in results:
        fname = f"stability_{case}_{name}.csv"
        with open(out / fname, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([*SWEEP_COLUMNS, "slack"])
            for r in res.rows:
                w.writerow([_cell(r[c]) for c in (*SWEEP_COLUMNS, "slack")])
        outputs.append(fname)
        for t in res.table:
            summary.append({"case": case, "filter": name, **t, "slope": res.slope})
    path = out / "stability_summary.csv"
    write_plain_csv(path, summary, ["case", "filter", "T", "filter_distance", "error_norm",
                                    "bound", "slack", "slope"])
    write_manifest(out, cfg, "stability", time.time() - t0, [*outputs, path.name])
    return path


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

def random_gradcheck_instance(i: int, seed: int = 0):
    """Random (model, data, covariance, config) with N <= 8, L <= 2, K <= 3."""
    rng = np.random.default_rng([seed, i])
    N = int(rng.integers(3, 9))
    L = int(rng.integers(1, 3))
    K = int(rng.integers(0, 4))
    hidden = [int(v) for v in rng.integers(1, 4, size=L)]
    gamma = (0.0, 0.5, 1.0)[i % 3]
    task = "classification" if i % 4 == 3 else "regression"
    nonlin = "tanh" if i % 2 else "relu"
    T = 12
    X = rng.normal(size=(T, N))
    z = np.r_[np.ones(T // 2, dtype=np.int64), np.full(T - T // 2, 2, dtype=np.int64)]
    if task == "classification":
        y = rng.integers(0, 3, size=T)
        arch = Architecture.build(hidden, K, nonlinearity=nonlin, out_dim=3, task=task)
        loss = "cross_entropy"
    else:
        y = rng.normal(size=T)
        arch = Architecture.build(hidden, K, nonlinearity=nonlin)
        loss = "mse"
    ds = Dataset(X, y, z, task=task, n_groups=2)
    A = rng.normal(size=(N, N))
    C = A @ A.T / N
    model = init_model(arch, seed=int(rng.integers(2**31)))
    tc = TrainConfig(gamma=gamma, loss=loss)
    meta = {"instance": i, "N": N, "L": L, "K": K, "gamma": gamma, "task": task,
            "nonlinearity": nonlin}
    return model, ds, C, tc, meta


def _gradcheck_job(job):
    i, seed, tol, eps = job
    model, ds, C, tc, meta = random_gradcheck_instance(i, seed)
    rep = gradient_check(model, ds, C, tc, tolerance=tol, eps=eps)
    return {**meta, "max_rel_error": rep.max_rel_error, "passed": rep.passed}


def run_gradcheck(cfg: dict, out, jobs: int = 1) -> tuple[Path, bool]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    g = cfg["gradcheck"]
    rows = run_jobs(_gradcheck_job, [(i, cfg["seed"], g["tolerance"], g["eps"])
                                     for i in range(g["instances"])], jobs)
    path = out / "gradcheck.csv"
    write_plain_csv(path, rows, ["instance", "N", "L", "K", "gamma", "task", "nonlinearity",
                                 "max_rel_error", "passed"])
    write_manifest(out, cfg, "gradcheck", time.time() - t0, [path.name])
    return path, all(r["passed"] for r in rows)


RUNNERS = {
    "synth_sweep": run_synth_sweep,
    "gamma_sweep": run_gamma_sweep,
    "classification": run_classification,
    "stability": run_stability,
}
