"""Error metrics, parameter sweeps and report emission.

RMSE here is the relative l2 error |recon - truth| / |truth|, optionally
restricted to a region mask. Sweeps run one solver over a grid of
penalty-parameter values (averaged over noise realizations) and pick the
argmin, with ties broken toward the smaller value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fileio
from .grids import Image, RegionMask
from .projector import SparseOperator, build_projector
from .regularizers import (Penalty, build_gradient_matrix,
                           curvature_part_matrix, el, tikhonov, tv, tv_l2)
from .simulate import Dataset
from .solvers import (NumericalError, ReconResult, SolverConfig, cgls,
                      fixed_point_reconstruct, history_csv,
                      mlem_split_reconstruct)


def rmse(recon: Image, truth: Image, mask: RegionMask | None = None) -> float:
    if recon.grid != truth.grid:
        raise ValueError("reconstruction and truth grids differ")
    r = recon.values
    t = truth.values
    if mask is not None:
        if mask.grid != truth.grid:
            raise ValueError("mask grid does not match image grid")
        r = r[mask.membership]
        t = t[mask.membership]
    denom = float(np.linalg.norm(t))
    if denom == 0.0:
        raise ValueError("truth is zero on the evaluated region")
    return float(np.linalg.norm(r - t) / denom)


def make_penalty(method: str, mu: float = 0.0, beta: float = 0.03,
                 eps_rel: float = 1e-5) -> Penalty | None:
    if method == "cgls" or method == "mlem":
        return None
    if method == "tikhonov":
        return tikhonov()
    if method == "tv":
        return tv(eps_rel=eps_rel)
    if method == "tvl2":
        return tv_l2(mu, eps_rel=eps_rel)
    if method == "el":
        return el(beta=beta)
    raise ValueError(f"unknown method {method!r}")


def run_method(A: SparseOperator, dataset: Dataset, method: str,
               fidelity: str, cfg: SolverConfig, realization: int = 0,
               mu: float = 0.0, beta: float = 0.03) -> ReconResult:
    """One solver run against one noise realization of a dataset."""
    b = dataset.noisy[realization]
    kind = make_penalty(method, mu=mu, beta=beta)
    if fidelity == "ls":
        if method == "cgls":
            return cgls(A, b, cfg.outer_iters, ground_truth=dataset.ground_truth)
        return fixed_point_reconstruct(A, b, kind, cfg,
                                       ground_truth=dataset.ground_truth)
    if fidelity == "poisson":
        masks = [m for m in (dataset.gr, dataset.br) if m is not None]
        return mlem_split_reconstruct(A, b, kind, cfg,
                                      ground_truth=dataset.ground_truth,
                                      masks=masks)
    raise ValueError(f"unknown fidelity {fidelity!r}")


def alpha_scale_heuristic(A: SparseOperator, dataset: Dataset,
                          method: str, mu: float = 0.0,
                          beta: float = 0.03) -> float:
    """Center of the default sweep grid: the ratio of the data-term and
    penalty-term gradient scales probed at the backprojected data."""
    b = dataset.noisy[0].ravel()
    atb = A.apply_adjoint(b)
    kind = make_penalty(method, mu=mu if mu > 0 else 1.0, beta=beta)
    if kind is None:
        raise ValueError("unregularized methods have no alpha scale")
    probe = Image(dataset.ground_truth.grid, atb)
    R = build_gradient_matrix(kind, probe, alpha=1.0)
    denom = float(np.max(np.abs(R.matrix @ atb)))
    if denom == 0.0:
        raise NumericalError("penalty gradient vanished at the probe image")
    return float(np.max(np.abs(atb))) / denom


def mu_scale_heuristic(A: SparseOperator, dataset: Dataset) -> float:
    """Scale of the second combined-penalty constant, probed the same
    way as alpha but against the curvature part of the matrix."""
    b = dataset.noisy[0].ravel()
    atb = A.apply_adjoint(b)
    probe = Image(dataset.ground_truth.grid, atb)
    part = curvature_part_matrix(probe)
    denom = float(np.max(np.abs(part @ atb)))
    if denom == 0.0:
        raise NumericalError("curvature gradient vanished at the probe image")
    return float(np.max(np.abs(atb))) / denom


def log_grid(center: float, decades: float = 4.0, npoints: int = 15
             ) -> tuple[float, ...]:
    half = decades / 2.0
    return tuple(center * 10.0 ** e
                 for e in np.linspace(-half, half, npoints))


@dataclass(frozen=True)
class SweepSpec:
    method: str
    param: str  # "alpha" | "mu" | "beta"
    values: tuple[float, ...]
    fidelity: str = "ls"
    alpha: float = 0.0
    mu: float = 0.0
    beta: float = 0.03
    realizations: tuple[int, ...] = (0,)
    outer_iters: int = 40
    inner_iters: int = 5
    rho: float = 1e-4
    precondition: bool = False
    seed: int = 0

    def __post_init__(self):
        if len(self.values) < 2:
            raise ValueError("sweep needs at least 2 grid points")
        if any(not v > 0 for v in self.values):
            raise ValueError("sweep values must be positive")
        if self.param not in ("alpha", "mu", "beta"):
            raise ValueError(f"unknown sweep parameter {self.param!r}")


@dataclass
class SweepRun:
    value: float
    realization: int
    rmse: float | None
    gr_rmse: float | None = None
    br_rmse: float | None = None


@dataclass
class SweepResult:
    spec: SweepSpec
    mean_rmse: tuple[float, ...]
    gr_mean: tuple[float, ...] | None
    br_mean: tuple[float, ...] | None
    runs: list[SweepRun]
    best_value: float
    best_index: int


def run_sweep(spec: SweepSpec, dataset: Dataset,
              A: SparseOperator | None = None) -> SweepResult:
    if A is None:
        A = build_projector(dataset.recon_projector)
    runs: list[SweepRun] = []
    means: list[float] = []
    gr_means: list[float] = []
    br_means: list[float] = []
    has_regions = dataset.gr is not None and dataset.br is not None

    for value in spec.values:
        alpha, mu, beta = spec.alpha, spec.mu, spec.beta
        if spec.param == "alpha":
            alpha = value
        elif spec.param == "mu":
            mu = value
        else:
            beta = value
        cfg = SolverConfig(outer_iters=spec.outer_iters,
                           inner_iters=spec.inner_iters, rho=spec.rho,
                           alpha=alpha, precondition=spec.precondition,
                           seed=spec.seed)
        errs, gr_errs, br_errs = [], [], []
        for r in spec.realizations:
            try:
                res = run_method(A, dataset, spec.method, spec.fidelity,
                                 cfg, realization=r, mu=mu, beta=beta)
            except NumericalError:
                runs.append(SweepRun(value, r, None))
                continue
            e = rmse(res.image, dataset.ground_truth)
            run = SweepRun(value, r, e)
            if has_regions:
                run.gr_rmse = rmse(res.image, dataset.ground_truth, dataset.gr)
                run.br_rmse = rmse(res.image, dataset.ground_truth, dataset.br)
                gr_errs.append(run.gr_rmse)
                br_errs.append(run.br_rmse)
            errs.append(e)
            runs.append(run)
        means.append(float(np.mean(errs)) if errs else math.nan)
        gr_means.append(float(np.mean(gr_errs)) if gr_errs else math.nan)
        br_means.append(float(np.mean(br_errs)) if br_errs else math.nan)

    best_index = -1
    best = (math.inf, math.inf)
    for i, (value, mean) in enumerate(zip(spec.values, means)):
        if math.isnan(mean):
            continue
        if (mean, value) < best:
            best = (mean, value)
            best_index = i
    if best_index < 0:
        raise NumericalError("every sweep grid point failed")
    return SweepResult(spec, tuple(means),
                       tuple(gr_means) if has_regions else None,
                       tuple(br_means) if has_regions else None,
                       runs, spec.values[best_index], best_index)


@dataclass
class MethodReport:
    method: str
    best_param: float | None
    rmse: float
    image: Image
    history_result: ReconResult
    sweep: SweepResult | None = None
    gr_rmse: float | None = None
    br_rmse: float | None = None


def run_comparison(dataset: Dataset, outer_iters: int, inner_iters: int,
                   realizations: tuple[int, ...] = (0,), beta: float = 0.03,
                   sweep_points: int = 9, sweep_decades: float = 4.0,
                   seed: int = 0, rho: float = 1e-4,
                   precondition: bool = False,
                   A: SparseOperator | None = None) -> list[MethodReport]:
    """Sweep-then-evaluate comparison of the four methods on a dataset.

    The tv weight is swept first, the second tvl2 constant mu is swept
    with that weight frozen, then the el weight is swept (its edge
    constant beta stays fixed). The unregularized baseline (cgls for
    least-squares data, plain ML-EM for Poisson data) runs as-is.
    """
    if A is None:
        A = build_projector(dataset.recon_projector)
    fidelity = "poisson" if dataset.kind == "et" else "ls"
    baseline = "mlem" if fidelity == "poisson" else "cgls"
    has_regions = dataset.gr is not None and dataset.br is not None

    def sweep(method, param, values, alpha=0.0, mu=0.0):
        spec = SweepSpec(method=method, param=param, values=values,
                         fidelity=fidelity, alpha=alpha, mu=mu, beta=beta,
                         realizations=realizations, outer_iters=outer_iters,
                         inner_iters=inner_iters, rho=rho,
                         precondition=precondition, seed=seed)
        return run_sweep(spec, dataset, A=A)

    def finalize(method, best_param, sweep_result, alpha, mu):
        cfg = SolverConfig(outer_iters=outer_iters, inner_iters=inner_iters,
                           rho=rho, alpha=alpha, precondition=precondition,
                           seed=seed)
        results = [run_method(A, dataset, method, fidelity, cfg,
                              realization=r, mu=mu, beta=beta)
                   for r in realizations]
        errs = [rmse(res.image, dataset.ground_truth) for res in results]
        rep = MethodReport(method=method, best_param=best_param,
                           rmse=float(np.mean(errs)), image=results[0].image,
                           history_result=results[0], sweep=sweep_result)
        if has_regions:
            rep.gr_rmse = float(np.mean(
                [rmse(res.image, dataset.ground_truth, dataset.gr)
                 for res in results]))
            rep.br_rmse = float(np.mean(
                [rmse(res.image, dataset.ground_truth, dataset.br)
                 for res in results]))
        return rep

    reports = [finalize(baseline, None, None, 0.0, 0.0)]

    tv_grid = log_grid(alpha_scale_heuristic(A, dataset, "tv"),
                       sweep_decades, sweep_points)
    tv_sweep = sweep("tv", "alpha", tv_grid)
    reports.append(finalize("tv", tv_sweep.best_value, tv_sweep,
                            tv_sweep.best_value, 0.0))

    mu_grid = log_grid(mu_scale_heuristic(A, dataset),
                       sweep_decades, sweep_points)
    mu_sweep = sweep("tvl2", "mu", mu_grid, alpha=tv_sweep.best_value)
    reports.append(finalize("tvl2", mu_sweep.best_value, mu_sweep,
                            tv_sweep.best_value, mu_sweep.best_value))

    el_grid = log_grid(alpha_scale_heuristic(A, dataset, "el", beta=beta),
                       sweep_decades, sweep_points)
    el_sweep = sweep("el", "alpha", el_grid)
    reports.append(finalize("el", el_sweep.best_value, el_sweep,
                            el_sweep.best_value, 0.0))
    return reports


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def emit_report(reports: list[MethodReport], out_dir: str | Path) -> list[Path]:
    """Write table.csv, per-method convergence and sweep CSVs, region
    RMSE table and PGM previews of the final images."""
    if not reports:
        raise ValueError("nothing to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    table = ["method,best_parameter,rmse"]
    for rep in reports:
        best = "" if rep.best_param is None else _fmt(rep.best_param)
        table.append(f"{rep.method},{best},{_fmt(rep.rmse)}")
    path = out / "table.csv"
    path.write_text("\n".join(table) + "\n", encoding="utf-8")
    written.append(path)

    for rep in reports:
        path = out / f"convergence_{rep.method}.csv"
        path.write_text(history_csv(rep.history_result), encoding="utf-8")
        written.append(path)
        if rep.sweep is not None:
            lines = [f"{rep.sweep.spec.param},mean_rmse,gr_mean,br_mean"]
            for i, v in enumerate(rep.sweep.spec.values):
                gr = ("" if rep.sweep.gr_mean is None
                      else _fmt(rep.sweep.gr_mean[i]))
                br = ("" if rep.sweep.br_mean is None
                      else _fmt(rep.sweep.br_mean[i]))
                lines.append(f"{_fmt(v)},{_fmt(rep.sweep.mean_rmse[i])},{gr},{br}")
            path = out / f"sweep_{rep.method}.csv"
            path.write_text("\n".join(lines) + "\n", encoding="utf-8")
            written.append(path)

        pgm, sidecar = fileio.write_pgm(rep.image)
        path = out / f"{rep.method}.pgm"
        path.write_bytes(pgm)
        written.append(path)
        (out / f"{rep.method}.pgm.txt").write_text(sidecar, encoding="utf-8")
        written.append(out / f"{rep.method}.pgm.txt")

    if any(rep.gr_rmse is not None for rep in reports):
        lines = ["method,gr_mean,br_mean"]
        for rep in reports:
            if rep.gr_rmse is None:
                continue
            lines.append(f"{rep.method},{_fmt(rep.gr_rmse)},{_fmt(rep.br_rmse)}")
        path = out / "region_rmse.csv"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(path)
    return written
