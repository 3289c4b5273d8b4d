"""Command-line entry point.

Commands: phantom, simulate, reconstruct, sweep, report, verify.
Configuration is a flat key=value file; every key can also be given as a
command-line flag, and flags override the file. Each run writes a
provenance.txt with the effective configuration, sufficient to
reproduce the run bit-exactly.

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 I/O error, 4 numerical failure. Errors print one line to stderr
prefixed with "error:".
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import fileio
from .grids import GridSpec, Image, uniform_angles
from .metrics import (SweepSpec, alpha_scale_heuristic, emit_report,
                      log_grid, run_comparison, run_method, run_sweep)
from .phantoms import (default_ct_descriptor, generate_ct_phantom,
                       generate_et_phantom, load_descriptor, save_descriptor)
from .projector import (ProjectorSpec, build_projector, default_detector,
                        forward)
from .regularizers import (KINDS, build_gradient_matrix, el,
                           frozen_quadratic, tikhonov, tv, tv_l2)
from .simulate import (CtSimSpec, EtSimSpec, load_dataset, make_ct_dataset,
                       make_et_dataset, save_dataset)
from .solvers import (NumericalError, SolverConfig, history_csv,
                      verify_error_bound)


class ConfigError(ValueError):
    pass


# key -> (type, default); the registry doubles as the unknown-key filter
_KEYS: dict[str, tuple[type, object]] = {
    "command": (str, None),
    "seed": (int, 0),
    "out": (str, "out"),
    "threads": (int, 0),
    "experiment": (str, "ct"),
    "nx": (int, 250),
    "phantom_file": (str, ""),
    "fine_n": (int, 500),
    "recon_n": (int, 250),
    "n_angles": (int, 90),
    "i0": (float, 3e5),
    "nbins": (int, 0),
    "et_n": (int, 400),
    "counts": (float, 1e7),
    "psf_fwhm_bins": (float, 3.0),
    "n_realizations": (int, 20),
    "dataset": (str, ""),
    "method": (str, "el"),
    "fidelity": (str, "ls"),
    "alpha": (float, 0.0),
    "mu": (float, 0.0),
    "beta": (float, 0.03),
    "eps_rel": (float, 1e-5),
    "gamma_rel": (float, 1.0),
    "outer_iters": (int, 0),
    "inner_iters": (int, 5),
    "rho": (float, 1e-4),
    "tau": (float, 0.0),
    "precondition": (bool, False),
    "sigma": (float, 0.0),
    "realization": (int, 0),
    "param": (str, "alpha"),
    "values": (str, ""),
    "sweep_points": (int, 15),
    "sweep_decades": (float, 4.0),
    "realizations": (int, 1),
    "trials": (int, 100),
    "n": (int, 16),
    "break_adjoint": (bool, False),
}

_COMMANDS = ("phantom", "simulate", "reconstruct", "sweep", "report", "verify")


def _parse_value(key: str, raw: str):
    typ = _KEYS[key][0]
    try:
        if typ is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return typ(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def _load_config_file(path: str) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        if key not in _KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _parse_value(key, value.strip())
    return values


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eltomo",
        description="Tomographic reconstruction with edge-preserving "
                    "Laplacian, TV and TV-l2 penalties")
    sub = parser.add_subparsers(dest="command")
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None)
        for key, (typ, _default) in _KEYS.items():
            if key == "command":
                continue
            flag = "--" + key.replace("_", "-")
            kwargs = {"default": None, "dest": key}
            if key == "break_adjoint":
                kwargs["help"] = argparse.SUPPRESS
            if typ is bool:
                p.add_argument(flag, type=str, **kwargs)
            else:
                p.add_argument(flag, type=typ, **kwargs)
    return parser


def resolve_config(argv: list[str]) -> dict:
    """defaults < config file < explicit flags, unknown keys rejected."""
    parser = _build_parser()
    ns = parser.parse_args(argv)
    if ns.command is None:
        raise ConfigError("no command given (phantom, simulate, "
                          "reconstruct, sweep, report, verify)")
    cfg = {key: default for key, (_t, default) in _KEYS.items()}
    cfg["command"] = ns.command
    if ns.config is not None:
        file_values = _load_config_file(ns.config)
        if "command" in file_values and file_values["command"] != ns.command:
            raise ConfigError("config file command does not match CLI command")
        cfg.update(file_values)
    for key in _KEYS:
        if key == "command":
            continue
        value = getattr(ns, key, None)
        if value is None:
            continue
        if _KEYS[key][0] is bool and isinstance(value, str):
            value = _parse_value(key, value)
        cfg[key] = value
    return cfg


def _write_provenance(cfg: dict, out: Path, extra=()) -> None:
    """Every accepted key, plus any derived values (which win on ties,
    e.g. an auto-selected detector size is recorded as resolved)."""
    out.mkdir(parents=True, exist_ok=True)
    merged = {k: _prov_str(cfg[k]) for k in _KEYS}
    merged.update({k: v for k, v in extra})
    lines = [f"{k}={merged[k]}" for k in sorted(merged)]
    (out / "provenance.txt").write_text("\n".join(lines) + "\n",
                                        encoding="utf-8")


def _prov_str(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def _descriptor_from(cfg: dict):
    if cfg["phantom_file"]:
        try:
            text = Path(cfg["phantom_file"]).read_text(encoding="utf-8")
        except OSError as exc:
            raise fileio.TomoFileError(str(exc)) from exc
        try:
            return load_descriptor(text)
        except ValueError as exc:
            raise ConfigError(f"bad phantom file: {exc}") from exc
    return default_ct_descriptor()


def cmd_phantom(cfg: dict) -> int:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    n = cfg["nx"]
    grid = GridSpec(n, n)
    if cfg["experiment"] == "ct":
        desc = _descriptor_from(cfg)
        img = generate_ct_phantom(desc, grid)
        (out / "descriptor.txt").write_text(save_descriptor(desc),
                                            encoding="utf-8")
    elif cfg["experiment"] == "et":
        img, gr, br = generate_et_phantom(grid, cfg["seed"])
        fileio.save_mask(out / "mask_GR", gr)
        fileio.save_mask(out / "mask_BR", br)
    else:
        raise ConfigError(f"unknown experiment {cfg['experiment']!r}")
    fileio.save_image(out / "phantom", img)
    pgm, sidecar = fileio.write_pgm(img)
    (out / "phantom.pgm").write_bytes(pgm)
    (out / "phantom.pgm.txt").write_text(sidecar, encoding="utf-8")
    _write_provenance(cfg, out)
    return 0


def cmd_simulate(cfg: dict) -> int:
    out = Path(cfg["out"])
    nbins = cfg["nbins"] if cfg["nbins"] > 0 else None
    if cfg["experiment"] == "ct":
        spec = CtSimSpec(
            descriptor=_descriptor_from(cfg),
            fine_grid=GridSpec(cfg["fine_n"], cfg["fine_n"]),
            recon_grid=GridSpec(cfg["recon_n"], cfg["recon_n"]),
            n_angles=cfg["n_angles"], i0=cfg["i0"], nbins=nbins,
            seed=cfg["seed"])
        ds = make_ct_dataset(spec)
    elif cfg["experiment"] == "et":
        spec = EtSimSpec(
            grid=GridSpec(cfg["et_n"], cfg["et_n"]),
            n_angles=cfg["n_angles"], total_counts=cfg["counts"],
            psf_fwhm_bins=cfg["psf_fwhm_bins"],
            n_realizations=cfg["n_realizations"], nbins=nbins,
            seed=cfg["seed"])
        ds = make_et_dataset(spec)
    else:
        raise ConfigError(f"unknown experiment {cfg['experiment']!r}")
    save_dataset(ds, out)
    _write_provenance(cfg, out, extra=ds.provenance)
    return 0


_LS_METHODS = ("cgls", "tikhonov", "tv", "tvl2", "el")
_POISSON_METHODS = ("mlem", "tikhonov", "tv", "tvl2", "el")


def _validate_method(cfg: dict) -> None:
    method, fidelity = cfg["method"], cfg["fidelity"]
    if fidelity == "ls":
        allowed = _LS_METHODS
    elif fidelity == "poisson":
        allowed = _POISSON_METHODS
    else:
        raise ConfigError(f"unknown fidelity {fidelity!r}")
    if method not in allowed:
        raise ConfigError(
            f"method {method!r} is not supported with fidelity {fidelity!r}")
    if method in KINDS and not cfg["alpha"] > 0:
        raise ConfigError(f"method {method!r} needs alpha > 0")
    if method == "tvl2" and not cfg["mu"] > 0:
        raise ConfigError("method 'tvl2' needs mu > 0")


def _default_outer(cfg: dict, kind: str) -> int:
    if cfg["outer_iters"] > 0:
        return cfg["outer_iters"]
    return 130 if kind == "et" else 80


def cmd_reconstruct(cfg: dict) -> int:
    _validate_method(cfg)
    if not cfg["dataset"]:
        raise ConfigError("reconstruct needs --dataset DIR")
    ds = load_dataset(cfg["dataset"])
    if cfg["realization"] < 0 or cfg["realization"] >= len(ds.noisy):
        raise ConfigError(f"realization {cfg['realization']} out of range")
    solver_cfg = SolverConfig(
        outer_iters=_default_outer(cfg, ds.kind),
        inner_iters=cfg["inner_iters"], rho=cfg["rho"], alpha=cfg["alpha"],
        tau=cfg["tau"] if cfg["tau"] > 0 else None,
        precondition=cfg["precondition"],
        sigma=cfg["sigma"] if cfg["sigma"] > 0 else None, seed=cfg["seed"])
    A = build_projector(ds.recon_projector)
    result = run_method(A, ds, cfg["method"], cfg["fidelity"], solver_cfg,
                        realization=cfg["realization"], mu=cfg["mu"],
                        beta=cfg["beta"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    method = cfg["method"]
    fileio.save_image(out / f"recon_{method}", result.image)
    (out / f"convergence_{method}.csv").write_text(history_csv(result),
                                                   encoding="utf-8")
    pgm, sidecar = fileio.write_pgm(result.image)
    (out / f"recon_{method}.pgm").write_bytes(pgm)
    (out / f"recon_{method}.pgm.txt").write_text(sidecar, encoding="utf-8")
    _write_provenance(cfg, out)
    final = result.history[-1].rmse if result.history else None
    if final is not None:
        print(f"{method}: rmse={final:.6g}")
    return 0


def cmd_sweep(cfg: dict) -> int:
    _validate_sweep(cfg)
    ds = load_dataset(cfg["dataset"])
    A = build_projector(ds.recon_projector)
    if cfg["values"]:
        try:
            values = tuple(float(t) for t in cfg["values"].split(","))
        except ValueError as exc:
            raise ConfigError(f"bad values list {cfg['values']!r}") from exc
    else:
        center_method = cfg["method"]
        center = (cfg["alpha"] if cfg["param"] == "mu" and cfg["alpha"] > 0
                  else alpha_scale_heuristic(A, ds, center_method,
                                             beta=cfg["beta"]))
        values = log_grid(center, cfg["sweep_decades"], cfg["sweep_points"])
    realos = tuple(range(min(cfg["realizations"], len(ds.noisy))))
    spec = SweepSpec(
        method=cfg["method"], param=cfg["param"], values=values,
        fidelity=cfg["fidelity"], alpha=cfg["alpha"], mu=cfg["mu"],
        beta=cfg["beta"], realizations=realos,
        outer_iters=_default_outer(cfg, ds.kind),
        inner_iters=cfg["inner_iters"], rho=cfg["rho"], seed=cfg["seed"])
    result = run_sweep(spec, ds, A=A)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"{spec.param},mean_rmse"]
    for v, m in zip(result.spec.values, result.mean_rmse):
        lines.append(f"{v:.17g},{m:.17g}")
    (out / f"sweep_{cfg['method']}.csv").write_text("\n".join(lines) + "\n",
                                                    encoding="utf-8")
    _write_provenance(cfg, out)
    print(f"best {spec.param}={result.best_value:.17g} "
          f"(mean rmse {result.mean_rmse[result.best_index]:.6g})")
    return 0


def _validate_sweep(cfg: dict) -> None:
    if not cfg["dataset"]:
        raise ConfigError("sweep needs --dataset DIR")
    if cfg["method"] in ("cgls", "mlem"):
        raise ConfigError("cannot sweep an unregularized method")
    if cfg["method"] not in KINDS:
        raise ConfigError(f"unknown method {cfg['method']!r}")
    if cfg["param"] == "mu" and not cfg["alpha"] > 0:
        raise ConfigError("sweeping mu requires a fixed alpha > 0")


def cmd_report(cfg: dict) -> int:
    if not cfg["dataset"]:
        raise ConfigError("report needs --dataset DIR")
    ds = load_dataset(cfg["dataset"])
    outer = _default_outer(cfg, ds.kind)
    realos = tuple(range(min(cfg["realizations"], len(ds.noisy))))
    reports = run_comparison(
        ds, outer_iters=outer, inner_iters=cfg["inner_iters"],
        realizations=realos, beta=cfg["beta"],
        sweep_points=cfg["sweep_points"], sweep_decades=cfg["sweep_decades"],
        seed=cfg["seed"], rho=cfg["rho"], precondition=cfg["precondition"])
    out = Path(cfg["out"])
    emit_report(reports, out)
    _write_provenance(cfg, out)
    for rep in reports:
        best = "-" if rep.best_param is None else f"{rep.best_param:.3g}"
        print(f"{rep.method}: best={best} rmse={rep.rmse:.6g}")
    return 0


# --- verification suites --------------------------------------------------

def adjoint_suite(n: int = 64, n_angles: int = 30, pairs: int = 100,
                  seed: int = 0, tol: float = 1e-10,
                  inject_fault: bool = False) -> tuple[bool, float]:
    """Worst relative adjoint mismatch over random pairs, both kernels,
    with and without a detector PSF."""
    rng = np.random.default_rng(seed)
    grid = GridSpec(n, n)
    angles = uniform_angles(n_angles)
    nbins, pitch = default_detector(grid)
    worst = 0.0
    for kernel in ("strip", "linear"):
        for fwhm in (None, 3.0):
            spec = ProjectorSpec(grid, angles, nbins, pitch, kernel,
                                 psf_fwhm_bins=fwhm)
            A = build_projector(spec)
            for _ in range(pairs):
                u = rng.standard_normal(A.ncols)
                v = rng.standard_normal(A.nrows)
                au = A.apply(u)
                atv = A.apply_adjoint(v)
                if inject_fault:
                    atv = np.roll(atv, 1)
                lhs = float(au @ v)
                rhs = float(u @ atv)
                denom = np.linalg.norm(au) * np.linalg.norm(v)
                worst = max(worst, abs(lhs - rhs) / denom)
    return worst <= tol, worst


def gradient_suite(n: int = 32, probes: int = 20, seed: int = 0,
                   tol: float = 1e-5) -> tuple[bool, float]:
    """Matrix-vector products against central finite differences of the
    frozen quadratic, for all four penalties."""
    rng = np.random.default_rng(seed)
    grid = GridSpec(n, n)
    base = rng.standard_normal((n, n))
    from scipy.ndimage import gaussian_filter
    u0 = Image(grid, gaussian_filter(base, 2.0) + 0.1)
    worst = 0.0
    alpha = 1.0
    for kind in (tikhonov(), tv(), tv_l2(mu=0.5), el()):
        R = build_gradient_matrix(kind, u0, alpha=alpha)
        q = frozen_quadratic(kind, u0, alpha=alpha)
        v = rng.standard_normal(grid.npixels)
        g = R.matrix @ v
        scale = float(np.max(np.abs(g)))
        delta = 1e-6 * float(np.max(np.abs(v)))
        # probe pixels with non-negligible gradient so the relative
        # error is well defined
        candidates = np.flatnonzero(np.abs(g) >= 0.1 * scale)
        idx = rng.choice(candidates, size=min(probes, candidates.size),
                         replace=False)
        for j in idx:
            e = np.zeros(grid.npixels)
            e[j] = delta
            fd = (q(v + e) - q(v - e)) / (2.0 * delta)
            worst = max(worst, abs(fd - g[j]) / abs(g[j]))
    return worst <= tol, worst


def mlem_fixed_point_suite(n: int = 32, n_angles: int = 40, seed: int = 0,
                           tol: float = 1e-10) -> tuple[bool, float]:
    """With noiseless consistent data, the true strictly positive image
    is a fixed point of the multiplicative update."""
    rng = np.random.default_rng(seed)
    grid = GridSpec(n, n)
    x, y = grid.pixel_centers()
    truth = 0.2 + np.exp(-((x - 0.5) ** 2 + (y - 0.45) ** 2) / 0.02) \
        + 0.5 * np.exp(-((x - 0.3) ** 2 + (y - 0.7) ** 2) / 0.01)
    truth += 0.01 * rng.random((n, n))
    img = Image(grid, truth)
    nbins, pitch = default_detector(grid)
    spec = ProjectorSpec(grid, uniform_angles(n_angles), nbins, pitch,
                         "linear")
    A = build_projector(spec)
    b = forward(A, img)

    flat = img.ravel()
    sens = A.apply_adjoint(np.ones(A.nrows))
    floor = 1e-12 * float(np.max(A.apply(np.ones(A.ncols))))
    q = np.maximum(A.apply(flat), floor)
    update = flat / np.where(sens > 0, sens, 1.0) * A.apply_adjoint(b.ravel() / q)
    move = float(np.linalg.norm(update - flat) / np.linalg.norm(flat))
    return move <= tol, move


def error_bound_suite(trials: int = 100, n: int = 16, seed: int = 0
                      ) -> tuple[bool, float]:
    report = verify_error_bound(trials, n, seed)
    return report.passed, report.min_slack


def cmd_verify(cfg: dict) -> int:
    suites = [
        ("adjoint", lambda: adjoint_suite(
            seed=cfg["seed"], inject_fault=cfg["break_adjoint"])),
        ("gradient", lambda: gradient_suite(seed=cfg["seed"])),
        ("mlem_fixed_point", lambda: mlem_fixed_point_suite(seed=cfg["seed"])),
        ("error_bound", lambda: error_bound_suite(
            trials=cfg["trials"], n=cfg["n"], seed=cfg["seed"])),
    ]
    all_ok = True
    for name, run in suites:
        ok, stat = run()
        all_ok &= ok
        print(f"{'PASS' if ok else 'FAIL'} {name} ({stat:.3e})")
    return 0 if all_ok else 1


_DISPATCH = {
    "phantom": cmd_phantom,
    "simulate": cmd_simulate,
    "reconstruct": cmd_reconstruct,
    "sweep": cmd_sweep,
    "report": cmd_report,
    "verify": cmd_verify,
}


def run(argv: list[str]) -> int:
    try:
        cfg = resolve_config(argv)
        return _DISPATCH[cfg["command"]](cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, fileio.TomoFileError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
