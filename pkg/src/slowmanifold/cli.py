"""Configuration-driven certification runs.

This module turns a flat text config into a full certification run:
equilibrium validation, eigenframe, optional Taylor chart, the ball
iteration, and every hypothesis check, ending in a certificate JSON
file plus a CSV of manifold samples.  Three subcommands share the
machinery:

* ``certify <config>``   runs the pipeline and writes certificate + CSV.
* ``sweep <config>``     repeats a run over a grid of ball radii and
  writes a summary table.
* ``export-manifold <config>``  writes only the sample CSV.

Exit codes are part of the contract: 0 means every hypothesis was
verified, 1 means some hypothesis failed (its name goes to stderr),
2 means the configuration itself was rejected.  Reruns with the same
config produce byte-identical certificate files; wall-clock timings
never enter the serialized output.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import certify as ct
from .chart import TaylorChart, eval_P_float, solve_bundles, solve_invariance
from .field import (SHParams, newton_equilibrium, validate_equilibrium,
                    verify_morse_index)
from .frame import EigenFrame, SubspaceSplit, build_frame
from .gronwall import (BallEscapePossible, OrderingViolation, bootstrap_G,
                       build_rates, check_stay_inside)
from .intervals import IntervalError
from .linear_coords import linear_constants
from .nonlinear_coords import nonlinear_constants, prepare_chart_constants


class ConfigError(ValueError):
    """The config file cannot be turned into a valid run."""


# ----------------------------------------------------------------------
# Config parsing.

def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(tok) for tok in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated floats, got {text!r}") from exc


_KEY_TYPES = {
    "beta1": float,
    "beta2": float,
    "nu": float,
    "N": int,
    "mode": str,
    "n_theta": int,
    "taylor_order": int,
    "rho": _floats,
    "guess": _floats,
    "P_init": _floats,
    "Pbar_init": _floats,
    "N_bootstrap": int,
    "gamma_minus1_factor": float,
    "T1": float,
    "T2": float,
    "sweep_block": str,
    "sweep_min": float,
    "sweep_max": float,
    "sweep_points": int,
    "certificate_path": str,
    "csv_path": str,
    "sweep_path": str,
    "seed": int,
}

_REQUIRED = ("mode", "beta1", "beta2", "nu", "N", "rho", "guess")


@dataclass(frozen=True)
class RunConfig:
    """One fully validated certification run."""

    beta1: float
    beta2: float
    nu: float
    N: int
    mode: str
    rho: tuple[float, ...]
    guess: tuple[float, ...]
    n_theta: int = 0
    taylor_order: int = 20
    P_init: tuple[float, ...] | None = None
    Pbar_init: tuple[tuple[float, ...], ...] | None = None
    N_bootstrap: int = 5
    gamma_minus1_factor: float = 0.5
    T1: float | None = None
    T2: float | None = None
    sweep_block: str | None = None
    sweep_min: float | None = None
    sweep_max: float | None = None
    sweep_points: int = 0
    certificate_path: str = "certificate.json"
    csv_path: str = "manifold.csv"
    sweep_path: str = "sweep.csv"
    seed: int = 0

    @property
    def stable_names(self) -> tuple[str, ...]:
        if self.mode == "nonlinear":
            return ("theta", "f", "inf")
        return ("f", "inf")

    @property
    def m_s(self) -> int:
        return len(self.stable_names)


def parse_config_text(text: str) -> dict:
    """Key/value lines with ``#`` comments; unknown keys are errors."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key not in _KEY_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if not value:
            raise ConfigError(f"line {lineno}: empty value for {key!r}")
        raw[key] = value
    out = {}
    for key, value in raw.items():
        try:
            out[key] = _KEY_TYPES[key](value)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {value!r}") from exc
    return out


def config_from_mapping(data: dict) -> RunConfig:
    for key in _REQUIRED:
        if key not in data:
            raise ConfigError(f"missing required key {key!r}")
    mode = data["mode"]
    if mode not in ("linear", "nonlinear"):
        raise ConfigError(f"mode must be 'linear' or 'nonlinear', got {mode!r}")
    data.setdefault("n_theta", 1 if mode == "nonlinear" else 0)

    pbar = data.pop("Pbar_init", None)
    if pbar is not None:
        m = 3 if mode == "nonlinear" else 2
        if len(pbar) != m * m:
            raise ConfigError(f"Pbar_init needs {m * m} row-major entries")
        data["Pbar_init"] = tuple(
            tuple(pbar[i * m : (i + 1) * m]) for i in range(m)
        )
    cfg = RunConfig(**data)

    if cfg.beta1 <= 0.0:
        raise ConfigError("beta1 must be positive")
    if cfg.nu < 1.0:
        raise ConfigError("nu must be at least 1")
    if cfg.N < 4:
        raise ConfigError("N must be at least 4")
    expected_n_theta = 1 if mode == "nonlinear" else 0
    if cfg.n_theta != expected_n_theta:
        raise ConfigError(
            f"mode {mode!r} requires n_theta = {expected_n_theta}"
        )
    if len(cfg.rho) != cfg.m_s:
        raise ConfigError(
            f"mode {mode!r} needs {cfg.m_s} radii "
            f"({', '.join(cfg.stable_names)}), got {len(cfg.rho)}"
        )
    if any(r <= 0.0 for r in cfg.rho):
        raise ConfigError("every radius must be positive")
    if not cfg.guess or len(cfg.guess) > cfg.N + 1:
        raise ConfigError("guess must hold 1..N+1 cosine coefficients")
    if cfg.taylor_order < 1:
        raise ConfigError("taylor_order must be at least 1")
    if cfg.N_bootstrap < 0:
        raise ConfigError("N_bootstrap must be nonnegative")
    if not 0.0 < cfg.gamma_minus1_factor < 1.0:
        raise ConfigError("gamma_minus1_factor must lie in (0, 1)")
    if (cfg.T1 is None) != (cfg.T2 is None):
        raise ConfigError("T1 and T2 must be given together")
    if cfg.T1 is not None and not 0.0 < cfg.T1 < cfg.T2:
        raise ConfigError("need 0 < T1 < T2")
    if cfg.P_init is not None and len(cfg.P_init) != cfg.m_s:
        raise ConfigError(f"P_init needs {cfg.m_s} entries")
    if cfg.sweep_block is not None:
        if cfg.sweep_block not in cfg.stable_names:
            raise ConfigError(
                f"sweep_block must be one of {cfg.stable_names}"
            )
        if cfg.sweep_min is None or cfg.sweep_max is None:
            raise ConfigError("sweep_min and sweep_max are required to sweep")
        if not 0.0 < cfg.sweep_min < cfg.sweep_max:
            raise ConfigError("need 0 < sweep_min < sweep_max")
        if cfg.sweep_points < 2:
            raise ConfigError("sweep_points must be at least 2")
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return config_from_mapping(parse_config_text(path.read_text()))


# ----------------------------------------------------------------------
# The certification chain.

_DEFAULT_SEEDS = {
    # Iteration seeds only; the endomorphism checks validate whatever
    # ball the iteration lands on, so these just need to converge.
    "linear": (
        (0.153, 1.4e-5),
        ((17.0, 1.4e-3), (1.4e-3, 2.2e-4)),
    ),
    "nonlinear": (
        (1e-10, 1e-5, 1e-5),
        ((1e-3, 1e-3, 1e-3),) * 3,
    ),
}


@dataclass(frozen=True)
class Problem:
    """Everything about the equilibrium that is independent of the ball."""

    p: SHParams
    v: object
    frame: EigenFrame
    chart: TaylorChart | None
    morse: int


def build_problem(cfg: RunConfig) -> Problem:
    p = SHParams(beta1=cfg.beta1, beta2=cfg.beta2, N=cfg.N, nu=cfg.nu)
    guess = np.zeros(cfg.N + 1)
    guess[: len(cfg.guess)] = cfg.guess
    a = newton_equilibrium(p, guess)
    v = validate_equilibrium(p, a)
    morse = verify_morse_index(p, v)
    if morse != 1:
        raise ConfigError(
            f"equilibrium found from this guess has Morse index {morse}; "
            "only index-1 equilibria are supported"
        )
    split = SubspaceSplit(n_u=morse, n_theta=cfg.n_theta, n_f=cfg.N, N=cfg.N)
    frame = build_frame(p, v, split)
    chart = None
    if cfg.mode == "nonlinear":
        chart = solve_invariance(p, frame, a, order=cfg.taylor_order)
        chart = solve_bundles(p, frame, chart)
    return Problem(p=p, v=v, frame=frame, chart=chart, morse=morse)


def _initial_ball(cfg: RunConfig, rho: tuple[float, ...]) -> ct.ChartBall:
    seed_P, seed_Pbar = _DEFAULT_SEEDS[cfg.mode]
    P = cfg.P_init if cfg.P_init is not None else seed_P
    Pbar = cfg.Pbar_init if cfg.Pbar_init is not None else seed_Pbar
    return ct.ChartBall(
        names=cfg.stable_names,
        unstable=("u",),
        rho=rho,
        P=(tuple(P),),
        Pbar=(tuple(tuple(row) for row in Pbar),),
    )


def _provenance(cfg: RunConfig, prob: Problem,
                rho: tuple[float, ...], prep) -> dict:
    out: dict[str, float | str | int] = {
        "beta1": cfg.beta1,
        "beta2": cfg.beta2,
        "nu": cfg.nu,
        "N": cfg.N,
        "n_theta": cfg.n_theta,
        "N_bootstrap": cfg.N_bootstrap,
        "gamma_minus1_factor": cfg.gamma_minus1_factor,
        "seed": cfg.seed,
    }
    for name, r in zip(cfg.stable_names, rho):
        out[f"rho_{name}"] = r
    if prob.chart is not None:
        out["taylor_order"] = prob.chart.order
        out["scaling"] = prob.chart.scaling
    if prep is not None:
        out["delta_theta"] = prep.defects.delta_theta
    return out


def run_chain(cfg: RunConfig, prob: Problem,
              rho: tuple[float, ...] | None = None,
              log=None) -> ct.Certificate:
    """Iterate the ball and run every check, folding failures into the
    certificate instead of raising."""

    def note(msg: str) -> None:
        if log is not None:
            log(msg)

    rho = tuple(rho if rho is not None else cfg.rho)
    failures: dict[str, str] = {}
    pack = rates = G = K = F = None
    Pt = Pbt = stay = J = J_norm = None
    ok_P = ok_Pb = ok_J = False
    prep = None
    ball = _initial_ball(cfg, rho)

    p, v, frame, chart = prob.p, prob.v, prob.frame, prob.chart
    stage = "endomorphism_B01"
    try:
        if cfg.mode == "nonlinear":
            prep = prepare_chart_constants(p, frame, v, chart, rho[0])
            note(f"chart constants prepared, delta_theta = "
                 f"{prep.defects.delta_theta:.4e}")

            def pack_builder(b):
                pk = nonlinear_constants(
                    p, frame, v, chart, b.rho_map(), b.P_map(), prep
                )
                rt = build_rates(pk, cfg.gamma_minus1_factor)
                return pk, rt, bootstrap_G(pk, rt, cfg.N_bootstrap)
        else:

            def pack_builder(b):
                pk = linear_constants(p, frame, v, b.rho_map(), b.P_map())
                rt = build_rates(pk, cfg.gamma_minus1_factor)
                return pk, rt, bootstrap_G(pk, rt, cfg.N_bootstrap)

        if cfg.P_init is None:
            stage = "endomorphism_B01"
            ball = ct.iterate_P(pack_builder, ball)
            note(f"iterated graph-slope row: {ball.P}")
        if cfg.Pbar_init is None:
            stage = "endomorphism_B11"
            ball = ct.iterate_Pbar(pack_builder, ball)
            note("iterated curvature block")

        stage = "gamma0_negative"
        pack, rates, G = pack_builder(ball)
        stage = "endomorphism_B01"
        Pt, ok_P = ct.endo_P_check(pack, rates, G, ball)
        stage = "endomorphism_B11"
        _, K = ct.build_S_and_K(pack, ball, G, rates)
        Pbt, ok_Pb = ct.endo_Pbar_check(pack, ball, G, K, rates)
        stage = "contraction_J"
        F = ct.build_F(pack, ball, G, rates)
        J, J_norm, ok_J = ct.build_J_and_contract(pack, G, F, rates)
        note(f"J norm = {J_norm.hi:.6e}")
    except (IntervalError, ValueError) as exc:
        name = stage
        if isinstance(exc, OrderingViolation):
            name = "gamma0_negative"
        failures[name] = f"{type(exc).__name__}: {exc}"
        note(f"stage failed ({name}): {exc}")

    if rates is not None and G is not None:
        try:
            stay = check_stay_inside(
                rates, G, ball.rho_map(), T1=cfg.T1, T2=cfg.T2
            )
        except (IntervalError, ValueError) as exc:
            failures["stay_inside_ball"] = f"{type(exc).__name__}: {exc}"
            note(f"stay-inside failed: {exc}")

    stable_ok = all(frame.lam[n].hi < 0.0 for n in cfg.stable_names)
    unstable_ok = frame.lam["u"].lo > 0.0
    margin = min(-frame.lam[n].hi for n in cfg.stable_names) if stable_ok else 0.0
    return ct.assemble_certificate(
        cfg.mode, ball, pack, rates, G, K, F,
        Pt, ok_P, Pbt, ok_Pb, stay, J, J_norm, ok_J,
        spectrum_verified=(prob.morse == 1 and stable_ok and unstable_ok),
        spectrum_margin=margin,
        failures=failures,
        provenance=_provenance(cfg, prob, rho, prep),
    )


def first_failed_hypothesis(cert: ct.Certificate) -> str | None:
    for h in cert.hypotheses:
        if h.status == "failed":
            return h.name
    for h in cert.hypotheses:
        if h.status != "verified":
            return h.name
    return None


# ----------------------------------------------------------------------
# Manifold samples.

def _profile_rows(coeffs: np.ndarray, theta: float, xs: np.ndarray,
                  err: float) -> list[tuple[float, float, float, float, float]]:
    k = np.arange(1, len(coeffs))
    values = coeffs[0] + 2.0 * (np.cos(np.outer(xs, k)) @ coeffs[1:])
    mass = abs(coeffs[0]) + 2.0 * float(np.sum(np.abs(coeffs[1:])))
    slop = (len(coeffs) + 5) * np.finfo(float).eps * mass
    total = err + slop
    return [
        (theta, float(x), float(u), float(u - total), float(u + total))
        for x, u in zip(xs, values)
    ]


def write_manifold_csv(path: Path, cfg: RunConfig, prob: Problem,
                       cert: ct.Certificate, n_theta_samples: int = 33,
                       n_x: int = 65) -> None:
    """Sampled profiles with enclosure columns.

    Each row encloses the certified manifold point: the midpoint column
    carries the chart evaluation and lo/hi widen it by the certificate's
    sup-norm error plus a floating-point evaluation bound.  The theta
    grid covers the certified parameter range, so the theta = 0 rows
    reproduce the equilibrium profile.
    """
    err = cert.C0_error + cert.eps.get("u", 0.0)
    xs = np.linspace(0.0, math.pi, n_x)
    if n_theta_samples % 2 == 0:
        n_theta_samples += 1  # keep an exact theta = 0 row
    rows = []
    if cfg.mode == "nonlinear":
        delta = float(cert.provenance["delta_theta"])
        thetas = np.linspace(-delta, delta, n_theta_samples)
        for theta in thetas:
            coeffs = eval_P_float(prob.chart, float(theta))
            rows.extend(_profile_rows(coeffs, float(theta), xs, err))
    else:
        a_bar = prob.v.a_bar.coeffs.mid()
        xi = prob.frame.QN.mid()[:, prob.frame.split.n_u]
        radius = cfg.rho[0]
        thetas = np.linspace(-radius, radius, n_theta_samples)
        for theta in thetas:
            coeffs = a_bar + float(theta) * xi
            rows.extend(_profile_rows(coeffs, float(theta), xs, err))
    lines = ["theta,x,u(x),lo,hi"]
    lines.extend(
        f"{t!r},{x!r},{u!r},{lo!r},{hi!r}" for t, x, u, lo, hi in rows
    )
    path.write_text("\n".join(lines) + "\n")


# ----------------------------------------------------------------------
# Sweep.

def _sweep_point(args) -> tuple:
    cfg, prob, value = args
    idx = cfg.stable_names.index(cfg.sweep_block)
    rho = tuple(
        value if i == idx else r for i, r in enumerate(cfg.rho)
    )
    try:
        cert = run_chain(cfg, prob, rho=rho)
    except Exception as exc:  # a sweep point must never kill the table
        return rho + ("", "", "", "", f"error:{type(exc).__name__}")
    if cert.status == "certified":
        status = "certified"
    else:
        status = f"failed:{first_failed_hypothesis(cert)}"
    p_max = max((hi for _, hi in cert.Ptilde.values()), default=float("nan"))
    pbar_max = max(
        (hi for _, hi in cert.Pbar_tilde.values()), default=float("nan")
    )
    return rho + (p_max, pbar_max, cert.J_norm[1], cert.C0_error, status)


def run_sweep(cfg: RunConfig, prob: Problem, path: Path,
              log=None) -> int:
    if cfg.sweep_block is None:
        raise ConfigError("sweep requires sweep_block/sweep_min/sweep_max/"
                          "sweep_points")
    values = np.geomspace(cfg.sweep_min, cfg.sweep_max, cfg.sweep_points)
    jobs = [(cfg, prob, float(v)) for v in values]
    workers = min(len(jobs), os.cpu_count() or 1)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_point, jobs))
    else:
        rows = []
        for i, job in enumerate(jobs, start=1):
            rows.append(_sweep_point(job))
            if log is not None:
                log(f"sweep point {i}/{len(jobs)} done "
                    f"({cfg.sweep_block} = {job[2]:.3e})")
    header = [f"rho_{name}" for name in cfg.stable_names]
    header += ["P_max", "Pbar_max", "J_norm", "C0_error", "status"]
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v)
                              for v in row))
    path.write_text("\n".join(lines) + "\n")
    bad = [row for row in rows if str(row[-1]) != "certified"]
    if bad:
        print(f"hypothesis failed: {bad[0][-1]} "
              f"(first at {cfg.sweep_block} = {bad[0][cfg.stable_names.index(cfg.sweep_block)]!r})",
              file=sys.stderr)
        return 1
    return 0


# ----------------------------------------------------------------------
# Entry points.

def _make_logger(verbose: bool):
    if not verbose:
        return None
    t0 = time.time()

    def log(msg: str) -> None:
        print(f"[{time.time() - t0:7.2f}s] {msg}", file=sys.stderr)

    return log


def _out_path(out_dir: str | None, rel: str) -> Path:
    base = Path(out_dir) if out_dir else Path(".")
    base.mkdir(parents=True, exist_ok=True)
    return base / rel


def run_command(command: str, config_path: str, out_dir: str | None,
                verbose: bool) -> int:
    log = _make_logger(verbose)
    cfg = load_config(config_path)
    if log is not None:
        log(f"config loaded: mode={cfg.mode}, N={cfg.N}, rho={cfg.rho}")
    prob = build_problem(cfg)
    if log is not None:
        log(f"equilibrium validated, eps = {prob.v.eps.hi:.3e}")

    if command == "sweep":
        path = _out_path(out_dir, cfg.sweep_path)
        code = run_sweep(cfg, prob, path, log=log)
        print(f"sweep table: {path}")
        return code

    cert = run_chain(cfg, prob, log=log)
    if command == "certify":
        cert_path = _out_path(out_dir, cfg.certificate_path)
        cert_path.write_text(ct.certificate_to_json(cert) + "\n")
        print(f"certificate: {cert_path}")
    print(f"status: {cert.status}")
    if cert.status != "certified":
        name = first_failed_hypothesis(cert)
        detail = next(
            (h.detail for h in cert.hypotheses if h.name == name), ""
        )
        print(f"hypothesis failed: {name} {detail}".rstrip(), file=sys.stderr)
        return 1
    csv_path = _out_path(out_dir, cfg.csv_path)
    write_manifold_csv(csv_path, cfg, prob, cert)
    print(f"samples: {csv_path}")
    print(f"J_norm in [{cert.J_norm[0]!r}, {cert.J_norm[1]!r}]")
    print(f"C0_error = {cert.C0_error!r}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="slowmanifold",
        description="Certify local stable manifolds of Swift-Hohenberg "
                    "equilibria from a config file.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("certify", "run the full pipeline and write certificate + samples"),
        ("sweep", "repeat certification over a radius grid"),
        ("export-manifold", "write only the manifold sample CSV"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("config", help="path to the run config")
        cmd.add_argument("--verbose", action="store_true",
                         help="stage-by-stage progress on stderr")
        cmd.add_argument("--out", default=None, metavar="DIR",
                         help="directory for output files")
    args = parser.parse_args(argv)
    try:
        return run_command(args.command, args.config, args.out, args.verbose)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
