"""Command-line experiment runner.

Every command writes CSV tables and a JSON summary (with ``schema_version``)
into the output directory and prints the summary to stdout.  Outputs contain
no timestamps, so reruns with the same configuration are byte-identical.
Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 failed hypothesis.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import io
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import torus
from .algebra import AffineABCAction, check_faithful, load_action, rho_matrix, verify_relations
from .diophantine import dimension_estimate, kronecker_exponent, kronecker_search, sdc_check
from .errors import AbcLabError, ConfigInvalid
from .herman import birkhoff_reconstruct, compare_modulo_constant
from .hyperbolic import (SpectralData, fixed_point_trace, fourier_decay_diagnostic, franks_conjugacy,
                         lyapunov_exponents, oscillation)
from .kam import KamConfig, kam_run, linearize_anosov
from .perturb import conjugated_action, trig_perturbation
from .torus import FourierMap

SCHEMA_VERSION = 1
SCENARIOS = ("local-rigidity", "franks-remark", "kronecker", "birkhoff", "lyapunov-abc", "oscillation")


# ---------------------------------------------------------------------------
# configuration


def _parse_matrix(text) -> list:
    """``"2,1;1,1"`` or nested lists to a list of rows."""
    if isinstance(text, str):
        return [[float(v) for v in row.split(",")] for row in text.split(";") if row.strip()]
    return [list(map(float, np.atleast_1d(r))) for r in text]


def _parse_vector(text) -> list:
    if isinstance(text, str):
        return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    return [float(v) for v in text]


@dataclass
class ExperimentConfig:
    """All knobs of one run; ``validate`` enforces the documented ranges."""

    scenario: str = "local-rigidity"
    action: str | None = None
    matrix: list = field(default_factory=lambda: [[2, 1], [1, 1]])
    coefficients: list = field(default_factory=lambda: [math.sqrt(2) - 1, math.sqrt(3) - 1])
    modes: list = field(default_factory=lambda: [[1, 0], [0, 1], [1, 1]])
    amplitude: float = 1e-3
    epsilon: float = 0.01
    seed: int | None = 0
    grid: int = 256
    n_max: int = 256
    orbit_len: int = 100_000
    l_max: int = 64
    samples: int = 20
    targets: int = 32
    p_max: int = 8
    tolerance: float = 1e-8
    max_iter: int = 12
    output: str = "abclab-out"

    RANGES = {
        "amplitude": (0.0, 0.2), "epsilon": (0.0, 0.05), "grid": (8, 1024), "n_max": (1, 4096),
        "orbit_len": (1000, 10_000_000), "l_max": (2, 4096), "samples": (1, 1000), "targets": (1, 1024),
        "p_max": (1, 256), "tolerance": (0.0, 1.0), "max_iter": (1, 200),
    }

    def validate(self) -> "ExperimentConfig":
        if self.scenario not in SCENARIOS:
            raise ConfigInvalid(f"unknown scenario {self.scenario!r}; choose from {', '.join(SCENARIOS)}")
        for name, (lo, hi) in self.RANGES.items():
            v = getattr(self, name)
            if not (lo <= v <= hi):
                raise ConfigInvalid(f"{name} = {v} outside [{lo}, {hi}]")
        if self.grid & (self.grid - 1):
            raise ConfigInvalid("grid must be a power of two")
        if self.seed is None:
            raise ConfigInvalid("a seed is required")
        try:
            M = np.asarray(self.matrix, float)
        except ValueError as exc:
            raise ConfigInvalid("matrix rows must have equal length") from exc
        if M.ndim != 2 or M.shape[0] != M.shape[1] or np.any(M != np.rint(M)):
            raise ConfigInvalid("matrix must be a square integer matrix")
        if len(self.coefficients) != M.shape[0]:
            raise ConfigInvalid("one coefficient per matrix dimension is required")
        if any(len(m) != M.shape[0] for m in self.modes):
            raise ConfigInvalid("perturbation modes must match the torus dimension")
        return self

    @classmethod
    def from_mapping(cls, data: dict) -> "ExperimentConfig":
        names = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in data.items():
            key = key.replace("-", "_")
            if key not in names:
                raise ConfigInvalid(f"unknown configuration key {key!r}")
            kwargs[key] = _coerce(key, value, cls)
        return cls(**kwargs).validate()

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        """Read a JSON file or an INI file with an ``[experiment]`` section."""
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigInvalid(f"cannot read {path}: {exc}") from exc
        if path.suffix.lower() == ".json" or text.lstrip().startswith("{"):
            try:
                data = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigInvalid(f"invalid JSON in {path}: {exc}") from exc
        else:
            parser = configparser.ConfigParser()
            try:
                parser.read_string(text)
            except configparser.Error as exc:
                raise ConfigInvalid(f"invalid config file {path}: {exc}") from exc
            data = {}
            for section in parser.sections():
                data.update(parser[section])
        return cls.from_mapping(data)


def _coerce(key: str, value, cls):
    default = next(f for f in dataclasses.fields(cls) if f.name == key)
    try:
        if key in ("matrix", "modes"):
            return _parse_matrix(value)
        if key == "coefficients":
            return _parse_vector(value)
        if key in ("scenario", "output"):
            return str(value)
        if key == "action":
            return None if value in (None, "", "none") else str(value)
        if key == "seed":
            return None if value in (None, "", "none") else int(value)
        if default.type in ("int", int) or isinstance(default.default, int):
            return int(float(value))
        return float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"bad value for {key}: {value!r}") from exc


# ---------------------------------------------------------------------------
# output


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def to_json(summary: dict) -> str:
    data = {"schema_version": SCHEMA_VERSION, **summary}
    return json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n"


class Output:
    def __init__(self, directory):
        self.dir = Path(directory)
        self.files: dict[str, str] = {}

    def add(self, name: str, text: str) -> None:
        self.files[name] = text

    def write(self) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        for name, text in sorted(self.files.items()):
            (self.dir / name).write_text(text)


# ---------------------------------------------------------------------------
# shared builders


def _action(cfg: ExperimentConfig) -> AffineABCAction:
    if cfg.action:
        return load_action(cfg.action)
    A = np.rint(np.asarray(cfg.matrix)).astype(int)
    return AffineABCAction.build(A, A, rho_matrix(cfg.coefficients, A))


def _perturbed(cfg: ExperimentConfig, anosov: bool = True):
    act = _action(cfg)
    g = trig_perturbation(cfg.modes, cfg.amplitude, cfg.seed, act.N)
    return act, conjugated_action(g, act.A.entries, act.rhos[0], grid=cfg.grid, anosov=anosov)


def _p_list(p_max: int, dim: int) -> np.ndarray:
    """Deterministic set of lattice vectors with 1 <= ||p||_inf <= p_max."""
    rows = []
    for r in sorted({1, 2, max(1, p_max // 2), p_max}):
        for i in range(dim):
            e = np.zeros(dim, int)
            e[i] = r
            rows.append(e)
        rows.append(np.full(dim, r))
        alt = np.full(dim, r)
        alt[1::2] = -r
        rows.append(alt)
    uniq = {tuple(r) for r in rows}
    return np.array(sorted(uniq, key=lambda p: (max(map(abs, p)), p)))


# ---------------------------------------------------------------------------
# scenarios


def scenario_local_rigidity(cfg: ExperimentConfig, out: Output) -> dict:
    act, P = _perturbed(cfg)
    res = kam_run(P.translations, act.rhos[0], KamConfig(grid=cfg.grid, max_iter=cfg.max_iter))
    lin = linearize_anosov(P.anosov, res.conjugacy, act.A, tol=1e-6, grid=cfg.grid)
    out.add("kam_report.csv", res.report.to_csv())
    out.add("conjugacy.json", lin.conjugacy.to_json() + "\n")
    return {
        "scenario": "local-rigidity", "iterations": res.state.n, "final_eps": res.state.eps,
        "termination": res.report.termination, "translation_residual": res.report.residual,
        "anosov_residual": lin.residual, "F0": lin.F0, "variation": lin.variation,
        "amplitude": cfg.amplitude,
    }


def scenario_franks_remark(cfg: ExperimentConfig, out: Output) -> dict:
    A_bar = np.rint(np.asarray(cfg.matrix)).astype(int)
    N = A_bar.shape[0]
    e = cfg.epsilon
    # A(x) = A_bar x + e sin(4 pi x_1) (1, ..., 1)
    n = (2,) + (0,) * (N - 1)
    A = FourierMap.from_modes({n: np.full(N, -0.5j * e)}, linear=A_bar) if e else FourierMap.linear_map(A_bar)
    h = franks_conjugacy(A, A_bar, tol=cfg.tolerance)
    rng = np.random.default_rng(cfg.seed)
    resid = h.residual(rng.random((2048, N)))
    obs = fixed_point_trace(A)
    out.add("franks.csv", to_csv(["epsilon", "residual", "trace", "linear_trace", "trace_mismatch"],
                                 [[e, resid, obs.trace, obs.linear_trace, obs.trace - obs.linear_trace]]))
    return {
        "scenario": "franks-remark", "epsilon": e, "residual": resid, "contraction": h.contraction,
        "fixed_point": obs.fixed_point, "trace": obs.trace, "linear_trace": obs.linear_trace,
        "trace_mismatch": obs.trace - obs.linear_trace, "expected_mismatch": 4 * math.pi * e,
        "c1_obstructed": obs.obstructed,
    }


def scenario_kronecker(cfg: ExperimentConfig, out: Output) -> dict:
    rng = np.random.default_rng(cfg.seed)
    radii = [r for r in (4, 8, 16, 32, 64, 128, 256) if r <= cfg.l_max]
    rows, slopes = [], []
    for s in range(cfg.samples):
        M = rng.random((2, 4))
        Y = rng.random((cfg.targets, 2))
        errs, fit = kronecker_exponent(M, radii, Y)
        slopes.append(fit.slope)
        rows.extend([[s, r, e] for r, e in zip(radii, errs)])
    out.add("kronecker.csv", to_csv(["sample", "n", "mean_error"], rows))
    slopes = np.asarray(slopes)
    return {"scenario": "kronecker", "radii": radii, "slopes": slopes,
            "slope_mean": float(np.mean(slopes)), "expected_slope": -2.0}


def scenario_birkhoff(cfg: ExperimentConfig, out: Output) -> dict:
    act, P = _perturbed(cfg, anosov=False)
    res = birkhoff_reconstruct(P.translations, act.rhos[0], cfg.n_max)
    err = compare_modulo_constant(res.h_estimate, P.g)
    levels = [p.n for p in res.partials[1:]]
    out.add("birkhoff_curve.csv", to_csv(["n", "difference"], zip(levels, res.curve)))
    out.add("h_estimate.json", to_json({"grid": res.h_estimate.resolution,
                                        "values": res.h_estimate.values}))
    return {"scenario": "birkhoff", "n_max": cfg.n_max, "c0_error": err,
            "curve_first": float(res.curve[0]), "curve_last": float(res.curve[-1])}


def scenario_lyapunov_abc(cfg: ExperimentConfig, out: Output) -> dict:
    act, P = _perturbed(cfg)
    rows = []
    summary = {"scenario": "lyapunov-abc", "orbit_len": cfg.orbit_len}
    for name, T in [("anosov", P.anosov)] + [(f"translation_{i}", T) for i, T in enumerate(P.translations)]:
        est = lyapunov_exponents(T, orbit_len=cfg.orbit_len)
        rows.append([name, *est.exponents, est.error])
        summary[name] = est.exponents
    out.add("lyapunov.csv", to_csv(["generator"] + [f"lambda_{i}" for i in range(act.N)] + ["error"], rows))
    return summary


def scenario_oscillation(cfg: ExperimentConfig, out: Output) -> dict:
    act, P = _perturbed(cfg, anosov=False)
    ps = _p_list(cfg.p_max, act.N)
    rep = oscillation(P.translations, ps, grid=min(cfg.grid, 64), spectral=SpectralData.of(act.A, act.B))
    out.add("oscillation.csv", to_csv([f"p{i}" for i in range(act.N)] + ["norm", "osc", "osc_upper"],
                                      [[*p, n, o, u] for p, n, o, u in zip(ps, rep.p_norm, rep.osc, rep.osc_upper)]))
    return {"scenario": "oscillation", "c_hat": rep.fit.slope, "fit_degenerate": rep.fit.degenerate,
            "c_bound": rep.bound, "max_osc": float(np.max(rep.osc))}


RUNNERS = {
    "local-rigidity": scenario_local_rigidity,
    "franks-remark": scenario_franks_remark,
    "kronecker": scenario_kronecker,
    "birkhoff": scenario_birkhoff,
    "lyapunov-abc": scenario_lyapunov_abc,
    "oscillation": scenario_oscillation,
}


def run_scenario(cfg: ExperimentConfig, write: bool = True) -> tuple[int, dict, Output]:
    """Run one preset; returns (exit status, summary, output files)."""
    cfg.validate()
    out = Output(cfg.output)
    summary = RUNNERS[cfg.scenario](cfg, out)
    out.add("summary.json", to_json(summary))
    if write:
        out.write()
    return 0, summary, out


# ---------------------------------------------------------------------------
# individual commands


def _cmd_validate(args) -> dict:
    act = load_action(args.action)
    res = verify_relations(act, samples=args.samples, seed=args.seed)
    faith = check_faithful(act, args.denominator)
    return {"command": "validate", "N": act.N, "K": act.K, "relation_residual": res,
            "faithful": faith.faithful, "relation": faith.relation, "bound_searched": faith.bound_searched}


def _cmd_kam(args, out: Output) -> dict:
    cfg = _config_from_args(args, "local-rigidity")
    return scenario_local_rigidity(cfg, out)


def _cmd_franks(args, out: Output) -> dict:
    return scenario_franks_remark(_config_from_args(args, "franks-remark"), out)


def _cmd_kronecker(args, out: Output) -> dict:
    M = np.asarray(_parse_matrix(args.matrix))
    y = np.asarray(_parse_vector(args.target))
    res = kronecker_search(M, y, args.n)
    out.add("kronecker.csv", to_csv(["n", "error"], zip(res.radii, res.errors)))
    return {"command": "kronecker", "best_p": res.best_p, "best_q": res.best_q, "error": res.err,
            "slope": res.fit.slope if res.fit is not None else None}


def _cmd_sdc(args, out: Output) -> dict:
    V = np.asarray(_parse_matrix(args.vectors))
    rep = sdc_check(V, args.tau, args.n_max)
    return {"command": "sdc", "c_fit": rep.c_fit, "worst_n": rep.worst_n, "passed": rep.passed,
            "c_fit_double": rep.c_fit_double}


def _cmd_dimension(args, out: Output) -> dict:
    V = np.asarray(_parse_matrix(args.vectors))
    res = dimension_estimate(V, args.l_max, grid=args.grid)
    out.add("dimension.csv", to_csv(["l", "covering_radius"], zip(res.radii, res.covering)))
    return {"command": "dimension", "d_fit": res.d_fit, "c_fit": res.c_fit, "residual": res.residual}


def _cmd_birkhoff(args, out: Output) -> dict:
    return scenario_birkhoff(_config_from_args(args, "birkhoff"), out)


def _cmd_lyapunov(args, out: Output) -> dict:
    return scenario_lyapunov_abc(_config_from_args(args, "lyapunov-abc"), out)


def _cmd_oscillation(args, out: Output) -> dict:
    return scenario_oscillation(_config_from_args(args, "oscillation"), out)


def _cmd_decay(args, out: Output) -> dict:
    cfg = _config_from_args(args, "lyapunov-abc")
    act, P = _perturbed(cfg)
    h = franks_conjugacy(P.anosov, act.A).to_fourier(min(cfg.grid, 64))
    ps = _p_list(cfg.p_max, act.N)
    rows = fourier_decay_diagnostic(P.translations, h, act.A, act.B, args.modes_up_to, ps)
    out.add("decay.csv", to_csv([f"p{i}" for i in range(act.N)] + ["max_mode", "relation_residual"],
                                [[*r.p, r.max_mode, r.relation_residual] for r in rows]))
    return {"command": "decay", "max_mode": max(r.max_mode for r in rows)}


def _config_from_args(args, scenario: str) -> ExperimentConfig:
    data = {}
    if getattr(args, "config", None):
        data.update(dataclasses.asdict(ExperimentConfig.load(args.config)))
    data["scenario"] = scenario
    for key in ("action", "amplitude", "epsilon", "seed", "grid", "n_max", "orbit_len", "p_max",
                "max_iter", "tolerance"):
        v = getattr(args, key, None)
        if v is not None:
            data[key] = v
    return ExperimentConfig.from_mapping(data)


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="abclab", description="Numerical experiments on abelian-by-cyclic torus actions.")
    p.add_argument("--threads", type=int, default=1, help="worker threads for FFT/NUFFT calls")
    p.add_argument("--out", default=None, help="output directory (default from config or ./abclab-out)")
    sub = p.add_subparsers(dest="command", required=True)

    def family(sp, amplitude=None):
        sp.add_argument("--config", help="INI or JSON configuration file")
        sp.add_argument("--action", help="affine action JSON (default: the 2x2 example)")
        sp.add_argument("--amplitude", type=float, default=amplitude)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--grid", type=int)

    v = sub.add_parser("validate", help="certify an affine action file")
    v.add_argument("action")
    v.add_argument("--samples", type=int, default=1000)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--denominator", type=int, default=1000)

    k = sub.add_parser("kam", help="perturb, run the KAM iteration and linearise the Anosov generator")
    family(k)
    k.add_argument("--max-iter", dest="max_iter", type=int)

    f = sub.add_parser("franks", help="Franks conjugacy and fixed-point trace test")
    f.add_argument("--config")
    f.add_argument("--epsilon", type=float)
    f.add_argument("--seed", type=int)
    f.add_argument("--tolerance", type=float)

    kr = sub.add_parser("kronecker", help="best inhomogeneous approximation M p + q ~ y")
    kr.add_argument("--matrix", required=True, help='rows separated by ";", e.g. "0.1,0.2;0.3,0.4"')
    kr.add_argument("--target", required=True)
    kr.add_argument("--n", type=int, default=32)

    s = sub.add_parser("sdc", help="simultaneous Diophantine condition check")
    s.add_argument("--vectors", required=True, help="vectors as rows")
    s.add_argument("--tau", type=float, default=2.5)
    s.add_argument("--n-max", dest="n_max", type=int, default=1000)

    d = sub.add_parser("dimension", help="covering-rate dimension of a set of vectors")
    d.add_argument("--vectors", required=True)
    d.add_argument("--l-max", dest="l_max", type=int, default=64)
    d.add_argument("--grid", type=int, default=64)

    b = sub.add_parser("birkhoff", help="reconstruct the conjugacy from Birkhoff averages")
    family(b)
    b.add_argument("--n-max", dest="n_max", type=int)

    ly = sub.add_parser("lyapunov", help="Lyapunov exponents of every generator")
    family(ly)
    ly.add_argument("--orbit-len", dest="orbit_len", type=int)

    o = sub.add_parser("oscillation", help="oscillation growth of the translation subgroup")
    family(o)
    o.add_argument("--p-max", dest="p_max", type=int)

    de = sub.add_parser("decay", help="Fourier modes of the Franks-conjugated translations")
    family(de)
    de.add_argument("--p-max", dest="p_max", type=int)
    de.add_argument("--modes-up-to", dest="modes_up_to", type=int, default=4)

    sc = sub.add_parser("scenario", help="run a preset")
    sc.add_argument("name")
    sc.add_argument("--config")
    sc.add_argument("--seed", type=int)
    return p


COMMANDS = {
    "kam": _cmd_kam, "franks": _cmd_franks, "kronecker": _cmd_kronecker, "sdc": _cmd_sdc,
    "dimension": _cmd_dimension, "birkhoff": _cmd_birkhoff, "lyapunov": _cmd_lyapunov,
    "oscillation": _cmd_oscillation, "decay": _cmd_decay,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigInvalid("--threads must be positive")
        torus.set_threads(args.threads)
        if args.command == "scenario":
            data = dataclasses.asdict(ExperimentConfig.load(args.config)) if args.config else {}
            data["scenario"] = args.name
            if args.seed is not None:
                data["seed"] = args.seed
            if args.out:
                data["output"] = args.out
            _, summary, _ = run_scenario(ExperimentConfig.from_mapping(data))
            text = to_json(summary)
        elif args.command == "validate":
            text = to_json(_cmd_validate(args))
        else:
            out = Output(args.out or "abclab-out")
            summary = COMMANDS[args.command](args, out)
            text = to_json(summary)
            out.add("summary.json", text)
            out.write()
    except AbcLabError as exc:
        print(f"abclab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
