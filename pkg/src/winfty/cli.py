"""Command line driver: ``winfty run <config> [--out DIR] [--levels K] [--mode cascade|converge]``.

Config files hold flat ``key = value`` lines; ``#`` starts a comment.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .descent import DescentConfig, cascade
from .directionsolve import AdmmParams
from .femcore import SolverError
from .meshkit import AdmissibilityError, MeshError, read_mesh, write_mesh
from .problemdefs import EXPERIMENTS

logger = logging.getLogger("winfty")


class ConfigError(ValueError):
    def __init__(self, key: str | None, message: str):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


@dataclass
class RunConfig:
    experiment: str
    mesh_n: int | None = None
    mesh_file: Path | None = None
    mesh_n_radial: int | None = None
    levels: int = 4
    mode: str = "cascade"
    gamma: float = 1e-4
    t_min_exp: int = 11
    max_steps: int = 15
    max_converge_steps: int = 1000
    admm: AdmmParams = field(default_factory=AdmmParams)
    out: Path = Path("out")
    seed: int = 0

    def descent_config(self) -> DescentConfig:
        return DescentConfig(gamma=self.gamma, t_min_exp=self.t_min_exp, max_steps=self.max_steps,
                             levels=self.levels, mode=self.mode, max_converge_steps=self.max_converge_steps,
                             admm=self.admm)


def _positive_int(v):
    n = int(v)
    if n < 1:
        raise ValueError("must be a positive integer")
    return n


def _positive_float(v):
    x = float(v)
    if not x > 0:
        raise ValueError("must be positive")
    return x


def _gamma(v):
    x = float(v)
    if not 0 < x < 1:
        raise ValueError("must lie in (0, 1)")
    return x


def _mode(v):
    if v not in ("cascade", "converge"):
        raise ValueError("must be 'cascade' or 'converge'")
    return v


def _experiment(v):
    if v not in EXPERIMENTS:
        raise ValueError(f"must be one of {', '.join(EXPERIMENTS)}")
    return v


KEYS = {
    "experiment": ("experiment", _experiment),
    "mesh.n": ("mesh_n", _positive_int),
    "mesh.n_radial": ("mesh_n_radial", _positive_int),
    "mesh.file": ("mesh_file", Path),
    "levels": ("levels", _positive_int),
    "mode": ("mode", _mode),
    "gamma": ("gamma", _gamma),
    "t_min_exp": ("t_min_exp", _positive_int),
    "max_steps": ("max_steps", _positive_int),
    "max_converge_steps": ("max_converge_steps", _positive_int),
    "admm.tau0": ("tau0", _positive_float),
    "admm.tol": ("tol", _positive_float),
    "admm.max_iter": ("max_iter", _positive_int),
    "out": ("out", Path),
    "seed": ("seed", int),
}


def parse_config_text(text: str, base: Path | None = None) -> RunConfig:
    values: dict = {}
    admm: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(None, f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(key, "unknown key")
        name, conv = KEYS[key]
        try:
            parsed = conv(value)
        except ValueError as exc:
            raise ConfigError(key, f"invalid value {value!r} ({exc})") from None
        (admm if key.startswith("admm.") else values)[name] = parsed
    if "experiment" not in values:
        raise ConfigError("experiment", "missing required key")
    if "mesh_file" in values:
        path = values["mesh_file"]
        if base is not None and not path.is_absolute():
            path = base / path
        if not path.exists():
            raise ConfigError("mesh.file", f"file {path} does not exist")
        values["mesh_file"] = path
    return RunConfig(admm=AdmmParams(**admm), **values)


def parse_config(path) -> RunConfig:
    path = Path(path)
    return parse_config_text(path.read_text(), base=path.parent)


def build_experiment(cfg: RunConfig):
    factory = EXPERIMENTS[cfg.experiment]
    kwargs = {}
    if cfg.mesh_n is not None:
        kwargs["n_angular" if cfg.experiment == "exp2" else "n"] = cfg.mesh_n
    if cfg.mesh_n_radial is not None:
        if cfg.experiment != "exp2":
            raise ConfigError("mesh.n_radial", "only used by the annulus experiment")
        kwargs["n_radial"] = cfg.mesh_n_radial
    return factory(**kwargs)


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _check_writable(out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=out, prefix=".probe.")
    os.close(fd)
    os.unlink(tmp)


def run(cfg: RunConfig) -> int:
    try:
        _check_writable(cfg.out)
    except OSError as exc:
        logger.error("output directory %s is not writable: %s", cfg.out, exc)
        return 3
    try:
        exp = build_experiment(cfg)
        mesh = read_mesh(cfg.mesh_file) if cfg.mesh_file is not None else exp.mesh.build()
    except (ConfigError, MeshError) as exc:
        logger.error("bad input: %s", exc)
        return 2
    try:
        result = cascade(cfg.descent_config(), exp.problem, mesh, exp.target, exp.m0, exp.mu_schedule)
    except (SolverError, AdmissibilityError) as exc:
        logger.error("run failed: %s", exc)
        return 1
    history = result.history
    try:
        _atomic_write(cfg.out / "history.csv", history.to_csv())
        if cfg.mode == "converge":
            _atomic_write(cfg.out / "table.csv", history.table.to_csv())
        for level, (m, phi) in enumerate(zip(result.meshes, result.final_phis)):
            tmp = cfg.out / f".level{level}.mesh.tmp"
            write_mesh(m, tmp, points=phi)
            os.replace(tmp, cfg.out / f"level{level}.mesh")
    except OSError as exc:
        logger.error("writing results failed: %s", exc)
        return 3
    return 0


def _apply_thread_cap():
    cap = os.environ.get("WINFTY_THREADS")
    if not cap:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(cap))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="winfty", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a shape optimisation experiment")
    p_run.add_argument("config")
    p_run.add_argument("--out")
    p_run.add_argument("--levels", type=int)
    p_run.add_argument("--mode", choices=["cascade", "converge"])
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config)
        if args.out:
            cfg.out = Path(args.out)
        if args.levels is not None:
            if args.levels < 1:
                raise ConfigError("levels", "must be a positive integer")
            cfg.levels = args.levels
        if args.mode:
            cfg.mode = args.mode
    except (OSError, ConfigError, MeshError) as exc:
        print(f"winfty: {exc}", file=sys.stderr)
        return 2
    _apply_thread_cap()
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
