"""Command-line front end: ``crw2d {pnc,density,rhoN,oned,ode,merge,verify}``.

Every run writes a CSV series and a JSON manifest next to it. The manifest
echoes the full config, so ``--config run.manifest.json`` repeats a run.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import re
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import finite_system as fs
from . import infinite_system as inf
from . import oned_exact as od
from . import rate_equations as rq
from .series import EstimateSeries, geometric_grid, merge_all, read_csv

COMMANDS = ("pnc", "density", "rhoN", "oned", "ode", "verify")
_PAIR = re.compile(r"^\(\s*(-?\d+)\s*,\s*(-?\d+)\s*\)$")


def parse_sites(text: str) -> list:
    """``"(0,0);(1,0)"`` -> ``[[0, 0], [1, 0]]``; ``"0;1.5;3"`` -> ``[0.0, 1.5, 3.0]``."""
    items = [s.strip() for s in text.split(";") if s.strip()]
    if not items:
        raise ValueError("empty site list")
    out = []
    for s in items:
        m = _PAIR.match(s)
        if m:
            out.append([int(m.group(1)), int(m.group(2))])
        else:
            try:
                out.append(float(s))
            except ValueError:
                raise ValueError(f"cannot parse site {s!r}") from None
    return out


def parse_t_grid(text: str) -> list:
    parts = text.split(":")
    if len(parts) != 3:
        raise ValueError("time grid must look like tmin:tmax:points")
    return [float(parts[0]), float(parts[1]), int(parts[2])]


@dataclass
class ExperimentConfig:
    command: str
    master_seed: int = 0
    replicas: int = 1000
    L: int = 256
    t_grid: list = field(default_factory=lambda: [1.0, 100.0, 8])
    mode: str = "coalesce"
    init: str = "full"
    starts: list = field(default_factory=lambda: [[0, 0], [1, 0]])
    offsets: list = field(default_factory=lambda: [[0, 0], [1, 0]])
    symmetrize: bool = False
    kind: str = "rho1_ere"
    t0: float = 100.0
    y0: float | None = None
    N: int = 2
    r0: float = 1.0
    output_path: str = ""
    level: str = "fast"

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValueError(f"unknown command {self.command!r}")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        if self.replicas < 1:
            raise ValueError("replicas must be >= 1")
        t_min, t_max, pts = self.t_grid
        if not (0 < t_min < t_max) or int(pts) < 2:
            raise ValueError("t_grid needs 0 < t_min < t_max and points >= 2")
        self.t_grid = [float(t_min), float(t_max), int(pts)]

    def times(self) -> np.ndarray:
        return geometric_grid(*self.t_grid)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    def output(self) -> Path:
        return Path(self.output_path or f"{self.command}.csv")


@dataclass
class RunManifest:
    config: dict
    version: str
    wall_time: float
    outputs: list
    warnings: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        return cls(**json.loads(text))

    def experiment_config(self) -> ExperimentConfig:
        return ExperimentConfig.from_dict(self.config)


def manifest_path(csv_path: Path) -> Path:
    return csv_path.with_suffix(".manifest.json")


def _run(cfg: ExperimentConfig, threads):
    """Return ``(named CSV texts, warnings)`` for one config."""
    times = cfg.times()
    if cfg.command == "pnc":
        s = fs.estimate_pnc_mc([tuple(p) for p in cfg.starts], times, cfg.replicas, cfg.master_seed, threads)
        return {"": s.to_csv()}, s.warnings
    if cfg.command in ("density", "rhoN"):
        # sample the initial configuration too, so the first row is t = 0
        grid = np.concatenate(([0.0], times))
        if cfg.command == "density":
            s = inf.estimate_rho1(cfg.L, grid, cfg.replicas, cfg.mode, cfg.init, cfg.master_seed, threads=threads)
        else:
            spec = inf.CorrelationSpec(tuple(tuple(o) for o in cfg.offsets))
            s = inf.estimate_rhoN(
                cfg.L, spec, grid, cfg.replicas, cfg.mode, cfg.init, cfg.master_seed, cfg.symmetrize, threads=threads
            )
        return {"": inf.series_csv(s)}, s.warnings
    if cfg.command == "oned":
        xs = [float(x) for x in cfg.starts]
        exact = EstimateSeries.exact(times, [od.pnc_pfaffian_1d(xs, t) for t in times])
        mc = od.brownian_pnc_mc(xs, times, cfg.replicas, cfg.master_seed, threads=threads)
        return {"": exact.to_csv(), ".mc": mc.to_csv()}, []
    if cfg.command == "ode":
        t_max = cfg.t_grid[1]
        y0 = cfg.y0
        if y0 is None:
            y0 = 1.0 if cfg.kind in ("pnc_ere", "meanfield", "zero") else math.log(cfg.t0) / (math.pi * cfg.t0)
        grid = times[times >= cfg.t0]
        spec = rq.OdeSpec(cfg.t0, y0, cfg.kind, t_max, N=cfg.N, r0=cfg.r0, times=grid)
        return {"": rq.solve_ode(spec).to_csv()}, []
    raise ValueError(f"command {cfg.command!r} produces no series")


def run_experiment(cfg: ExperimentConfig, threads: int | None = None) -> RunManifest:
    """Dispatch one config, write its CSV(s) and manifest, and return the manifest."""
    t0 = time.perf_counter()
    texts, warns = _run(cfg, threads)
    base = cfg.output()
    base.parent.mkdir(parents=True, exist_ok=True)
    outputs = []
    for suffix, text in texts.items():
        path = base.with_name(base.stem + suffix + base.suffix) if suffix else base
        path.write_text(text)
        outputs.append(str(path))
    man = RunManifest(cfg.to_dict(), __version__, time.perf_counter() - t0, outputs, list(warns))
    mpath = manifest_path(base)
    mpath.write_text(man.to_json() + "\n")
    return man


def determinism_configs() -> list:
    """Small configs, one per series-producing subcommand."""
    return [
        ExperimentConfig("pnc", master_seed=7, replicas=20000, t_grid=[10.0, 1000.0, 6], starts=[[0, 0], [1, 0], [3, 1]]),
        ExperimentConfig("density", master_seed=1, replicas=6, L=64, t_grid=[1.0, 50.0, 5]),
        ExperimentConfig("density", master_seed=2, replicas=6, L=64, t_grid=[1.0, 50.0, 5], mode="annihilate", init="bernoulli_half"),
        ExperimentConfig("rhoN", master_seed=3, replicas=6, L=64, t_grid=[1.0, 50.0, 5], symmetrize=True),
        ExperimentConfig("oned", master_seed=4, replicas=20000, t_grid=[0.1, 2.0, 4], starts=[0.0, 1.0, 2.0, 3.0]),
        ExperimentConfig("ode", t_grid=[100.0, 1e6, 6], kind="rho1_ere", t0=100.0),
    ]


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crw2d", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seeds=True):
        sp.add_argument("--config", help="JSON config or manifest; explicit flags override it")
        sp.add_argument("--t", dest="t_grid", type=parse_t_grid, help="geometric grid tmin:tmax:points")
        sp.add_argument("--output", dest="output_path", help="CSV path (manifest goes next to it)")
        sp.add_argument("--threads", type=int, help="worker threads (default: $CRW2D_THREADS or 1)")
        if seeds:
            sp.add_argument("--seed", dest="master_seed", type=int)
            sp.add_argument("--replicas", type=int)

    sp = sub.add_parser("pnc", help="Monte Carlo non-collision probability of N walkers")
    common(sp)
    sp.add_argument("--starts", type=parse_sites, help='e.g. "(0,0);(1,0)"')

    for name, helptext in (("density", "particle density on the torus"), ("rhoN", "multi-point occupation correlation")):
        sp = sub.add_parser(name, help=helptext)
        common(sp)
        sp.add_argument("--L", type=int)
        sp.add_argument("--mode", choices=inf.MODES)
        sp.add_argument("--init", choices=inf.INITS)
        if name == "rhoN":
            sp.add_argument("--offsets", type=parse_sites, help='e.g. "(0,0);(1,0)"')
            sp.add_argument("--symmetrize", action="store_true", default=None)

    sp = sub.add_parser("oned", help="1D Brownian non-collision: exact Pfaffian plus Monte Carlo")
    common(sp)
    sp.add_argument("--starts", type=parse_sites, help='increasing reals, e.g. "0;1;2;3"')

    sp = sub.add_parser("ode", help="integrate a rate equation")
    common(sp, seeds=False)
    sp.add_argument("--kind", choices=rq.RHS_KINDS)
    sp.add_argument("--t0", type=float)
    sp.add_argument("--y0", type=float)
    sp.add_argument("--N", type=int)
    sp.add_argument("--r0", type=float)

    sp = sub.add_parser("merge", help="pool CSV series on the same time grid")
    sp.add_argument("inputs", nargs="+")
    sp.add_argument("--output", dest="output_path")

    sp = sub.add_parser("verify", help="run the acceptance suite")
    sp.add_argument("--level", choices=("fast", "full"), default="fast")
    sp.add_argument("--threads", type=int)
    sp.add_argument("--only", type=int, action="append", help="criterion id (repeatable)")
    return p


def config_from_args(args) -> ExperimentConfig:
    base = {}
    if getattr(args, "config", None):
        data = json.loads(Path(args.config).read_text())
        base = data.get("config", data)
        if base.get("command", args.command) != args.command:
            raise ValueError(f"config is for command {base['command']!r}, not {args.command!r}")
    fields = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for k, v in vars(args).items():
        if k in fields and v is not None:
            base[k] = v
    base["command"] = args.command
    return ExperimentConfig.from_dict(base)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            from .verify import CRITERIA, run_criterion

            ids = args.only or list(CRITERIA)
            failed = 0
            for cid in ids:
                r = run_criterion(cid, args.level, args.threads)
                print(r.line(), flush=True)
                failed += not r.passed
            print(f"{len(ids) - failed}/{len(ids)} criteria passed")
            return 1 if failed else 0
        if args.command == "merge":
            parts = [read_csv(p) for p in args.inputs]
            text = merge_all(parts).to_csv(args.output_path)
            if not args.output_path:
                sys.stdout.write(text)
            return 0
        cfg = config_from_args(args)
        man = run_experiment(cfg, args.threads)
    except (ValueError, KeyError, OSError) as exc:
        print(f"crw2d: error: {exc}", file=sys.stderr)
        return 2
    for w in man.warnings:
        print(f"warning: {w}", file=sys.stderr)
    for path in man.outputs:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
