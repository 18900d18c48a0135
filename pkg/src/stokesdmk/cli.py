"""Benchmark harness: point generators, accuracy/scaling/sweep runs and CSV output.

Random numbers come from numpy's PCG64; a run seeded with ``seed`` spawns
independent child streams (points, strengths, targets) from
``SeedSequence(seed)``, so the same configuration gives the same point sets on
every platform.
"""
from __future__ import annotations

import argparse
import csv
import sys
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import __version__, dmk
from . import oracle as O
from . import split as S
from . import windows as W

GENERATORS = ("uniform", "circle", "sphere", "cluster")
SHELL_RADIUS, SHELL_JITTER = 0.35, 0.05
CLUSTER_RADIUS = 2.0**-5
ORACLE_MAX_N = 50_000
SWEEP_MAX_N = 20_000
COLUMNS = ("kernel", "dim", "mode", "window", "eps", "N", "pass", "seconds", "rel_l2",
           "c", "p", "N1", "N_per", "n_s")
PASSES = ("setup", "tree", "upward", "downward", "evaluate", "residual", "total")
# high-accuracy window for the periodic reference sum
REFERENCE_C = 40.0


@dataclass(frozen=True)
class ExperimentConfig:
    kernel: str = S.STOKESLET
    dim: int = 3
    mode: str = "free"
    window: str = W.PROLATE
    eps: float = 1e-6
    n_sources: int = 5000
    n_targets: int = 0  # 0: targets are the sources
    generator: str = "uniform"
    seed: int = 0
    repetitions: int = 1
    out: str | None = None

    def __post_init__(self):
        if self.n_sources < 1 or self.n_targets < 0:
            raise ValueError("N must be >= 1")
        if self.generator not in GENERATORS:
            raise ValueError(f"unknown generator {self.generator!r}")


def _streams(seed, n=3):
    return [np.random.Generator(np.random.PCG64(s))
            for s in np.random.SeedSequence(seed).spawn(n)]


def generate_points(generator, N, dim, seed=0, rng=None):
    """N points in [-1/2, 1/2]^dim from one of the named distributions."""
    if N < 1:
        raise ValueError("N must be >= 1")
    rng = rng or _streams(seed, 1)[0]
    if generator == "uniform":
        return rng.uniform(-0.5, 0.5, (N, dim))
    if generator in ("circle", "sphere"):
        d = rng.standard_normal((N, dim))
        d /= np.linalg.norm(d, axis=1)[:, None]
        r = SHELL_RADIUS + SHELL_JITTER * rng.uniform(-1.0, 1.0, N)
        return d * r[:, None]
    if generator == "cluster":
        # uniform in a ball of radius 2^-5 touching the corner (-1/2, ..., -1/2)
        d = rng.standard_normal((N, dim))
        d /= np.linalg.norm(d, axis=1)[:, None]
        r = CLUSTER_RADIUS * rng.uniform(0.0, 1.0, N) ** (1.0 / dim)
        return -0.5 + CLUSTER_RADIUS + d * r[:, None]
    raise ValueError(f"unknown generator {generator!r}")


def generate_strengths(kernel, N, dim, rng):
    """f i.i.d. uniform in [-1/2, 1/2]^d (scalar torque for the 2D rotlet); unit n."""
    f = rng.uniform(-0.5, 0.5, (N,) if (kernel == S.ROTLET and dim == 2) else (N, dim))
    n = None
    if kernel == S.STRESSLET:
        n = rng.standard_normal((N, dim))
        n /= np.linalg.norm(n, axis=1)[:, None]
    return f, n


def make_system(cfg, n_sources=None):
    N = n_sources or cfg.n_sources
    rp, rs, rt = _streams(cfg.seed)
    x = generate_points(cfg.generator, N, cfg.dim, rng=rp)
    f, n = generate_strengths(cfg.kernel, N, cfg.dim, rs)
    tgt = generate_points(cfg.generator, cfg.n_targets, cfg.dim, rng=rt) if cfg.n_targets else None
    return O.ParticleSystem(cfg.dim, x, f, n, tgt)


def reference(cfg, sys_):
    if cfg.mode == "free":
        return O.direct_sum(cfg.kernel, sys_)
    sk = S.build_split_kernel(cfg.kernel, cfg.dim, W.build_prolate(REFERENCE_C))
    return O.ewald_reference(sk, sys_, "periodic")


def _row(cfg, plan, N, pas, sec, err):
    return {"kernel": cfg.kernel, "dim": cfg.dim, "mode": cfg.mode, "window": cfg.window,
            "eps": cfg.eps, "N": N, "pass": pas, "seconds": f"{sec:.6f}",
            "rel_l2": "" if err is None else f"{err:.6e}",
            "c": f"{plan.kmax:.6f}", "p": plan.p, "N1": plan.N1, "N_per": plan.N_per,
            "n_s": plan.n_s}


def _timed_rows(cfg, plan, N, res, err):
    tm = dict(res.timings)
    tm["total"] = sum(res.timings.values())
    return [_row(cfg, plan, N, k, tm.get(k, 0.0), err) for k in PASSES]


def run_accuracy(cfg, **overrides):
    """Rows for one DMK evaluation checked against the oracle; returns (rows, passed)."""
    if cfg.n_sources > ORACLE_MAX_N or cfg.n_targets > ORACLE_MAX_N:
        raise ValueError(f"oracle guard: N must be <= {ORACLE_MAX_N}")
    sys_ = make_system(cfg)
    plan = dmk.select_parameters(cfg.kernel, cfg.eps, cfg.window, cfg.dim, cfg.mode, **overrides)
    rows, ok = [], True
    ref = reference(cfg, sys_)
    for _ in range(cfg.repetitions):
        res = dmk.evaluate_detailed(cfg.kernel, sys_, plan=plan)
        err = O.rel_l2(res.u, ref)
        ok &= err <= cfg.eps
        rows += _timed_rows(cfg, plan, cfg.n_sources, res, err)
    return rows, bool(ok)


def run_scaling(cfg, n_list):
    """Per-pass wall times for each N (no reference sum)."""
    n_list = list(n_list)
    if n_list != sorted(n_list):
        raise ValueError("N list must be ascending")
    plan = dmk.select_parameters(cfg.kernel, cfg.eps, cfg.window, cfg.dim, cfg.mode)
    rows = []
    for N in n_list:
        sys_ = make_system(cfg, N)
        best = None
        for _ in range(cfg.repetitions):
            res = dmk.evaluate_detailed(cfg.kernel, sys_, plan=plan)
            if best is None or sum(res.timings.values()) < sum(best.timings.values()):
                best = res
        rows += _timed_rows(cfg, plan, N, best, None)
    return rows


def run_sweep(cfg, n3_values=None, p_values=None):
    """Error surface E(c, p) plus the per-p minimal-error frontier."""
    if cfg.n_sources > SWEEP_MAX_N:
        raise ValueError(f"sweep guard: N must be <= {SWEEP_MAX_N}")
    base = dmk.select_parameters(cfg.kernel, cfg.eps, cfg.window, cfg.dim, cfg.mode)
    n3_values = n3_values or range(max(2, base.n3 - 4), base.n3 + 5)
    p_values = p_values or range(max(2, base.p - 6), base.p + 7, 2)
    sys_ = make_system(cfg)
    ref = reference(cfg, sys_)
    rows, best = [], {}
    for n3 in n3_values:
        for p in p_values:
            plan = dmk.select_parameters(cfg.kernel, cfg.eps, cfg.window, cfg.dim, cfg.mode,
                                         n3=n3, p=p)
            t0 = time.perf_counter()
            u = dmk.evaluate(cfg.kernel, sys_, plan=plan)
            err = O.rel_l2(u, ref)
            rows.append(_row(cfg, plan, cfg.n_sources, "sweep", time.perf_counter() - t0, err))
            if p not in best or err < best[p][0]:
                best[p] = (err, rows[-1])
    for p in sorted(best):
        rows.append(dict(best[p][1], **{"pass": "frontier"}))
    return rows


def header_lines(cfg, extra=None):
    plan = dmk.select_parameters(cfg.kernel, cfg.eps, cfg.window, cfg.dim, cfg.mode)
    info = {"version": __version__, **asdict(cfg), **{f"plan_{k}": v for k, v in
                                                     plan.describe().items()}}
    info.update(extra or {})
    return [f"# {k}={v}" for k, v in info.items()]


def write_csv(rows, header, out=None):
    fh = open(out, "w", encoding="utf-8", newline="") if out else sys.stdout
    try:
        for line in header:
            fh.write(line + "\n")
        w = csv.DictWriter(fh, fieldnames=COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    finally:
        if out:
            fh.close()


def build_parser():
    ap = argparse.ArgumentParser(prog="stokesdmk", description=__doc__.splitlines()[0])
    ap.add_argument("--kernel", choices=S.STOKES_KERNELS, default=S.STOKESLET)
    ap.add_argument("--dim", type=int, choices=(2, 3), default=3)
    ap.add_argument("--mode", choices=dmk.MODES, default="free")
    ap.add_argument("--window", choices=(W.PROLATE, W.GAUSSIAN), default=W.PROLATE)
    ap.add_argument("--eps", type=float, default=1e-6)
    ap.add_argument("--n", type=int, default=5000, help="number of sources")
    ap.add_argument("--targets", type=int, default=0,
                    help="number of extra targets (0: evaluate at the sources)")
    ap.add_argument("--gen", choices=GENERATORS, default="uniform")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--reps", type=int, default=1)
    ap.add_argument("--out", default=None, help="CSV path (default: stdout)")
    g = ap.add_mutually_exclusive_group()
    g.add_argument("--sweep", action="store_true", help="error surface over (c, p)")
    g.add_argument("--scaling", default=None, metavar="N1,N2,...",
                   help="timing run over a comma-separated N list")
    ap.epilog = f"Window coefficient cache directory: ${W.CACHE_ENV}"
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig(args.kernel, args.dim, args.mode, args.window, args.eps,
                               args.n, args.targets, args.gen, args.seed, args.reps, args.out)
        if args.scaling:
            n_list = [int(float(v)) for v in args.scaling.split(",") if v.strip()]
            rows, ok = run_scaling(cfg, n_list), True
        elif args.sweep:
            rows, ok = run_sweep(cfg), True
        else:
            rows, ok = run_accuracy(cfg)
        header = header_lines(cfg, {"status": "pass" if ok else "fail"})
    except (ValueError, NotImplementedError) as e:
        print(f"stokesdmk: error: {e}", file=sys.stderr)
        return 2
    write_csv(rows, header, args.out)
    if args.out:
        print("\n".join(header))
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
