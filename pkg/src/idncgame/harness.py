"""Monte Carlo experiment runner.

For every sweep point and iteration a fresh pair of erasure matrices is drawn
around the configured means, one initial broadcast phase is simulated, and
every requested scheme recovers from that same initial state. Results are
averaged per (scheme, sweep point) and written as CSV with a ``#`` metadata
header.
"""
from __future__ import annotations

import argparse
import csv
import io
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import __version__
from .coding import Metric
from .core_model import GameConfig, initial_phase
from .learning import SCHEMES, run_episode

SWEEPS = ("M", "ratio")


@dataclass
class ExperimentSpec:
    schemes: list
    metric: Metric = Metric.SDD
    sweep: str = "M"
    grid: list = field(default_factory=lambda: [20])
    M: int = 20
    N: int = 15
    P: float = 0.1
    Q: float = 0.2
    iterations: int = 100
    seed: int = 0
    V: int = 2
    epsilon: float = 0.5
    max_stages: int | None = None
    exhaustive_limit: int = 8
    feedback_loss: float | None = None
    band: float = 0.05
    workers: int = 1

    def __post_init__(self):
        self.metric = Metric(self.metric)
        self.schemes = list(self.schemes)
        self.grid = list(self.grid)
        if not self.schemes:
            raise ValueError("no scheme requested")
        for s in self.schemes:
            if s not in SCHEMES:
                raise ValueError(f"unknown scheme {s!r}; expected one of {SCHEMES}")
        if self.sweep not in SWEEPS:
            raise ValueError(f"sweep must be one of {SWEEPS}")
        if not self.grid:
            raise ValueError("the sweep grid is empty")
        if self.iterations < 1:
            raise ValueError("need at least one iteration per point")
        if self.sweep == "M" and any(int(m) != m or m < 1 for m in self.grid):
            raise ValueError("player counts must be positive integers")
        if self.band < 0:
            raise ValueError("erasure band must be non-negative")

    def point(self, value) -> tuple[int, float, float]:
        """(M, mean P, mean Q) at one sweep point."""
        if self.sweep == "M":
            return int(value), self.P, self.Q
        return self.M, float(value) * self.Q, self.Q


@dataclass
class ResultRow:
    scheme: str
    sweep_value: float
    mean_completion_time: float
    mean_max_delay: float
    mean_sum_delay: float
    mean_collisions: float
    episodes: int
    cutoffs: int


def banded(rng: np.random.Generator, mean: float, size, band: float) -> np.ndarray:
    """Uniform draws on [max(0, mean - band), min(0.95, mean + band)]."""
    lo, hi = max(0.0, mean - band), min(0.95, mean + band)
    return rng.uniform(lo, hi, size=size)


def _iteration(spec: ExperimentSpec, point_index: int, value, it: int) -> list:
    M, p_mean, q_mean = spec.point(value)
    ss = np.random.SeedSequence(spec.seed, spawn_key=(point_index, it))
    rng = np.random.default_rng(ss)
    P = banded(rng, p_mean, (M, M), spec.band)
    np.fill_diagonal(P, 0.0)
    Q = banded(rng, q_mean, M, spec.band)
    S0 = initial_phase(Q, spec.N, rng)
    episode_seed = int(ss.generate_state(1)[0])
    cfg = GameConfig(M, spec.N, P, Q, V=spec.V, epsilon=spec.epsilon, max_stages=spec.max_stages,
                     seed=episode_seed, feedback_loss=spec.feedback_loss, exhaustive_limit=spec.exhaustive_limit)
    out = []
    for scheme in spec.schemes:
        tr = run_episode(scheme, cfg, spec.metric, S0)
        out.append((tr.T, tr.max_delay, tr.sum_delay, tr.collision_count, int(tr.cutoff),
                    tr.exhaustive_calls, tr.greedy_calls))
    return out


def _iteration_task(args):
    return _iteration(*args)


def run_experiment(spec: ExperimentSpec, stats: dict | None = None) -> list[ResultRow]:
    """Average every scheme over ``spec.iterations`` episodes per sweep point.

    ``stats`` (optional) receives selector usage counts for the metadata header.
    """
    tasks = [(spec, p, v, it) for p, v in enumerate(spec.grid) for it in range(spec.iterations)]
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            results = list(pool.map(_iteration_task, tasks, chunksize=max(1, len(tasks) // (4 * spec.workers))))
    else:
        results = [_iteration_task(t) for t in tasks]
    rows = []
    exhaustive = greedy = 0
    for p, value in enumerate(spec.grid):
        block = results[p * spec.iterations:(p + 1) * spec.iterations]
        for s, scheme in enumerate(spec.schemes):
            vals = np.array([r[s] for r in block], dtype=float)
            exhaustive += int(vals[:, 5].sum())
            greedy += int(vals[:, 6].sum())
            rows.append(ResultRow(
                scheme=scheme,
                sweep_value=float(value),
                mean_completion_time=float(vals[:, 0].mean()),
                mean_max_delay=float(vals[:, 1].mean()),
                mean_sum_delay=float(vals[:, 2].mean()),
                mean_collisions=float(vals[:, 3].mean()),
                episodes=len(block),
                cutoffs=int(vals[:, 4].sum()),
            ))
    if stats is not None:
        stats["exhaustive_selections"] = exhaustive
        stats["greedy_selections"] = greedy
    return rows


COLUMNS = [f.name for f in fields(ResultRow)]


def _fmt(x) -> str:
    if isinstance(x, float):
        return format(x, ".6g")
    return str(x)


def metadata(spec: ExperimentSpec, stats: dict | None = None) -> dict:
    meta = {"version": __version__}
    for k, v in asdict(spec).items():
        if isinstance(v, Metric):
            v = v.value
        if isinstance(v, list):
            v = ",".join(_fmt(x) for x in v)
        meta[k] = v
    meta["max_stages"] = spec.max_stages if spec.max_stages is not None else f"50*N={50 * spec.N}"
    meta["erasure_draw"] = f"uniform on [max(0, mean-{spec.band}), min(0.95, mean+{spec.band})] per iteration"
    meta["completion_time"] = "number of recovery stages until every player holds every packet"
    meta.update(stats or {})
    return meta


def format_csv(rows: list[ResultRow], meta: dict | None = None) -> str:
    if not rows:
        raise ValueError("refusing to write an empty result table")
    buf = io.StringIO()
    for k, v in (meta or {}).items():
        buf.write(f"# {k}: {v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([_fmt(getattr(r, c)) for c in COLUMNS])
    return buf.getvalue()


def emit_csv(rows: list[ResultRow], path, meta: dict | None = None) -> None:
    text = format_csv(rows, meta)
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc


def parse_csv(text: str) -> list[ResultRow]:
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    out = []
    for rec in reader:
        out.append(ResultRow(
            scheme=rec["scheme"],
            sweep_value=float(rec["sweep_value"]),
            mean_completion_time=float(rec["mean_completion_time"]),
            mean_max_delay=float(rec["mean_max_delay"]),
            mean_sum_delay=float(rec["mean_sum_delay"]),
            mean_collisions=float(rec["mean_collisions"]),
            episodes=int(rec["episodes"]),
            cutoffs=int(rec["cutoffs"]),
        ))
    return out


def read_csv(path) -> list[ResultRow]:
    with open(path, newline="") as fh:
        return parse_csv(fh.read())


def _floats(s: str) -> list:
    return [float(x) for x in s.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="idncgame", description="Cooperative recovery experiments.")
    p.add_argument("--scheme", default="OPT-PMP,OPT-CDE", help=f"comma-separated subset of {','.join(SCHEMES)}")
    p.add_argument("--metric", default="SDD", choices=[m.value for m in Metric])
    p.add_argument("--sweep", default="M", choices=SWEEPS)
    p.add_argument("--grid", default="20", help="comma-separated sweep values (player counts or P/Q ratios)")
    p.add_argument("--M", type=int, default=20, help="players (ratio sweep)")
    p.add_argument("--N", type=int, default=15, help="packets")
    p.add_argument("--P", type=float, default=0.1, help="mean player-to-player erasure (M sweep)")
    p.add_argument("--Q", type=float, default=0.2, help="mean base-station erasure")
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--V", type=int, default=2, help="back-off stages after a collision")
    p.add_argument("--epsilon", type=float, default=0.5, help="satisfaction offset of the learners")
    p.add_argument("--max-stages", type=int, default=None, help="stage cutoff (default 50*N)")
    p.add_argument("--exhaustive-limit", type=int, default=8,
                   help="largest Has set searched exhaustively by the OPT schemes")
    p.add_argument("--feedback-loss", type=float, default=None,
                   help="constant ACK loss for LS schemes (default: the forward link's erasure)")
    p.add_argument("--band", type=float, default=0.05, help="half-width of the per-iteration erasure draw")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="-", help="CSV path, '-' for stdout")
    return p


def spec_from_args(ns) -> ExperimentSpec:
    return ExperimentSpec(
        schemes=[s.strip() for s in ns.scheme.split(",") if s.strip()],
        metric=ns.metric, sweep=ns.sweep, grid=_floats(ns.grid), M=ns.M, N=ns.N, P=ns.P, Q=ns.Q,
        iterations=ns.iters, seed=ns.seed, V=ns.V, epsilon=ns.epsilon, max_stages=ns.max_stages,
        exhaustive_limit=ns.exhaustive_limit, feedback_loss=ns.feedback_loss, band=ns.band, workers=ns.workers,
    )


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        spec = spec_from_args(ns)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    stats = {}
    rows = run_experiment(spec, stats)
    meta = metadata(spec, stats)
    if ns.out == "-":
        sys.stdout.write(format_csv(rows, meta))
    else:
        emit_csv(rows, ns.out, meta)
    return 0
