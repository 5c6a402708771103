"""Per-step training-time harness over (V, L) grids.

Each grid point trains the desk model on one fixed synthetic batch with CTC
labels taken from the translation (genuine when ``L == V``, Modulo otherwise)
and records wall-clock time per optimizer step plus a per-component
breakdown.  Percentiles pool every timed step across repetitions.  All
compute runs with BLAS pinned to one thread.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from colactc.colamap import CoarseMapper
from colactc.model.config import TrainConfig
from colactc.model.network import Timers, count_params, forward_backward, init_params
from colactc.model.optim import Adam, inverse_sqrt_lr
from colactc.prng import Rng

COMPONENTS = ("encode", "decode", "mle_head", "ctc_head+loss", "backward", "optimizer")
CSV_COLUMNS = ("V", "L", "d", "T", "batch", "component", "median_ms", "p10_ms", "p90_ms",
               "speedup", "params")


class BenchError(ValueError):
    pass


@dataclass(frozen=True)
class GridPoint:
    V: int
    L: int
    d: int = 64
    T: int = 50
    batch: int = 16
    tgt_len: int = 15
    lam: float = 0.3
    n_enc: int = 2
    n_dec: int = 2
    ffn_dim: int = 256
    f_dim: int = 16
    k_concat: int = 3
    seed: int = 0

    def config(self) -> TrainConfig:
        return TrainConfig(
            lam=self.lam, label_size=self.L, v_src=self.V, v_tgt=self.V, f_dim=self.f_dim,
            d=self.d, n_enc=self.n_enc, n_dec=self.n_dec, n_heads=4 if self.d % 4 == 0 else 1,
            ffn_dim=self.ffn_dim, k_concat=self.k_concat, seed=self.seed,
        )


@dataclass
class BenchResult:
    point: GridPoint
    median_step_ms: float
    p10_ms: float
    p90_ms: float
    components: dict[str, tuple[float, float, float]] = field(default_factory=dict)
    n_params: int = 0
    steps: int = 0
    reps: int = 0

    def to_dict(self) -> dict:
        return {
            **asdict(self.point),
            "median_step_ms": self.median_step_ms,
            "p10_ms": self.p10_ms,
            "p90_ms": self.p90_ms,
            "components": {k: list(v) for k, v in self.components.items()},
            "n_params": self.n_params,
            "steps": self.steps,
            "reps": self.reps,
        }


def synthetic_batch(point: GridPoint):
    """Fixed frames, target ids and coarse CTC labels for a grid point."""
    r = Rng(point.seed).fork("bench")
    F = point.T * point.k_concat
    frames = r.normal((point.batch, F, point.f_dim)).astype(np.float32)
    tgt = r.randint(point.V, size=(point.batch, point.tgt_len)).tolist()
    kind = "identity" if point.L == point.V else "mod"
    mapper = CoarseMapper(kind, point.V, point.L)
    labels = [mapper.map_sequence(y) for y in tgt]
    return frames, np.full(point.batch, F), tgt, labels


def _pct(xs) -> tuple[float, float, float]:
    a = np.asarray(xs, dtype=np.float64)
    return float(np.median(a)), float(np.percentile(a, 10)), float(np.percentile(a, 90))


def bench_step(point: GridPoint, steps: int = 50, reps: int = 3, warmup: int = 10) -> BenchResult:
    """Time ``reps`` runs of ``steps`` optimizer steps after ``warmup`` untimed ones."""
    from threadpoolctl import threadpool_limits

    if point.L > point.V:
        raise BenchError(f"L={point.L} exceeds V={point.V}")
    cfg = point.config()
    frames, flens, tgt, labels = synthetic_batch(point)
    totals: list[float] = []
    comps: dict[str, list[float]] = {c: [] for c in COMPONENTS}
    with threadpool_limits(limits=1):
        params = init_params(cfg)
        n_params = count_params(params)
        opt = Adam(params, cfg.adam_b1, cfg.adam_b2, cfg.adam_eps)
        rng = Rng(point.seed).fork("dropout")
        for rep in range(reps):
            for i in range(warmup + steps if rep == 0 else steps):
                timers = Timers()
                t0 = time.perf_counter()
                res = forward_backward(params, cfg, frames, flens, tgt, labels if cfg.lam > 0 else None,
                                       rng=rng, timers=timers)
                with timers.section("optimizer"):
                    opt.step(params, res.grads, inverse_sqrt_lr(opt.t + 1, cfg.lr, cfg.warmup_steps))
                total = (time.perf_counter() - t0) * 1e3
                if rep == 0 and i < warmup:
                    continue
                totals.append(total)
                for c in COMPONENTS:
                    comps[c].append(timers.ms.get(c, 0.0))
    med, p10, p90 = _pct(totals)
    return BenchResult(
        point=point,
        median_step_ms=med,
        p10_ms=p10,
        p90_ms=p90,
        components={c: _pct(v) for c, v in comps.items()},
        n_params=n_params,
        steps=steps,
        reps=reps,
    )


def _key(p: GridPoint):
    return (p.V, p.d, p.T, p.batch, p.tgt_len, p.lam)


def speedups(results: list[BenchResult]) -> dict[tuple[int, int], float]:
    """speedup(V, L) = median step time at L == V / median step time at L."""
    base = {_key(r.point): r for r in results if r.point.L == r.point.V}
    out = {}
    for r in results:
        b = base.get(_key(r.point))
        if b is None:
            raise BenchError(f"no genuine-label (L == V) baseline for V={r.point.V}")
        out[(r.point.V, r.point.L)] = b.median_step_ms / r.median_step_ms
    return out


def speedup_table(results: list[BenchResult]) -> str:
    """CSV with a ``total`` row (carrying the speedup) and one row per component."""
    sp = speedups(results)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in sorted(results, key=lambda r: (r.point.V, r.point.L)):
        p = r.point
        head = (p.V, p.L, p.d, p.T, p.batch)
        w.writerow(head + ("total", f"{r.median_step_ms:.4f}", f"{r.p10_ms:.4f}", f"{r.p90_ms:.4f}",
                           f"{sp[(p.V, p.L)]:.2f}", r.n_params))
        for c in COMPONENTS:
            med, lo, hi = r.components[c]
            w.writerow(head + (c, f"{med:.4f}", f"{lo:.4f}", f"{hi:.4f}", "", ""))
    return buf.getvalue()


def speedup_tsv(results: list[BenchResult]) -> str:
    """Gnuplot-ready ``V L speedup median_ms`` rows."""
    sp = speedups(results)
    lines = ["# V\tL\tspeedup\tmedian_ms"]
    for r in sorted(results, key=lambda r: (r.point.L, r.point.V)):
        lines.append(f"{r.point.V}\t{r.point.L}\t{sp[(r.point.V, r.point.L)]:.4f}\t{r.median_step_ms:.4f}")
    return "\n".join(lines) + "\n"


def affine_fit(xs, ys) -> tuple[float, float, float]:
    """Least-squares ``y = a + b x``; returns ``(a, b, r_squared)``."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    A = np.stack([np.ones_like(x), x], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return float(coef[0]), float(coef[1]), r2


def default_grid(d: int = 64, T: int = 50, batch: int = 16) -> list[GridPoint]:
    """L sweep at V=16384 plus genuine/coarse pairs for V in {1024, 4096, 16384}."""
    pts = [GridPoint(V=16384, L=L, d=d, T=T, batch=batch) for L in (256, 1024, 4096, 16384)]
    for V in (1024, 4096):
        pts += [GridPoint(V=V, L=256, d=d, T=T, batch=batch), GridPoint(V=V, L=V, d=d, T=T, batch=batch)]
    return pts


def run_grid(points, steps: int = 50, reps: int = 3, warmup: int = 10, progress=None) -> list[BenchResult]:
    out = []
    for p in points:
        r = bench_step(p, steps=steps, reps=reps, warmup=warmup)
        if progress:
            progress(r)
        out.append(r)
    return out
