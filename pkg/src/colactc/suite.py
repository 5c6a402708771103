"""Single training runs and named experiment suites driven by RunConfig."""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from colactc.data import read_jsonl, split
from colactc.model.checkpoint import save_checkpoint
from colactc.model.config import ConfigError
from colactc.model.train import evaluate, train
from colactc.runconfig import RunConfig, parse_config, write_resolved

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = ("name", "status", "token_acc", "mle_loss", "ctc_loss", "total_loss",
                   "valid_mle_loss", "wall_s", "params", "error")


def load_datasets(rc: RunConfig):
    if rc.train_path:
        tr = read_jsonl(rc.train_path, rc.v_src, rc.v_tgt)
        va = read_jsonl(rc.valid_path, rc.v_src, rc.v_tgt) if rc.valid_path else []
        return tr, va
    return split(rc.task_spec(), rc.n_train, rc.n_valid)


def run_training(rc: RunConfig, datasets=None) -> dict:
    """Train one configuration; writes metrics.jsonl, model.ckpt and summary.json under ``rc.out``."""
    out = Path(rc.out)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(rc)
    tr, va = datasets if datasets is not None else load_datasets(rc)
    cfg = rc.train_config()
    res = train(cfg, tr, rc.mapper(), rc.label_source, valid=va, metrics_path=out / "metrics.jsonl",
                deterministic=rc.deterministic, eval_every=rc.eval_every)
    ev = evaluate(res.params, cfg, va) if va else {"token_acc": None, "mle_loss": None, "n_tokens": 0}
    save_checkpoint(out / "model.ckpt", res.params, cfg, extra={"label_source": rc.label_source,
                                                               "mapping": rc.mapping})
    last = res.metrics[-1] if res.metrics else {}
    summary = {
        "token_acc": ev["token_acc"],
        "valid_mle_loss": ev["mle_loss"],
        "mle_loss": last.get("mle_loss"),
        "ctc_loss": last.get("ctc_loss"),
        "total_loss": last.get("total_loss"),
        "skipped_infeasible": res.skipped_infeasible,
        "wall_s": res.wall_s,
        "params": res.n_params,
        "evals": res.evals,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return summary


def load_suite(path) -> tuple[dict, list[dict]]:
    """Suite file: ``{"base": {...}, "runs": [{"name": ..., <overrides>}, ...]}``."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"suite: {path} is not valid JSON ({e.msg})") from None
    if isinstance(data, list):
        data = {"runs": data}
    base = data.get("base", {})
    runs = data.get("runs")
    if not isinstance(runs, list) or not runs:
        raise ConfigError("runs: suite must list at least one run")
    names = []
    for i, r in enumerate(runs):
        if "name" not in r:
            raise ConfigError(f"runs[{i}]: missing name")
        names.append(r["name"])
    dup = sorted({n for n in names if names.count(n) > 1})
    if dup:
        raise ConfigError(f"runs: duplicate run names {', '.join(dup)}")
    return base, runs


def _run_one(name: str, overrides: dict) -> dict:
    t0 = time.perf_counter()
    try:
        rc = parse_config(overrides=overrides, echo=False)
        s = run_training(rc)
        return {"name": name, "status": "ok", **{k: s[k] for k in SUMMARY_COLUMNS if k in s}, "error": ""}
    except Exception as e:  # a failed run is recorded and the suite moves on
        log.warning("run %s failed: %s", name, e)
        return {"name": name, "status": "failed", "wall_s": time.perf_counter() - t0,
                "error": f"{type(e).__name__}: {e}"}


def run_experiment_suite(path, out=None, parallel: int = 1) -> list[dict]:
    """Run every named configuration and write ``summary.csv``.

    Runs are sequential unless ``parallel > 1`` (do not use for timing).
    """
    base, runs = load_suite(path)
    root = Path(out or base.get("out", "runs/suite"))
    jobs = []
    for r in runs:
        ov = {**base, **{k: v for k, v in r.items() if k != "name"}}
        ov["out"] = str(root / r["name"])
        jobs.append((r["name"], ov))
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as ex:
            rows = list(ex.map(_run_one, *zip(*jobs)))
    else:
        rows = [_run_one(n, ov) for n, ov in jobs]
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if row.get(k) is None else row.get(k, "")) for k in SUMMARY_COLUMNS})
    return rows

