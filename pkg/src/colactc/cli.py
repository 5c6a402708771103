"""Command-line entry point: ``colactc <subcommand> ...``.

Failures print one JSON line ``{"error": <type>, "message": <text>}`` to
stderr and exit with status 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

log = logging.getLogger("colactc")

TASK_FLAGS = (
    ("zipf-s", float), ("expand-min", int), ("expand-max", int), ("noise-sigma", float),
    ("swap-prob", float), ("len-min", int), ("len-max", int), ("data-seed", int), ("f-dim", int),
    ("n-train", int), ("n-valid", int),
)


def _ids(text: str) -> list[int]:
    text = text.strip()
    return [int(t) for t in text.replace(",", " ").split()] if text else []


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat JSON config file")
    p.add_argument("--lambda", dest="lam", type=float, help="CTC weight in [0, 1]")
    p.add_argument("--mapping", choices=["identity", "tru", "mod", "div", "log", "random"])
    p.add_argument("--label-size", type=int)
    p.add_argument("--label-source", choices=["transcript", "translation"])
    p.add_argument("--vocab-size", type=int, help="sets both source and target vocabulary sizes")
    p.add_argument("--share-params", action="store_true", default=None)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--deterministic", action="store_true", default=None)
    p.add_argument("--f64", action="store_true", default=None)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--eval-every", type=int)
    p.add_argument("--train-path")
    p.add_argument("--valid-path")
    p.add_argument("--perm-file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=JSON",
                   help="override any config key, e.g. --set d=32")


def _run_overrides(a) -> dict:
    ov = {}
    for key in ("lam", "mapping", "label_size", "label_source", "share_params", "seed", "out",
                "deterministic", "f64", "max_steps", "eval_every", "train_path", "valid_path", "perm_file"):
        v = getattr(a, key, None)
        if v is not None:
            ov[key] = v
    if a.vocab_size is not None:
        ov["v_src"] = ov["v_tgt"] = a.vocab_size
    for item in a.set:
        if "=" not in item:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        try:
            ov[k] = json.loads(v)
        except json.JSONDecodeError:
            ov[k] = v
    return ov


def cmd_gen_data(a) -> None:
    from colactc.data import TaskSpec, spec_dict, split, write_jsonl

    vs = a.vocab_size
    spec = TaskSpec(
        v_src=a.v_src or vs or 512, v_tgt=a.v_tgt or vs or 512, f_dim=a.f_dim or 16,
        zipf_s=a.zipf_s if a.zipf_s is not None else 1.0,
        expand_min=a.expand_min or 3, expand_max=a.expand_max or 5,
        noise_sigma=a.noise_sigma if a.noise_sigma is not None else 0.3,
        swap_prob=a.swap_prob if a.swap_prob is not None else 0.1,
        len_min=a.len_min or 4, len_max=a.len_max or 12,
        seed=a.data_seed if a.data_seed is not None else 42,
    )
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    tr, va = split(spec, a.n_train or 4000, a.n_valid if a.n_valid is not None else 500)
    write_jsonl(out / "train.jsonl", tr)
    write_jsonl(out / "valid.jsonl", va)
    (out / "task.json").write_text(json.dumps(spec_dict(spec), indent=2) + "\n", encoding="utf-8")
    print(json.dumps({"train": len(tr), "valid": len(va), "out": str(out)}))


def cmd_map(a) -> None:
    from colactc.colamap import CoarseMapper
    from colactc.vocab import ShufflePermutation

    perm = ShufflePermutation.load(a.perm_file) if a.perm_file else None
    m = CoarseMapper(a.mapping, a.vocab_size, a.label_size, seed=a.seed, perm=perm)
    if a.histogram:
        print(json.dumps(m.label_histogram().tolist()))
        return
    if a.ids is not None:
        lines = [a.ids]
    elif a.input:
        lines = Path(a.input).read_text(encoding="utf-8").splitlines()
    else:
        lines = sys.stdin.read().splitlines()
    for line in lines:
        print(" ".join(str(x) for x in m.map_sequence(_ids(line))))


def cmd_train(a) -> None:
    from colactc.runconfig import parse_config
    from colactc.suite import run_training

    rc = parse_config(a.config, _run_overrides(a))
    s = run_training(rc)
    print(json.dumps({k: v for k, v in s.items() if k != "evals"}))


def cmd_eval(a) -> None:
    from colactc.data import read_jsonl
    from colactc.model.checkpoint import load_checkpoint
    from colactc.model.decode import decode
    from colactc.model.train import evaluate

    params, cfg, _ = load_checkpoint(a.checkpoint)
    data = read_jsonl(a.data, cfg.v_src, cfg.v_tgt)
    res = evaluate(params, cfg, data)
    if a.decode:
        n = min(a.n_decode, len(data))
        hits = sum(decode(params, cfg, t.frames, a.decode, a.beam_size) == list(t.translation_ids)
                   for t in data[:n])
        res["exact_match"] = hits / n if n else None
        res["n_decoded"] = n
    print(json.dumps(res))


def cmd_bench(a) -> None:
    from colactc import bench

    if a.quick:
        pts = [bench.GridPoint(V=V, L=L, d=a.d, T=a.T, batch=a.batch)
               for V, L in ((1024, 256), (1024, 1024))]
    else:
        pts = bench.default_grid(d=a.d, T=a.T, batch=a.batch)
    if a.lam is not None:
        pts = [bench.GridPoint(**{**p.__dict__, "lam": a.lam}) for p in pts]

    def progress(r):
        log.info("V=%d L=%d median %.2f ms", r.point.V, r.point.L, r.median_step_ms)

    results = bench.run_grid(pts, steps=a.steps, reps=a.reps, warmup=a.warmup, progress=progress)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench.csv").write_text(bench.speedup_table(results), encoding="utf-8")
    (out / "bench.tsv").write_text(bench.speedup_tsv(results), encoding="utf-8")
    (out / "bench.json").write_text(json.dumps([r.to_dict() for r in results], indent=2) + "\n",
                                    encoding="utf-8")
    sys.stdout.write(bench.speedup_table(results))


def cmd_analyze(a) -> None:
    from colactc import analysis

    if a.metrics:
        series = analysis.curve_extract(analysis.read_metrics(a.metrics), a.field, a.window, a.stride)
        for step, v in series:
            print(f"{step}\t{v:.6g}")
        return
    if not a.checkpoint or not a.data:
        raise ValueError("analyze needs --metrics, or --checkpoint together with --data")
    from colactc.data import read_jsonl
    from colactc.model.checkpoint import load_checkpoint

    params, cfg, _ = load_checkpoint(a.checkpoint)
    data = read_jsonl(a.data, cfg.v_src, cfg.v_tgt)[: a.n]
    rep = analysis.encoder_similarity(params, cfg, data, dump_index=a.dump_index)
    if a.out:
        out = Path(a.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "similarity.json").write_text(json.dumps(rep.to_dict(), indent=2) + "\n", encoding="utf-8")
        if rep.matrix is not None:
            analysis.write_matrix_tsv(out / "similarity_matrix.tsv", rep.matrix)
    print(json.dumps({"corpus_mean": rep.corpus_mean, "n": len(data), "n_skipped": rep.n_skipped}))


def cmd_inspect_ctc(a) -> None:
    from colactc import ctc
    from colactc.prng import Rng

    if a.logits:
        logits = np.asarray(json.loads(Path(a.logits).read_text(encoding="utf-8")), dtype=np.float64)
    else:
        logits = Rng(a.seed).normal((a.T, a.L + 1))
    logp = ctc.log_softmax(logits)
    if a.labels_file:
        z = [int(x) for x in json.loads(Path(a.labels_file).read_text(encoding="utf-8"))]
    else:
        z = _ids(a.labels)
    T, C = logp.shape
    nll = ctc.ctc_neg_log_likelihood(logp, z)
    res = {"T": T, "C": C, "blank": C - 1, "labels": z, "feasible": ctc.ctc_feasible(T, z),
           "min_frames": ctc.min_frames(z), "nll": None if np.isinf(nll) else nll,
           "greedy": ctc.greedy_ctc_decode(logp)}
    if C**T <= ctc.BRUTE_FORCE_LIMIT:
        bf = ctc.brute_force_nll(logp, z)
        res["brute_force_nll"] = None if np.isinf(bf) else bf
    if res["feasible"] and a.posteriors:
        res["posteriors"] = np.round(ctc.ctc_posteriors(logp, z), 6).tolist()
    print(json.dumps(res))


def cmd_suite(a) -> None:
    from colactc.suite import run_experiment_suite

    rows = run_experiment_suite(a.suite, a.out, parallel=a.parallel)
    for r in rows:
        print(json.dumps({k: r.get(k) for k in ("name", "status", "token_acc", "total_loss", "error")}))
    if any(r["status"] != "ok" for r in rows):
        log.warning("%d of %d runs failed", sum(r["status"] != "ok" for r in rows), len(rows))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="colactc", description="CTC-regularized training with coarse labels")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic translation task as JSON-lines")
    p.add_argument("--out", required=True)
    p.add_argument("--vocab-size", type=int)
    p.add_argument("--v-src", type=int)
    p.add_argument("--v-tgt", type=int)
    for flag, tp in TASK_FLAGS:
        p.add_argument(f"--{flag}", type=tp)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("map", help="map token ids to coarse labels")
    p.add_argument("--mapping", required=True, choices=["identity", "tru", "mod", "div", "log", "random"])
    p.add_argument("--vocab-size", type=int, required=True)
    p.add_argument("--label-size", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--perm-file")
    p.add_argument("--ids", help="space- or comma-separated ids")
    p.add_argument("--input", help="file with one id sequence per line (default: stdin)")
    p.add_argument("--histogram", action="store_true")
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("train", help="train one configuration")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="held-out token accuracy of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--decode", choices=["greedy", "beam"])
    p.add_argument("--beam-size", type=int)
    p.add_argument("--n-decode", type=int, default=50)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="per-step training time over a (V, L) grid")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--T", type=int, default=50)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--quick", action="store_true", help="two-point grid for smoke testing")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("analyze", help="encoder similarity or training curves")
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--dump-index", type=int)
    p.add_argument("--out")
    p.add_argument("--metrics", help="metrics.jsonl for curve extraction")
    p.add_argument("--field", default="total_loss")
    p.add_argument("--window", type=int, default=1)
    p.add_argument("--stride", type=int, default=1)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("inspect-ctc", help="CTC loss, feasibility and posteriors for one lattice")
    p.add_argument("--labels", default="", help="label ids (blank is the last class)")
    p.add_argument("--labels-file", help="JSON array of label ids")
    p.add_argument("--logits", help="JSON T x C logits or log-probabilities; random if omitted")
    p.add_argument("--T", type=int, default=5)
    p.add_argument("--L", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--posteriors", action="store_true")
    p.set_defaults(func=cmd_inspect_ctc)

    p = sub.add_parser("suite", help="run a named list of configurations")
    p.add_argument("--suite", required=True)
    p.add_argument("--out")
    p.add_argument("--parallel", type=int, default=1, help="worker processes (not for benchmarks)")
    p.set_defaults(func=cmd_suite)
    return ap


def _thread_cap():
    n = os.environ.get("COLACTC_THREADS")
    if not n:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(n))


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_cap():
            a.func(a)
    except Exception as e:
        msg = " ".join(str(e).split())
        sys.stderr.write(json.dumps({"error": type(e).__name__, "message": msg}) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
