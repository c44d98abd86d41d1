"""Command-line entry point: generate, train, resume, evaluate, report.

Exit codes: 0 success, 1 other failure, 2 configuration error, 3 data or
checkpoint error.
"""
import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from . import checkpoint as ckpt
from .config import RunConfig
from .errors import (CheckpointError, ConfigError, DataError, GeoHDPError,
                     InvalidCoordinateError, InvalidItemError)
from .evaluation import evaluate, report
from .ingest import file_sha256, read_catalog, read_jsonl, write_jsonl
from .parallel import MergePolicy, ParallelRunner
from .sampler import Chain, global_stream, initialize, worker_stream
from .state import State
from .synth import GroundTruth, generate, planted_benchmark

log = logging.getLogger("geohdp")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DATA = 0, 1, 2, 3
DIAGNOSTICS = "diagnostics.jsonl"
CHECKPOINT = "checkpoint.json"


# -- argument handling -------------------------------------------------------------
def _run_flags(p, data=True):
    p.add_argument("--config", help="INI run configuration")
    if data:
        p.add_argument("--data", help="training customers (JSONL)")
        p.add_argument("--heldout", help="held-out customers (JSONL)")
        p.add_argument("--workers", type=int, help="number of shard workers")
        p.add_argument("--checkpoint-every", type=int, help="sweeps between checkpoints")
        p.add_argument("--strict-paper-mode", action="store_true", default=None,
                       help="literal product form of the cluster conditional")
    p.add_argument("--sweeps", type=int, help="total number of sweeps")
    p.add_argument("--seed", type=int, help="master random seed")
    p.add_argument("--out", help="output directory")


def build_parser():
    ap = argparse.ArgumentParser(prog="geohdp", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset and its ground truth")
    _run_flags(p, data=False)

    p = sub.add_parser("train", help="initialise and run the sampler")
    _run_flags(p)

    p = sub.add_parser("resume", help="continue a run from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sweeps", type=int, help="total number of sweeps (default: as configured)")
    p.add_argument("--out", help="output directory (default: the checkpoint's directory)")

    p = sub.add_parser("evaluate", help="held-out likelihood and recovery scores")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--heldout", required=True)
    p.add_argument("--truth", help="ground truth of the training customers (JSON)")
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--out", help="also write eval.json here")

    p = sub.add_parser("report", help="summarise the learned factors")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--catalog", help="tab-separated item index and title")
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--format", choices=("text", "json", "geojson"), default="text")
    p.add_argument("--out", help="also write report.txt, report.json and factors.geojson here")
    return ap


def load_config(args):
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {
        ("run", "data"): getattr(args, "data", None),
        ("run", "heldout"): getattr(args, "heldout", None),
        ("run", "sweeps"): getattr(args, "sweeps", None),
        ("run", "seed"): getattr(args, "seed", None),
        ("run", "checkpoint_every"): getattr(args, "checkpoint_every", None),
        ("run", "out"): getattr(args, "out", None),
        ("parallel", "workers"): getattr(args, "workers", None),
        ("sampler", "strict_paper_mode"): getattr(args, "strict_paper_mode", None),
    }
    for (sec, key), v in overrides.items():
        if v is not None:
            setattr(getattr(cfg, sec), key, v)
    return cfg


def _check_readable(path, what):
    if not os.access(path, os.R_OK):
        raise ConfigError(f"{what}: cannot read {path}")


# -- run orchestration ---------------------------------------------------------------
class Run:
    """Sampler driver (serial chain or shard runner) plus its output files."""

    def __init__(self, cfg: RunConfig, data_path, data_sha, state, global_rng, worker_rngs):
        self.cfg = cfg
        self.data_path = data_path
        self.data_sha = data_sha
        sc = cfg.sampler_config()
        P = cfg.parallel.workers
        if P == 1:
            self.driver = Chain(state, sc, local_rng=worker_rngs[0], global_rng=global_rng)
        else:
            self.driver = ParallelRunner(state, sc, P, MergePolicy(cfg.parallel.sync_interval),
                                         cfg.parallel.executor, global_rng, worker_rngs)

    @property
    def state(self):
        return self.driver.state

    def checkpoint(self):
        d = self.driver
        workers = [d.local_rng] if isinstance(d, Chain) else d.worker_rngs
        return ckpt.Checkpoint(self.cfg, self.data_path, self.data_sha, d.state,
                               d.global_rng, workers)

    def save(self):
        self.checkpoint().save(os.path.join(self.cfg.run.out, CHECKPOINT))

    def run(self, target):
        every = self.cfg.run.checkpoint_every
        path = os.path.join(self.cfg.run.out, DIAGNOSTICS)
        with open(path, "a", encoding="utf-8") as fh:
            while self.state.n_sweeps < target:
                before = self.state.n_sweeps
                diag = self.driver.step()
                fh.write(json.dumps(_nan_to_none(diag.to_dict()), sort_keys=True) + "\n")
                fh.flush()
                log.info("sweep %d: T=%d S=%d Z=%d log joint %.3f", diag.sweep,
                         diag.num_t_clusters, diag.num_s_factors, diag.num_z_topics,
                         diag.log_joint)
                now = self.state.n_sweeps
                if now // every > before // every or now >= target:
                    self.save()
        if isinstance(self.driver, ParallelRunner):
            self.driver.close()


def _nan_to_none(d):
    return {k: (None if isinstance(v, float) and not math.isfinite(v) else v)
            for k, v in d.items()}


def _truncate_diagnostics(path, n_sweeps):
    """Drop records past ``n_sweeps`` (written after the last checkpoint)."""
    if not os.path.exists(path):
        return
    with open(path, encoding="utf-8") as fh:
        keep = [line for line in fh if line.strip() and json.loads(line)["sweep"] <= n_sweeps]
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(keep)


def _load_data(path, n_items=None, sha=None):
    if sha is not None and file_sha256(path) != sha:
        raise CheckpointError(f"{path} has changed since the checkpoint was written")
    return read_jsonl(path, n_items)


# -- subcommands -----------------------------------------------------------------------
def cmd_generate(args):
    cfg = load_config(args)
    cfg.validate()
    y = cfg.synth
    if y.mode not in ("stick", "crp", "planted"):
        raise ConfigError(f"[synth] unknown mode {y.mode!r}")
    os.makedirs(cfg.run.out, exist_ok=True)
    rng = np.random.default_rng(cfg.run.seed)
    n, h = y.n_customers, y.n_heldout
    if y.mode == "planted":
        train, heldout, truth, _ = planted_benchmark(n, rng, n_heldout=h, mean_views=y.mean_views)
    else:
        V = cfg.model.n_items or 40
        data, full = generate(cfg.hyperparams(V), cfg.synth_config(), rng)
        train = data.subset(np.arange(n))
        heldout = data.subset(np.arange(n, n + h)) if h else None
        vt = data.offsets[n]
        truth = GroundTruth(full.t[:n], full.s[:n], full.z[:vt], full.mu, full.c, full.beta)
    out = cfg.run.out
    write_jsonl(os.path.join(out, "train.jsonl"), train)
    if heldout is not None:
        write_jsonl(os.path.join(out, "heldout.jsonl"), heldout)
    truth.save(os.path.join(out, "truth.json"))
    print(json.dumps({"train": os.path.join(out, "train.jsonl"),
                      "heldout": os.path.join(out, "heldout.jsonl") if heldout else None,
                      "truth": os.path.join(out, "truth.json"),
                      "n_customers": n, "n_heldout": h, "n_items": train.n_items}))
    return EXIT_OK


def cmd_train(args):
    cfg = load_config(args)
    cfg.validate(need_data=True)
    data_path = os.path.abspath(cfg.run.data)
    sha = file_sha256(data_path)
    data = _load_data(data_path, cfg.model.n_items)
    if cfg.run.heldout:
        # the catalog is fixed by the training data
        read_jsonl(cfg.run.heldout, data.n_items)
    cfg.model.n_items = data.n_items
    os.makedirs(cfg.run.out, exist_ok=True)
    diag_path = os.path.join(cfg.run.out, DIAGNOSTICS)
    if os.path.exists(diag_path):
        os.unlink(diag_path)
    state = State(data, cfg.hyperparams(data.n_items))
    g = global_stream(cfg.run.seed)
    initialize(state, g, method=cfg.sampler.init, strict=cfg.sampler.strict_paper_mode)
    workers = [worker_stream(cfg.run.seed, p) for p in range(cfg.parallel.workers)]
    run = Run(cfg, data_path, sha, state, g, workers)
    run.save()
    run.run(cfg.run.sweeps)
    _final_summary(run, cfg)
    return EXIT_OK


def cmd_resume(args):
    rec = ckpt.read_record(args.checkpoint)
    data = _load_data(rec["data"]["path"], rec["config"]["model"].get("n_items"),
                      rec["data"]["sha256"])
    cp = ckpt.restore(rec, data)
    cfg = cp.config
    if args.sweeps is not None:
        cfg.run.sweeps = args.sweeps
    cfg.run.out = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    cfg.validate()
    if len(cp.worker_rngs) != cfg.parallel.workers:
        raise CheckpointError("checkpoint random streams do not match the worker count")
    os.makedirs(cfg.run.out, exist_ok=True)
    _truncate_diagnostics(os.path.join(cfg.run.out, DIAGNOSTICS), cp.n_sweeps)
    run = Run(cfg, cp.data_path, cp.data_sha256, cp.state, cp.global_rng, cp.worker_rngs)
    run.run(cfg.run.sweeps)
    _final_summary(run, cfg)
    return EXIT_OK


def _final_summary(run, cfg):
    st = run.state
    out = {"sweeps": st.n_sweeps, "clusters": st.T, "location_factors": st.S,
           "topics": st.Z, "checkpoint": os.path.join(cfg.run.out, CHECKPOINT)}
    if cfg.run.heldout:
        rep = evaluate(st, read_jsonl(cfg.run.heldout, st.data.n_items))
        out["heldout_loglik_per_view"] = rep.heldout_loglik_per_view
        out["heldout_loglik_location"] = rep.heldout_loglik_location
    print(json.dumps(_nan_to_none(out)))


def _load_checkpoint(path):
    rec = ckpt.read_record(path)
    data = _load_data(rec["data"]["path"], rec["config"]["model"].get("n_items"),
                      rec["data"]["sha256"])
    return ckpt.restore(rec, data)


def cmd_evaluate(args):
    cp = _load_checkpoint(args.checkpoint)
    heldout = read_jsonl(args.heldout, cp.state.data.n_items)
    truth = None
    if args.truth:
        try:
            truth = GroundTruth.load(args.truth)
        except (OSError, ValueError, KeyError) as e:
            raise DataError(f"cannot load ground truth {args.truth}: {e}") from None
        if truth.t.size != cp.state.data.n_customers:
            raise DataError("ground truth does not match the training customers")
    rep = evaluate(cp.state, heldout, truth, top_k=args.top_k)
    text = json.dumps(_jsonable(rep.to_json()), indent=1, sort_keys=True)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "eval.json"), "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


def cmd_report(args):
    cp = _load_checkpoint(args.checkpoint)
    catalog = read_catalog(args.catalog) if args.catalog else None
    summary = report(cp.state, top_k=args.top_k, catalog=catalog)
    outputs = {
        "text": summary.to_text(),
        "json": json.dumps(summary.to_json(), indent=1, sort_keys=True) + "\n",
        "geojson": json.dumps(summary.to_geojson(), indent=1) + "\n",
    }
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        for fmt, name in (("text", "report.txt"), ("json", "report.json"),
                          ("geojson", "factors.geojson")):
            with open(os.path.join(args.out, name), "w", encoding="utf-8") as fh:
                fh.write(outputs[fmt])
    sys.stdout.write(outputs[args.format])
    return EXIT_OK


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "resume": cmd_resume,
            "evaluate": cmd_evaluate, "report": cmd_report}


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print("configuration error:", file=sys.stderr)
        for p in e.problems:
            print(f"  - {p}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, InvalidItemError, InvalidCoordinateError, CheckpointError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except GeoHDPError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
