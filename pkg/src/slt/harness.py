"""Config-driven runs and sweeps with CSV/JSON/checkpoint outputs."""
from concurrent.futures import ProcessPoolExecutor
import csv
import io
import json
import math
import os
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .config import SWEEP_AXES, _format_value, set_key, to_text, validate
from .data import gen_synthetic_dvs, gen_synthetic_rgb, load_idx
from .models import SpikeformerToy, SpikingConvNet, SpikingMLP
from .seeding import rng_for, stream_seed
from .snn import LifParams
from .tickets import (METRIC_FIELDS, TrainSettings, find_connection_tickets, run_ecpt, run_patch,
                      train_weights)

SUMMARY_FIELDS = ("axis", "value", "runs", "failed", "mean_test_acc", "std_test_acc")


def build_dataset(cfg):
    d = cfg.data
    seed = stream_seed(cfg.seed, "data")
    if d.kind == "synthetic-rgb":
        return gen_synthetic_rgb(d.classes, d.n, d.hw, seed, noise=d.noise, test_fraction=d.test_fraction)
    if d.kind == "synthetic-dvs":
        return gen_synthetic_dvs(d.classes, d.n, d.hw, cfg.lif.T, seed, noise=d.noise,
                                 static_class=d.static_class,
                                 quadrant=None if d.quadrant < 0 else d.quadrant,
                                 test_fraction=d.test_fraction)
    return load_idx(d.images, d.labels, d.classes, test_fraction=d.test_fraction, seed=seed)


def lif_params(cfg):
    l = cfg.lif
    return LifParams(l.lambda_decay, l.v_th, l.v_reset, l.surrogate_width, l.input_gain_mode)


def build_model(cfg, dataset, rng=None):
    """Instantiate the configured architecture for ``dataset``'s frame shape."""
    m, mode = cfg.model, cfg.ticket.mode
    rng = rng if rng is not None else rng_for(cfg.seed, "init")
    C, H, W = dataset.sample_shape
    common = dict(T=cfg.lif.T, lif=lif_params(cfg), rng=rng, init_gain=m.init_gain or None)
    prune = cfg.ticket.pr_c if mode == "conn" else 0.0
    if m.arch == "mlp":
        return SpikingMLP(C * H * W, dataset.classes, m.hidden, variant=m.variant, prune_rate=prune,
                          weight_frozen=mode == "conn", **common)
    if m.arch == "convnet":
        return SpikingConvNet(C, H, dataset.classes, m.channels, hidden=m.hidden, variant=m.variant,
                              prune_rate=prune, weight_frozen=mode == "conn", **common)
    return SpikeformerToy(C, H, dataset.classes, m.patch, m.dim, m.heads, m.depth, m.mlp_ratio,
                          prune_rate=cfg.ticket.pr_c if mode in ("conn", "ecpt") else 0.0,
                          cpm_frozen=mode in ("conn", "ecpt"), encoder_frozen=mode == "conn", **common)


def settings_for(cfg):
    o = cfg.optim
    return TrainSettings(batch=o.batch, optimizer=o.kind, score_lr=o.score_lr, weight_lr=o.lr,
                         seed=cfg.seed)


def execute(cfg, dataset=None):
    """Run the configured pipeline in memory; returns ``(model, report)``."""
    validate(cfg)
    dataset = dataset if dataset is not None else build_dataset(cfg)
    model = build_model(cfg, dataset)
    st, e, t = settings_for(cfg), cfg.epochs, cfg.ticket
    if t.mode == "conn":
        report = find_connection_tickets(model, dataset, t.pr_c, e.conn, st.score_lr, st)
    elif t.mode == "patch":
        report = run_patch(model, dataset, t.pr_p, e.sp, e.train, st)
    elif t.mode == "ecpt":
        report = run_ecpt(model, dataset, t.pr_c, t.pr_p, e.conn, e.sp, e.train, st)
    else:
        report = train_weights(model, dataset, e.train, st)
    return model, report


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".10g")


def metrics_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_FIELDS)
    for row in rows:
        w.writerow([_fmt(row[k]) for k in METRIC_FIELDS])
    return buf.getvalue()


def run(cfg, out_dir=None, dataset=None):
    """Run one experiment and write metrics.csv, report.json, config.txt and model.ckpt."""
    model, report = execute(cfg, dataset)
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(metrics_csv(report.history), encoding="utf-8")
    (out / "config.txt").write_text(to_text(cfg), encoding="utf-8")
    payload = dict(report.to_json(), arch=cfg.model.arch, variant=cfg.model.variant, T=cfg.lif.T,
                   lambda_decay=cfg.lif.lambda_decay)
    (out / "report.json").write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    ticket = None
    if report.ticket is not None:
        ticket = dict(indices=report.ticket, source_pr_p=cfg.ticket.pr_p, n_patches=model.n_patches)
    rng = {label: str(stream_seed(cfg.seed, label)) for label in ("data", "init", "shuffle", "probe")}
    rng["master"] = str(cfg.seed)
    save_checkpoint(out / "model.ckpt", model, cfg, ticket, rng)
    return report


def _sweep_job(args):
    base, key, text, seed, out_dir = args
    try:
        cfg = set_key(set_key(base, key, text), "seed", str(seed))
        report = run(cfg, out_dir)
        return report.accuracy_after, None
    except Exception as exc:  # recorded in the summary, the sweep goes on
        return None, f"{type(exc).__name__}: {exc}"


def sweep_configs(base, axis, values, seeds, out_dir):
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {sorted(SWEEP_AXES)}")
    if not values:
        raise ValueError("sweep needs at least one value")
    jobs = []
    for value in values:
        text = value if isinstance(value, str) else _format_value(value)
        for seed in seeds:
            jobs.append((text, seed, str(Path(out_dir) / f"{axis}={text}" / f"seed={seed}")))
    return jobs


def summarize(axis, jobs, results):
    rows = []
    for text in dict.fromkeys(j[0] for j in jobs):
        accs = [r[0] for j, r in zip(jobs, results) if j[0] == text and r[0] is not None]
        failed = sum(1 for j, r in zip(jobs, results) if j[0] == text and r[0] is None)
        mean = float(np.mean(accs)) if accs else math.nan
        std = float(np.std(accs)) if accs else math.nan
        rows.append(dict(axis=axis, value=text, runs=len(accs) + failed, failed=failed,
                         mean_test_acc=mean, std_test_acc=std))
    return rows


def sweep(base, axis, values, seeds=(0,), out_dir=None, workers=None):
    """Run ``values x seeds`` and write ``summary.csv`` (mean and population std of final test accuracy).

    ``workers`` defaults to ``SLT_THREADS`` (1 if unset); with one worker
    runs execute in-process. A run that fails, including one whose swept
    value is invalid, is counted in ``failed`` and logged to ``errors.txt``;
    the remaining runs go on.
    """
    out = Path(out_dir or base.out_dir)
    jobs = sweep_configs(base, axis, values, seeds, out)
    workers = int(workers or os.environ.get("SLT_THREADS", "1") or 1)
    args = [(base, SWEEP_AXES[axis], j[0], j[1], j[2]) for j in jobs]
    if workers <= 1:
        results = [_sweep_job(a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_job, args))
    rows = summarize(axis, jobs, results)
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_FIELDS)
    for row in rows:
        w.writerow([row["axis"], row["value"], row["runs"], row["failed"],
                    _fmt(row["mean_test_acc"]), _fmt(row["std_test_acc"])])
    (out / "summary.csv").write_text(buf.getvalue(), encoding="utf-8")
    errors = [f"{j[0]} seed={j[1]}: {r[1]}" for j, r in zip(jobs, results) if r[1]]
    if errors:
        (out / "errors.txt").write_text("\n".join(errors) + "\n", encoding="utf-8")
    return rows
