"""Experiment execution for every CLI mode, plus ablation sweeps."""
from __future__ import annotations

import datetime as _dt
import json
import math
import os
import subprocess
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import export_maps, load_checkpoint, read_manifest, save_checkpoint, write_jsonl
from .data import SynthSpec, gen_dataset, load_pair_dir, save_pairs, stack, train_val_split
from .experiment import ConfigError, law_config, order_config, run_config
from .law import NoiseSchedule, NonFiniteLossError, OptimSettings, build_models, train_law, train_uniform_baseline
from .law.train import delta_alignment, latents, probe_batch, probe_delta, region_mse
from .metrics import binarize
from .order import NonFiniteSegLoss, OrderNetwork, SegSettings, build_mkunet, evaluate, predict, train_seg
from .profiler import estimate_flops
from .tensor_core import NonFiniteError

OUTPUT_ROOT_ENV = "ADASPATIAL_OUTPUT_ROOT"


class RunFailure(RuntimeError):
    """A run started but could not finish; ``diagnostic`` is dumped to disk."""

    def __init__(self, message: str, diagnostic: dict):
        super().__init__(message)
        self.diagnostic = diagnostic


def output_dir(cfg: dict) -> Path:
    if cfg.get("output_dir"):
        return Path(cfg["output_dir"])
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    return root / f"{cfg['mode']}-seed{cfg['seed']}"


def _git_revision() -> str | None:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
    except (OSError, subprocess.SubprocessError):
        return None
    return out.stdout.strip() or None if out.returncode == 0 else None


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def write_report(out: Path, cfg: dict, metrics: dict, profile: dict | None = None,
                 artifacts: list[str] = ()) -> dict:
    report = {
        "mode": cfg["mode"],
        "config": {**cfg, "output_dir": None},
        "metrics": metrics,
        "profile": profile,
        "artifacts": sorted(artifacts),
        "version": {"package": __version__, "git": _git_revision(), "numpy": np.__version__},
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    report = _clean(report)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


# -- data -------------------------------------------------------------------------

def load_data(cfg: dict):
    d = cfg["data"]
    if d["source"] == "dir":
        return load_pair_dir(d["images"], d["masks"], crop=bool(d["crop"]))
    spec = SynthSpec(size=int(d["size"]), ratio_range=tuple(d["ratio_range"]), blob_range=tuple(d["blob_range"]),
                     contrast=float(d["contrast"]), noise=float(d["noise"]), channels=int(d["channels"]),
                     seed=cfg["seed"])
    return gen_dataset(spec, int(d["count"]))


def _split(cfg, pairs):
    return train_val_split(pairs, cfg["seed"], float(cfg["data"]["val_fraction"]))


def _order_for_data(cfg, pairs):
    oc = order_config(cfg)
    if pairs and pairs[0].image.shape[0] != oc.in_channels:
        raise ConfigError(f"data has {pairs[0].image.shape[0]} channels, network expects {oc.in_channels}",
                          "order.in_channels")
    return oc


def _profile(net, size) -> dict:
    return estimate_flops(net, size).to_dict()


# -- modes ----------------------------------------------------------------------

def run_gen_data(cfg, out: Path) -> dict:
    pairs = load_data(cfg)
    save_pairs(pairs, out / "data")
    ratios = [p.ratio for p in pairs]
    metrics = {"count": len(pairs), "mean_ratio": float(np.mean(ratios)),
               "min_ratio": float(np.min(ratios)), "max_ratio": float(np.max(ratios))}
    return write_report(out, cfg, metrics, artifacts=["data/manifest.json"])


def _export_seg_predictions(net, pairs, directory, binary=True):
    images, _ = stack(pairs)
    probs = predict(net, images)[:, 0]
    maps = binarize(probs).astype(float) if binary else probs
    export_maps(maps, directory, [p.id for p in pairs])


def run_train_seg(cfg, out: Path) -> dict:
    pairs = load_data(cfg)
    oc = _order_for_data(cfg, pairs)
    train, val = _split(cfg, pairs)
    o = cfg["optim"]
    log = []
    try:
        run = train_seg(train, val, oc, SegSettings(lr=float(o["lr"]), batch_size=int(o["batch_size"])),
                        epochs=int(o["epochs"]), seed=cfg["seed"], on_epoch=log.append)
    except (NonFiniteSegLoss, NonFiniteError) as exc:
        write_jsonl(out / "log.jsonl", log)
        raise RunFailure(str(exc), {"epochs_completed": len(log), "log": log}) from exc
    write_jsonl(out / "log.jsonl", run.log)
    save_checkpoint({"net": run.net}, out / "checkpoint", cfg)
    if val:
        _export_seg_predictions(run.net, val, out / "predictions")
    final = run.log[-1] if run.log else {}
    metrics = {
        "mDice": final.get("mDice", evaluate(run.net, val)["mDice"] if val else None),
        "mIoU": final.get("mIoU", evaluate(run.net, val)["mIoU"] if val else None),
        "train_loss": final.get("train_loss"),
        "n_train": len(train), "n_val": len(val),
        "epochs": run.log,
    }
    size = pairs[0].image.shape[1] if pairs else oc.input_size
    return write_report(out, cfg, metrics, _profile(run.net, size),
                        ["log.jsonl", "checkpoint/manifest.json"] + (["predictions"] if val else []))


def trace_stability(values: list[float], window: int = 10) -> dict:
    """Flag loss traces that are non-finite or drift upward / blow past their start."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return {"unstable": False, "reason": "empty"}
    if not np.all(np.isfinite(arr)):
        return {"unstable": True, "reason": "non-finite"}
    w = max(1, min(window, arr.size // 4 or 1))
    smooth = np.convolve(arr, np.ones(w) / w, mode="valid")
    first, last = smooth[0], smooth[-1]
    if smooth.max() > 2.0 * first:
        return {"unstable": True, "reason": "unbounded"}
    if last > first:
        return {"unstable": True, "reason": "non-monotone"}
    return {"unstable": False, "reason": "ok"}


def run_train_law(cfg, out: Path) -> dict:
    pairs = load_data(cfg)
    train, val = _split(cfg, pairs)
    lc = law_config(cfg)
    sched = NoiseSchedule.linear(T=int(cfg["law"]["T"]))
    o = cfg["optim"]
    steps, every = int(o["steps"]), int(o["snapshot_every"])
    snaps = sorted(set(range(0, steps + 1, every)) | {0, steps}) if every else [0, steps]
    opt = OptimSettings(lr=float(o["lr"]), batch_size=int(o["batch_size"]))
    hidden = int(cfg["law"]["student_hidden"])
    log: list[dict] = []
    try:
        run = train_law(train, lc, sched, opt, steps, cfg["seed"], snaps, hidden, on_step=log.append)
    except (NonFiniteLossError, NonFiniteError) as exc:
        write_jsonl(out / "log.jsonl", log)
        raise RunFailure(str(exc), {"snapshot": getattr(exc, "snapshot", None), "steps_completed": len(log)}) from exc
    write_jsonl(out / "log.jsonl", run.log)
    save_checkpoint({"student": run.student, "teacher": run.teacher, "phi": run.phi}, out / "checkpoint", cfg)
    for step, delta in run.snapshots.items():
        export_maps(delta, out / "delta_maps", [f"step{step:05d}_probe{i}" for i in range(len(delta))])

    eval_pairs = val or train
    align = {str(s): delta_alignment(d, run.probe_masks) for s, d in sorted(run.snapshots.items())}
    law_mse = region_mse(run.student, eval_pairs, sched)
    metrics = {
        "final": run.log[-1] if run.log else None,
        "region_mse": law_mse,
        "alignment": align,
        "alignment_first": align[str(min(run.snapshots))],
        "alignment_last": align[str(max(run.snapshots))],
        "stability": trace_stability([r["total"] for r in run.log]),
    }
    if o.get("compare_baseline"):
        base = train_uniform_baseline(train, lc, sched, opt, steps, cfg["seed"], hidden)
        base_mse = region_mse(base.student, eval_pairs, sched)
        metrics["baseline_region_mse"] = base_mse
        metrics["lesion_mse_gain"] = base_mse["lesion"] - law_mse["lesion"]
    return write_report(out, cfg, metrics, artifacts=["log.jsonl", "checkpoint/manifest.json", "delta_maps"])


def _restore(cfg):
    """Rebuild the model(s) stored at ``cfg['checkpoint']``."""
    manifest = read_manifest(cfg["checkpoint"])
    stored = manifest["config"]
    if stored.get("mode") == "train-seg":
        net = OrderNetwork(order_config(stored), stored["seed"])
        load_checkpoint({"net": net}, cfg["checkpoint"])
        return "seg", stored, {"net": net}
    if stored.get("mode") == "train-law":
        lc = law_config(stored)
        s, t, phi = build_models(stored["seed"], lc, int(stored["law"]["T"]), int(stored["law"]["student_hidden"]))
        mods = {"student": s, "teacher": t, "phi": phi}
        load_checkpoint(mods, cfg["checkpoint"])
        return "law", stored, mods
    raise ConfigError(f"checkpoint was written by mode {stored.get('mode')!r}", "checkpoint")


def run_eval(cfg, out: Path) -> dict:
    kind, stored, mods = _restore(cfg)
    pairs = load_data(cfg)
    if kind == "seg":
        net = mods["net"]
        _order_for_data(stored, pairs)
        metrics = evaluate(net, pairs)
        _export_seg_predictions(net, pairs, out / "predictions")
        size = pairs[0].image.shape[1] if pairs else net.cfg.input_size
        return write_report(out, cfg, metrics, _profile(net, size), ["predictions"])
    sched = NoiseSchedule.linear(T=int(stored["law"]["T"]))
    metrics = {"region_mse": region_mse(mods["student"], pairs, sched)}
    z0, m = latents(pairs)
    probe = probe_batch(z0, m, cfg["seed"], sched.T, count=len(pairs))
    delta = probe_delta(mods["student"], mods["phi"], probe, law_config(stored), sched)
    metrics["alignment"] = delta_alignment(delta, probe.m[:, 0])
    return write_report(out, cfg, metrics)


def run_export_maps(cfg, out: Path) -> dict:
    kind, stored, mods = _restore(cfg)
    pairs = load_data(cfg)
    if kind == "seg":
        _export_seg_predictions(mods["net"], pairs, out / "maps", binary=False)
    else:
        sched = NoiseSchedule.linear(T=int(stored["law"]["T"]))
        z0, m = latents(pairs)
        probe = probe_batch(z0, m, cfg["seed"], sched.T, count=len(pairs))
        delta = probe_delta(mods["student"], mods["phi"], probe, law_config(stored), sched)
        export_maps(delta, out / "maps", [f"{p.id}_delta" for p in pairs])
    return write_report(out, cfg, {"count": len(pairs), "kind": kind}, artifacts=["maps"])


def run_profile(cfg, out: Path) -> dict:
    oc = order_config(cfg)
    net = OrderNetwork(oc, cfg["seed"])
    prof = estimate_flops(net, oc.input_size)
    base = estimate_flops(build_mkunet(oc, cfg["seed"]), oc.input_size)
    metrics = {
        "params": prof.total_params,
        "flops": prof.flops,
        "gflops": prof.flops / 1e9,
        "mkunet_params": base.total_params,
        "mkunet_gflops": base.flops / 1e9,
        "param_delta": prof.total_params - base.total_params,
        "flop_ratio": prof.flops / base.flops,
    }
    (out / "profile.json").write_text(prof.to_json() + "\n")
    return write_report(out, cfg, metrics, prof.to_dict(), ["profile.json"])


# -- sweeps ---------------------------------------------------------------------

def _row(name, seed, report):
    m = report["metrics"]
    row = {"name": name, "seed": seed, "status": "ok"}
    if report["mode"] == "train-seg":
        row.update(mDice=m["mDice"], mIoU=m["mIoU"], params=report["profile"]["total_params"],
                   gflops=report["profile"]["flops"] / 1e9)
    elif report["mode"] == "train-law":
        row.update(total=m["final"]["total"] if m["final"] else None,
                   lesion_mse=m["region_mse"]["lesion"], background_mse=m["region_mse"]["background"],
                   alignment_first=m["alignment_first"], alignment_last=m["alignment_last"],
                   unstable=m["stability"]["unstable"], stability=m["stability"]["reason"])
    elif report["mode"] == "profile":
        row.update(params=m["params"], gflops=m["gflops"])
    else:
        row.update({k: v for k, v in m.items() if isinstance(v, (int, float, str))})
    return row


def _aggregate(rows: list[dict]) -> list[dict]:
    out = []
    for name in dict.fromkeys(r["name"] for r in rows):
        mine = [r for r in rows if r["name"] == name]
        agg = {"name": name, "seeds": [r["seed"] for r in mine]}
        for key in mine[0]:
            if key in ("name", "seed"):
                continue
            vals = [r.get(key) for r in mine]
            if all(isinstance(v, bool) for v in vals):
                agg[key] = any(vals)
            elif all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in vals):
                agg[key] = float(np.mean(vals))
            else:
                agg[key] = vals[0] if len(set(map(str, vals))) == 1 else vals
        out.append(agg)
    return out


def format_table(rows: list[dict]) -> str:
    if not rows:
        return ""
    cols = [c for c in rows[0] if c != "seeds"]

    def cell(v):
        if isinstance(v, float):
            return f"{v:.4f}"
        return str(v)

    body = [[cell(r.get(c, "")) for c in cols] for r in rows]
    widths = [max(len(c), *(len(b[i]) for b in body)) for i, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.ljust(w) for v, w in zip(b, widths)) for b in body]
    return "\n".join(lines) + "\n"


def run_sweep(cfg, out: Path) -> dict:
    seeds = cfg["sweep"].get("seeds") or [cfg["seed"]]
    runs = cfg["sweep"]["runs"]
    mode = runs[0]["mode"]
    plans = [(r["name"], s, run_config(cfg, r, s)) for r in runs for s in seeds]
    rows = []
    for name, seed, rc in plans:
        rc["output_dir"] = str(out / name / f"seed{seed}")
        try:
            report = run_experiment(rc)
            rows.append(_row(name, seed, report))
        except RunFailure as exc:
            rows.append({"name": name, "seed": seed, "status": "failed", "error": str(exc),
                         "unstable": True, "stability": "non-finite"})
    summary_rows = _aggregate(rows)
    key = {"train-seg": "mDice"}.get(mode)
    if key:
        summary_rows.sort(key=lambda r: -r[key] if isinstance(r.get(key), float) else math.inf)
        per_seed = {}
        for s in seeds:
            ranked = sorted((r for r in rows if r["seed"] == s and r.get(key) is not None),
                            key=lambda r: -r[key])
            per_seed[str(s)] = [r["name"] for r in ranked]
    else:
        per_seed = None
    summary = _clean({"mode": mode, "seeds": seeds, "rows": summary_rows, "runs": rows,
                      "ordering_by_seed": per_seed})
    (out / "sweep_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (out / "sweep_summary.txt").write_text(format_table(summary["rows"]))
    return write_report(out, cfg, {"rows": summary["rows"], "ordering_by_seed": per_seed},
                        artifacts=["sweep_summary.json", "sweep_summary.txt"])


MODE_RUNNERS = {
    "gen-data": run_gen_data,
    "train-seg": run_train_seg,
    "train-law": run_train_law,
    "eval": run_eval,
    "export-maps": run_export_maps,
    "profile": run_profile,
    "sweep": run_sweep,
}


def run_experiment(cfg: dict) -> dict:
    out = output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    cfg = {**cfg, "output_dir": str(out)}
    try:
        return MODE_RUNNERS[cfg["mode"]](cfg, out)
    except RunFailure as exc:
        (out / "diagnostic.json").write_text(json.dumps(_clean({"error": str(exc), **exc.diagnostic}),
                                                        indent=2, sort_keys=True) + "\n")
        raise
