"""spikepin command line: gen-data, train, eval, bench, infer.

Batch-oriented: every run is driven by a YAML config plus a seed, and every
output artifact embeds the config echo, seed and input hashes, so a run is
reconstructible from its outputs alone.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 training
divergence.  SPIKEPIN_LOG controls log verbosity (DEBUG/INFO/WARNING).
"""

from __future__ import annotations

import json
import logging
import os
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import imgio
from .bench import bench_latency
from .config import ConfigError, RunConfig, config_echo, load_config
from .harness import RunReport, evaluate
from .lif import DivergenceError, LifNetwork
from .pipeline import FramePipeline, PipelineConfig, encode_manifest
from .synth import Manifest, build_dataset, stratified_split
from .training import train, write_epoch_csv

log = logging.getLogger("spikepin")


def _pipeline_config(cfg: RunConfig) -> PipelineConfig:
    return PipelineConfig(sift=cfg.sift, encoding=cfg.encoding)


def _require_parent(path: Path) -> None:
    if not path.parent.exists():
        raise FileNotFoundError(f"output directory parent does not exist: {path.parent}")


@click.group()
def cli() -> None:
    """Keypoint-to-spike barrier-pin anomaly classifier."""


config_opt = click.option("--config", "config_path", type=click.Path(), default=None,
                          help="YAML run configuration.")
seed_opt = click.option("--seed", type=int, default=None, help="Master seed override.")
jobs_opt = click.option("--jobs", type=int, default=1, show_default=True,
                        help="Worker cap for feature precomputation.")


@cli.command("gen-data")
@config_opt
@seed_opt
@click.option("--out", "out_dir", type=click.Path(), required=True,
              help="Dataset output directory.")
def cmd_gen_data(config_path, seed, out_dir):
    """Render the procedural dataset and write a split manifest."""
    cfg = load_config(config_path, seed=seed)
    out = Path(out_dir)
    _require_parent(out)
    ds = cfg.dataset
    log.info("rendering %d + %d frames into %s", ds.n_ok, ds.n_out, out)
    manifest = build_dataset(
        out, n_ok=ds.n_ok, n_out=ds.n_out, base_out=ds.base_out,
        seed=cfg.seed, width=ds.width, height=ds.height,
    )
    manifest = stratified_split(manifest, ds.fractions, seed=cfg.seed)
    manifest.write(out / "manifest.jsonl")
    click.echo(str(out / "manifest.jsonl"))
    click.echo(f"manifest_sha256 {manifest.sha256()}")


@cli.command("train")
@config_opt
@seed_opt
@jobs_opt
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--epochs", type=int, default=None, help="Override training epochs.")
def cmd_train(config_path, seed, jobs, manifest_path, out_dir, epochs):
    """Train from a split manifest; writes checkpoint, epoch CSV, run summary."""
    from dataclasses import replace

    cfg = load_config(config_path, seed=seed)
    if epochs is not None:
        cfg = replace(cfg, training=replace(cfg.training, epochs=epochs))
    out = Path(out_dir)
    _require_parent(out)
    out.mkdir(exist_ok=True)

    manifest = Manifest.read(manifest_path)
    pipe_cfg = _pipeline_config(cfg)
    t0 = time.perf_counter()
    log.info("encoding train/val splits (jobs=%d)", jobs)
    train_set = encode_manifest(manifest, pipe_cfg, split="train", jobs=jobs)
    val_set = encode_manifest(manifest, pipe_cfg, split="val", jobs=jobs)
    encode_seconds = time.perf_counter() - t0

    rng = np.random.default_rng(cfg.seed)
    net = LifNetwork.from_config(cfg.network, rng)
    checkpoint = out / "checkpoint.json"
    meta = {"config": config_echo(cfg), "seed": cfg.seed, "manifest_hash": manifest.sha256()}

    t1 = time.perf_counter()
    net, reports = train(
        train_set, val_set, net, cfg.training,
        checkpoint_path=checkpoint, checkpoint_meta=meta,
        progress=lambda r: log.info(
            "epoch %d: train %.4f val %.4f acc %.3f", r.epoch, r.train_loss,
            r.val_loss, r.val_accuracy,
        ),
    )
    train_seconds = time.perf_counter() - t1

    write_epoch_csv(reports, out / "epochs.csv")
    summary = {
        "config": config_echo(cfg),
        "seed": cfg.seed,
        "manifest_hash": manifest.sha256(),
        "checkpoint_hash": net.content_hash(),
        "epochs_run": len(reports),
        "best_val_loss": min((r.val_loss for r in reports), default=None),
        "final_val_accuracy": reports[-1].val_accuracy if reports else None,
        "encode_seconds": round(encode_seconds, 3),
        "train_seconds": round(train_seconds, 3),
    }
    with open(out / "run_summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    click.echo(str(checkpoint))
    click.echo(f"checkpoint_sha256 {net.content_hash()}")


@cli.command("eval")
@config_opt
@seed_opt
@jobs_opt
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--checkpoint", "checkpoint_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--split", type=click.Choice(["train", "val", "test"]), default="test",
              show_default=True)
@click.option("--allow-split-mismatch", is_flag=True,
              help="Permit evaluating on train/val (normally refused).")
@click.option("--plots/--no-plots", default=True, show_default=True)
def cmd_eval(config_path, seed, jobs, manifest_path, checkpoint_path, out_dir, split,
             allow_split_mismatch, plots):
    """Evaluate a checkpoint on a manifest split; writes the run report."""
    cfg = load_config(config_path, seed=seed)
    if split != "test" and not allow_split_mismatch:
        raise ConfigError(
            f"refusing to evaluate on the {split!r} split; pass --allow-split-mismatch"
        )
    out = Path(out_dir)
    _require_parent(out)
    out.mkdir(exist_ok=True)

    manifest = Manifest.read(manifest_path)
    net, _meta = LifNetwork.load(checkpoint_path)
    result = evaluate(net, manifest, _pipeline_config(cfg), split=split, jobs=jobs)
    report = RunReport.from_eval(result, net, manifest, config_echo(cfg), cfg.seed)
    report.write(out / "run_report.json")
    report.write_metrics_csv(out / "metrics.csv")
    if report.pr_points:
        report.write_pr_csv(out / "pr_curve.csv")
    if plots and result.pr_points:
        from .plots import save_pr_curve

        save_pr_curve(result.pr_points, result.average_precision, out / "pr_curve.png")
    click.echo(str(out / "run_report.json"))
    click.echo(f"accuracy {result.metrics.accuracy:.4f}")
    click.echo(f"report_sha256 {report.sha256()}")


@cli.command("bench")
@config_opt
@seed_opt
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--checkpoint", "checkpoint_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--warmup", type=int, default=None, help="Warmup frame count override.")
@click.option("--reps", type=int, default=None, help="Repetitions override.")
@click.option("--plots/--no-plots", default=True, show_default=True)
def cmd_bench(config_path, seed, manifest_path, checkpoint_path, out_dir, warmup, reps, plots):
    """Per-stage single-threaded latency benchmark over test-split frames."""
    cfg = load_config(config_path, seed=seed)
    out = Path(out_dir)
    _require_parent(out)
    out.mkdir(exist_ok=True)

    manifest = Manifest.read(manifest_path)
    net, _meta = LifNetwork.load(checkpoint_path)
    entries = manifest.split_entries("test") or manifest.entries
    entries = entries[: cfg.bench.frames]
    frames = [imgio.read_image(manifest.resolve(e)) for e in entries]
    pipeline = FramePipeline(net, _pipeline_config(cfg))
    report = bench_latency(
        pipeline.stages(),
        frames,
        warmup=cfg.bench.warmup if warmup is None else warmup,
        reps=cfg.bench.reps if reps is None else reps,
    )
    report.write_json(out / "latency_report.json")
    report.write_csv(out / "latency_report.csv")
    if plots:
        from .plots import save_latency_bars

        save_latency_bars(report, out / "latency.png")
    click.echo(str(out / "latency_report.json"))
    click.echo(f"total_median_ms {report.total.median_ms:.3f}")


@cli.command("infer")
@config_opt
@seed_opt
@click.option("--checkpoint", "checkpoint_path", type=click.Path(exists=True), required=True)
@click.argument("image", type=click.Path())
def cmd_infer(config_path, seed, checkpoint_path, image):
    """Classify a single image; prints {label, counts, score} as JSON."""
    cfg = load_config(config_path, seed=seed)
    net, _meta = LifNetwork.load(checkpoint_path)
    img = imgio.read_image(image)
    pipeline = FramePipeline(net, _pipeline_config(cfg))
    result = pipeline.run(img)
    click.echo(
        json.dumps(
            {
                "label": result.prediction.label.value,
                "counts": list(result.prediction.counts),
                "score": result.prediction.score,
                "n_keypoints": result.n_keypoints,
                "input_density": result.raster_density,
            },
            sort_keys=True,
        )
    )


def main() -> None:
    level = os.environ.get("SPIKEPIN_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cli.main(standalone_mode=False)
    except click.exceptions.Abort:
        sys.exit(130)
    except click.UsageError as err:
        click.echo(f"error: {err.format_message()}", err=True)
        sys.exit(2)
    except (ConfigError, ValueError) as err:
        click.echo(f"error: {err}", err=True)
        sys.exit(2)
    except DivergenceError as err:
        click.echo(f"error: training diverged: {err}", err=True)
        sys.exit(4)
    except OSError as err:
        click.echo(f"error: {err}", err=True)
        sys.exit(3)


if __name__ == "__main__":
    main()
