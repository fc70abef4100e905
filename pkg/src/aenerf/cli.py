"""Command-line interface.

A thin layer over the core package: each subcommand parses arguments,
loads config/checkpoints and calls into the training, data, eval or
service modules. Usage errors exit 2 (click's default); runtime errors
print one machine-parsable JSON record to stderr and exit 1.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import torch

from . import config as config_mod
from . import data as data_mod
from . import eval as eval_mod
from . import persistence, training

MODEL_ENV_VAR = "AENERF_MODEL"


def _fail(exc: Exception) -> None:
    record = {"error": type(exc).__name__, "message": str(exc)}
    print(json.dumps(record), file=sys.stderr)
    raise SystemExit(1)


def _load_config(path: str | None, seed: int | None) -> config_mod.RunConfig:
    cfg = config_mod.load_config(path) if path else config_mod.desk_config()
    if seed is not None:
        cfg, log = config_mod.apply_overrides(cfg, {"seed": seed})
        for line in log:
            click.echo(line)
    return cfg


def _checkpoint_arg(checkpoint: str | None) -> str:
    path = checkpoint or os.environ.get(MODEL_ENV_VAR, "")
    if not path:
        raise click.UsageError(
            f"no checkpoint given; pass --checkpoint or set {MODEL_ENV_VAR}"
        )
    return path


def _write_loss_log(state: training.TrainState, log_path: str | None) -> None:
    if not log_path:
        return
    with open(log_path, "w") as fh:
        for record in state.loss_log:
            fh.write(json.dumps(record) + "\n")


@click.group()
def main() -> None:
    """Auto-encoding radiance fields: train, evaluate, render, serve."""


@main.command("synth-data")
@click.option("--out", required=True, type=click.Path())
@click.option("--count", default=2000, show_default=True)
@click.option("--resolution", default=64, show_default=True)
@click.option("--seed", default=7, show_default=True)
def synth_data(out: str, count: int, resolution: int, seed: int) -> None:
    """Generate the factor-controlled synthetic dataset."""
    try:
        dataset = data_mod.build_synth_dataset(count, resolution, seed)
        data_mod.save_dataset(dataset, out)
        click.echo(f"wrote {count} images to {out}")
    except Exception as exc:  # noqa: BLE001 - single runtime error surface
        _fail(exc)


def _dataset_for(cfg: config_mod.RunConfig, data_dir: str | None) -> data_mod.SynthDataset:
    if data_dir:
        return data_mod.load_dataset(data_dir)
    return data_mod.build_synth_dataset(cfg.data.train_size, cfg.data.resolution, cfg.seed)


@main.command()
@click.option("--stage", type=click.Choice(["1", "2", "3", "all"]), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--data", "data_dir", type=click.Path(exists=True), help="dataset directory; defaults to regenerating the synthetic set")
@click.option("--resume", type=click.Path(exists=True), help="checkpoint to continue from")
@click.option("--pseudo", "pseudo_dir", type=click.Path(exists=True), help="pseudo-pair directory for stage 2")
@click.option("--out", default="checkpoint.aenerf", show_default=True)
@click.option("--steps", type=int, help="override the configured step count")
@click.option("--seed", type=int)
@click.option("--from-scratch", is_flag=True, help="run stage 3 on a fresh model (ablation baseline)")
@click.option("--log", "log_path", type=click.Path(), help="write per-step loss records (JSONL)")
def train(stage, config_path, data_dir, resume, pseudo_dir, out, steps, seed, from_scratch, log_path) -> None:
    """Run one training stage (or all three) and write a checkpoint."""
    try:
        cfg = _load_config(config_path, seed)
        if resume:
            state = persistence.load_checkpoint(resume, expected_config=cfg if config_path else None)
            cfg = state.config
        else:
            state = training.new_train_state(cfg)
        dataset = _dataset_for(cfg, data_dir)

        def stage2_pairs() -> list[training.PseudoPair]:
            if pseudo_dir:
                return training.load_pseudo_set(pseudo_dir)
            return training.generate_pseudo_set(state, cfg.training.pseudo_count)

        if stage in ("1", "all"):
            training.run_stage1(state, dataset, steps)
        if stage in ("2", "all"):
            if state.stage < 1:
                raise click.UsageError("stage 2 requires a stage-1 checkpoint (--resume)")
            training.run_stage2(state, stage2_pairs(), steps)
        if stage in ("3", "all"):
            if state.stage < 2 and not from_scratch:
                raise click.UsageError(
                    "stage 3 requires a stage-2 checkpoint (--resume) or --from-scratch"
                )
            training.run_stage3(state, dataset, steps)
        digest = persistence.save_checkpoint(state, out)
        _write_loss_log(state, log_path)
        click.echo(f"checkpoint {out} sha256 {digest[:16]}")
    except click.UsageError:
        raise
    except Exception as exc:  # noqa: BLE001
        _fail(exc)


@main.command("pseudo-gen")
@click.option("--checkpoint", type=click.Path())
@click.option("--count", default=512, show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", type=int)
def pseudo_gen(checkpoint, count, out, seed) -> None:
    """Render pseudo pairs from a stage-1 (or later) checkpoint."""
    try:
        state = persistence.load_checkpoint(_checkpoint_arg(checkpoint))
        pairs = training.generate_pseudo_set(state, count, seed=seed)
        training.save_pseudo_set(pairs, out)
        click.echo(f"wrote {len(pairs)} pseudo pairs to {out}")
    except click.UsageError:
        raise
    except Exception as exc:  # noqa: BLE001
        _fail(exc)


@main.command("eval")
@click.option("--suite", type=click.Choice(["recon", "swap", "ablation"]), required=True)
@click.option("--checkpoint", type=click.Path())
@click.option("--out", type=click.Path(), help="write the JSON report here")
@click.option("--triples", default=20, show_default=True, help="swap triples per attribute")
@click.option("--samples", default=64, show_default=True, help="samples for the recon suite")
@click.option("--seed", default=1007, show_default=True)
def eval_cmd(suite, checkpoint, out, triples, samples, seed) -> None:
    """Run an evaluation suite against a checkpoint."""
    try:
        model = persistence.load_inference_model(_checkpoint_arg(checkpoint))
        cfg = model.config
        fingerprint = model.checkpoint_hash
        if suite == "recon":
            dataset = data_mod.build_synth_dataset(samples, cfg.data.resolution, seed)
            values = [
                eval_mod.psnr(model.reconstruct(dataset.images[i]), dataset.images[i])
                for i in range(len(dataset))
            ]
            report = eval_mod.EvalReport(checkpoint_fingerprint=fingerprint)
            report.add("psnr_db", "reconstruction", values)
        elif suite == "swap":
            test_set = data_mod.build_swap_test_set(triples, cfg.data.resolution, seed)
            report = eval_mod.swap_fidelity_report(model, test_set, fingerprint)
        else:  # ablation: trained model vs random-code baseline ordering
            test_set = data_mod.build_swap_test_set(triples, cfg.data.resolution, seed)
            report = eval_mod.swap_fidelity_report(model, test_set, fingerprint)
            baseline = eval_mod.swap_fidelity_report(
                random_code_model(model, seed), test_set, "random-baseline"
            )
            for metric in baseline.metrics:
                report.metrics.append(
                    eval_mod.MetricSummary(
                        f"baseline_{metric.name}", metric.attribute, metric.mean, metric.median, metric.count
                    )
                )
        report.config_fingerprint = persistence.config_fingerprint(cfg)
        click.echo(report.to_lines(), nl=False)
        if out:
            Path(out).write_text(report.to_json())
    except click.UsageError:
        raise
    except Exception as exc:  # noqa: BLE001
        _fail(exc)


def random_code_model(model, seed: int):
    """Baseline that replaces encoded codes with fresh standard-normal draws."""
    from .encoder import EncodedAttributes
    from .field import LatentCodes

    class RandomCodeModel:
        def __init__(self, inner, seed):
            self._inner = inner
            self._gen = torch.Generator().manual_seed(seed)
            self.config = inner.config

        def encode(self, image):
            attrs = self._inner.encode(image)
            m = self.config.model
            return EncodedAttributes(
                codes=LatentCodes(
                    shape=torch.randn(m.shape_dim, generator=self._gen),
                    appearance=torch.randn(m.appearance_dim, generator=self._gen),
                ),
                pose=attrs.pose,
            )

        def render(self, attrs, resolution=None):
            return self._inner.render(attrs, resolution)

    return RandomCodeModel(model, seed)


@main.command()
@click.option("--checkpoint", type=click.Path())
@click.option("--image", "image_path", type=click.Path(exists=True), help="encode this image; omit for a random-code render")
@click.option("--out", required=True, type=click.Path())
@click.option("--azimuth", type=float, help="override camera azimuth (degrees)")
@click.option("--elevation", type=float, help="override camera elevation (degrees)")
@click.option("--radius", type=float, help="override camera radius")
@click.option("--resolution", type=int)
@click.option("--seed", default=7, show_default=True)
def render(checkpoint, image_path, out, azimuth, elevation, radius, resolution, seed) -> None:
    """Reconstruct an image (optionally orbiting the camera) and save a PNG."""
    try:
        from PIL import Image

        from .encoder import EncodedAttributes
        from .field import LatentCodes
        from .geometry import pose_angles, sample_camera_pose

        model = persistence.load_inference_model(_checkpoint_arg(checkpoint))
        if image_path:
            attrs = model.encode(data_mod.load_image(image_path, model.config.data.resolution))
        else:
            gen = torch.Generator().manual_seed(seed)
            m = model.config.model
            attrs = EncodedAttributes(
                codes=LatentCodes(
                    shape=torch.randn(m.shape_dim, generator=gen),
                    appearance=torch.randn(m.appearance_dim, generator=gen),
                ),
                pose=sample_camera_pose(
                    gen, model.config.camera.radius_range, model.config.camera.elevation_range_deg
                ),
            )
        if azimuth is not None or elevation is not None or radius is not None:
            az, el = pose_angles(attrs.pose)
            pose = model.orbit_pose(
                azimuth if azimuth is not None else az,
                elevation if elevation is not None else el,
                radius if radius is not None else attrs.pose.radius,
            )
            attrs = EncodedAttributes(codes=attrs.codes, pose=pose)
        rendered = model.render(attrs, resolution)
        Image.fromarray(data_mod.to_uint8(rendered)).save(out)
        click.echo(f"wrote {out}")
    except click.UsageError:
        raise
    except Exception as exc:  # noqa: BLE001
        _fail(exc)


@main.command()
@click.option("--checkpoint", type=click.Path())
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
@click.option("--static", "static_dir", type=click.Path(), help="serve a built frontend bundle from this directory")
def serve(checkpoint, host, port, static_dir) -> None:
    """Start the HTTP inference service."""
    try:
        from .service.app import load_and_serve

        load_and_serve(_checkpoint_arg(checkpoint), host, port, static_dir)
    except click.UsageError:
        raise
    except Exception as exc:  # noqa: BLE001
        _fail(exc)


@main.command("export-report")
@click.option("--report", "report_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
def export_report(report_path, out) -> None:
    """Convert a JSON eval report to the one-metric-per-line text format."""
    try:
        payload = json.loads(Path(report_path).read_text())
        lines = [
            f"{m['name']}\t{m['attribute'] or '-'}\t{m['mean']:.6f}\t{m['median']:.6f}\t{m['count']}"
            for m in payload["metrics"]
        ]
        Path(out).write_text("\n".join(lines) + "\n")
        click.echo(f"wrote {out}")
    except Exception as exc:  # noqa: BLE001
        _fail(exc)


if __name__ == "__main__":
    main()
