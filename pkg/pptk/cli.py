"""The ``pptk`` commands."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Sequence

import msgspec
import numpy as np

from . import __version__
from .app import Application
from .archgraph import ArchReport, analyze as analyze_graph, count_params
from .augment import AugmentSidecar, Pipeline, Sample, load_ppm
from .builders import HEAD_INPUTS, build_head, build_variant, head_channels
from .checks import run_checks
from .commands import command
from .context import Context
from .enums import Mode, ScheduleVariant
from .errors import ExpectationFailed
from .evalmap import evaluate, load_coco_annotations, load_coco_results
from .groups import Group
from .layers import ShapeNCHW
from .parameters import Argument, Option
from .postprocess import postprocess as postprocess_heads, scale_to_original, to_coco_results
from .refexec import forward as forward_graph, init_weights
from .schedule import PRESETS, lr_at, schedule_table
from .tensor import load_tensor, save_tensor

__all__ = ("Toolkit", "app", "main")

log = logging.getLogger(__name__)

PARAMS_TOLERANCE = 0.05
GFLOPS_TOLERANCE = 0.05
WIDENED_TOLERANCE = 0.10


class ForwardSummary(msgspec.Struct, frozen=True, kw_only=True):
    variant: str
    mode: str
    input_shape: list[int]
    outputs: dict[str, list[int]]


def _check_expectation(name: str, value: float, expected: float, tolerance: float) -> str | None:
    error = abs(value - expected) / expected
    log.info("%s: %.4g vs expected %.4g (%.2f%%, tolerance %.0f%%)", name, value, expected, 100 * error, 100 * tolerance)
    if error > tolerance:
        return f"{name} {value:.4g} is {100 * error:.1f}% away from {expected:.4g} (tolerance {100 * tolerance:.0f}%)"
    return None


class Toolkit(Group, title="PP-YOLOv2 toolkit"):
    @command(
        parameters=[
            Option("variant", config_key="variant", help="ablation row A-E"),
            Option("size", type=int, config_key="input_size", help="square input size (default: the variant's)"),
            Option("depth", type=int, config_key="depth", choices=(50, 101)),
            Option("num-classes", type=int, config_key="num_classes"),
            Option("frozen-stages", type=int, config_key="frozen_stages"),
            Option("expect", type=bool, help="compare against the variant's expected parameters and GFLOPs"),
            Option("out", help="ArchReport JSON path"),
        ]
    )
    def analyze(self, ctx: Context) -> None:
        """
        Count parameters and multiply-accumulates of a variant.

        Prints a summary; ``--out`` writes the full ArchReport. GFLOPs are
        compared as multiply-accumulates, the convention of the ablation table.
        """

        cfg = ctx.config
        variant = cfg.resolved_variant
        size = cfg.resolved_input_size
        graph = build_variant(
            variant.name, cfg.num_classes, cfg.depth, widths=cfg.neck_widths, frozen_stages=cfg.frozen_stages
        )
        report: ArchReport = analyze_graph(graph, ShapeNCHW(1, 3, size, size))

        in_channels = tuple(cfg.neck_widths)[::-1]
        with_iou, without_iou = (
            count_params(build_head(cfg.num_classes, 3, flag, in_channels=in_channels, inputs=HEAD_INPUTS[variant.neck]))
            for flag in (True, False)
        )
        ctx.echo(
            f"{variant.name} @{size}: {report.total_params / 1e6:.2f}M params "
            f"({report.trainable_params / 1e6:.2f}M trainable), "
            f"{report.gmacs:.2f} GMACs (ablation GFLOPs), {report.gflops:.2f} GFLOPs at 2 per MAC"
        )
        extra_channels = head_channels(cfg.num_classes, 3, True) - head_channels(cfg.num_classes, 3, False)
        ctx.echo(f"IoU-aware branch: +{extra_channels} head channels per level, +{with_iou - without_iou} params")
        if ctx.args.out:
            ctx.emit(report, out=ctx.args.out)

        if not ctx.args.expect:
            return

        tolerance = PARAMS_TOLERANCE
        if cfg.widths_overridden:
            log.warning("Neck widths are overridden; widening tolerances to %.0f%%", 100 * WIDENED_TOLERANCE)
            tolerance = WIDENED_TOLERANCE
        failures = [_check_expectation("params", report.total_params, variant.expected_params, tolerance)]
        if size == variant.input_size:
            gflops_tolerance = max(tolerance, GFLOPS_TOLERANCE)
            failures.append(_check_expectation("GFLOPs", report.gmacs, variant.expected_gflops, gflops_tolerance))
        else:
            log.warning(
                "No GFLOPs expectation for %s at %d (expected values are at %d)", variant.name, size, variant.input_size
            )

        failed = [f for f in failures if f is not None]
        if failed:
            raise ExpectationFailed(failed)
        ctx.echo("expectations met")

    @command(
        parameters=[
            Option("points", type=int, default=100, help="random points per gradient check"),
            Option("tolerance", type=float, default=1e-4, help="relative error bound of the gradient checks"),
            Option("inject-wrong-sign", type=bool, help="negate the IoU-aware gradient (the check must fail)"),
            Option("out", help="report JSON path"),
        ]
    )
    def losscheck(self, ctx: Context) -> None:
        """Check analytic gradients of the IoU-aware loss, mish and silu against finite differences."""

        report = run_checks(
            ctx.config.seed,
            ctx.args.points,
            inject_wrong_sign=ctx.args.inject_wrong_sign,
            tolerance=ctx.args.tolerance,
        )
        ctx.emit(report, out=ctx.args.out)
        if not report.passed:
            raise ExpectationFailed(report.failures())

    @command(
        parameters=[
            Option("variant", config_key="variant"),
            Option("size", type=int, config_key="input_size"),
            Option("num-classes", type=int, config_key="num_classes"),
            Option("input", help="NCHW PPTK tensor (default: a seeded random image)"),
            Option("mode", choices=[m.value for m in Mode], default=Mode.eval.value),
            Option("out", help="directory for one PPTK tensor per head output and forward.json"),
        ]
    )
    def forward(self, ctx: Context) -> None:
        """Run the reference executor over a variant graph with deterministic weights."""

        cfg = ctx.config
        size = cfg.resolved_input_size
        graph = build_variant(cfg.variant, cfg.num_classes, cfg.depth, widths=cfg.neck_widths)
        rng = ctx.rng()
        if ctx.args.input:
            image = load_tensor(ctx.args.input)
        else:
            image = rng.random((1, 3, size, size), dtype=np.float32)

        mode = Mode(ctx.args.mode)
        outputs = forward_graph(graph, {graph.inputs[0]: image}, mode, rng, weights=init_weights(graph, cfg.seed))
        summary = ForwardSummary(
            variant=cfg.resolved_variant.name,
            mode=mode.value,
            input_shape=list(image.shape),
            outputs={name: list(value.shape) for name, value in outputs.items()},
        )
        if ctx.args.out:
            out = Path(ctx.args.out)
            out.mkdir(parents=True, exist_ok=True)
            for name, value in outputs.items():
                save_tensor(out / f"{name}.pptk", value)
            ctx.emit(summary, out=out / "forward.json")
        else:
            ctx.emit(summary)

    @command(
        parameters=[
            Argument("image", help="RGB image (binary PPM or any format Pillow reads)"),
            Option("annotations", help="COCO annotation JSON holding the image's boxes"),
            Option("image-id", type=int, default=0),
            Option("mixup-image", help="second image for mixup"),
            Option("mixup-image-id", type=int, default=0),
            Option("variant", config_key="variant", help="picks the training size list"),
            Option("sizes", type=str, help="comma-separated size list, e.g. 320,352"),
            Option("out", help="directory for image.pptk and sidecar.json"),
        ]
    )
    def augment(self, ctx: Context) -> None:
        """Run the training-time preprocessing pipeline on one image."""

        cfg = ctx.config
        dataset = load_coco_annotations(ctx.args.annotations) if ctx.args.annotations else None

        def load(path: str, image_id: int) -> Sample:
            image = load_ppm(path)
            if dataset is None:
                return Sample(image)
            gts = [g for g in dataset.ground_truths() if g.image_id == image_id]
            return Sample(image, [tuple(g.bbox) for g in gts], [g.category_id for g in gts])

        sizes = cfg.resolved_train_sizes
        if ctx.args.sizes:
            sizes = tuple(int(s) for s in ctx.args.sizes.split(","))
        pipeline = Pipeline(
            sizes,
            p=cfg.augment.p,
            mixup_alpha=cfg.augment.mixup_alpha,
            mixup_beta=cfg.augment.mixup_beta,
            max_expand_ratio=cfg.augment.max_expand_ratio,
        )

        sample = load(ctx.args.image, ctx.args.image_id)
        other = load(ctx.args.mixup_image, ctx.args.mixup_image_id) if ctx.args.mixup_image else None
        result = pipeline(sample, ctx.rng(), other)
        sidecar = AugmentSidecar.from_sample(result, seed=cfg.seed, size=result.height)

        if ctx.args.out:
            out = Path(ctx.args.out)
            out.mkdir(parents=True, exist_ok=True)
            save_tensor(out / "image.pptk", result.image)
            ctx.emit(sidecar, out=out / "sidecar.json")
        else:
            ctx.emit(sidecar)

    @command(
        parameters=[
            Argument("heads", many=True, help="one PPTK head tensor per level, finest stride first"),
            Option("size", type=int, config_key="input_size"),
            Option("variant", config_key="variant"),
            Option("num-classes", type=int, config_key="num_classes"),
            Option("alpha", type=float, config_key="postprocess.alpha"),
            Option("score-thresh", type=float, config_key="postprocess.score_thresh"),
            Option("iou-thresh", type=float, config_key="postprocess.iou_thresh"),
            Option("max-dets", type=int, config_key="postprocess.max_dets"),
            Option("original-size", type=str, help="HEIGHT,WIDTH of the source image to rescale boxes to"),
            Option("image-id", type=int, help="write COCO result records for this image id"),
            Option("out", help="detections JSON path"),
        ]
    )
    def postprocess(self, ctx: Context) -> None:
        """Decode head tensors, fuse scores and run per-class NMS."""

        cfg = ctx.config
        size = cfg.resolved_input_size
        heads = [load_tensor(path) for path in ctx.args.heads]
        dets = postprocess_heads(
            heads,
            size,
            num_classes=cfg.num_classes,
            iou_aware=cfg.resolved_iou_aware,
            alpha=cfg.postprocess.alpha,
            score_thresh=cfg.postprocess.score_thresh,
            iou_thresh=cfg.postprocess.iou_thresh,
            max_dets=cfg.postprocess.max_dets,
        )
        if ctx.args.original_size:
            h, w = (int(v) for v in ctx.args.original_size.split(","))
            dets = scale_to_original(dets, size, (h, w))

        if ctx.args.image_id is not None:
            ctx.emit(to_coco_results(dets, ctx.args.image_id), out=ctx.args.out)
        else:
            ctx.emit(dets, out=ctx.args.out)

    @command(
        parameters=[
            Option("variant", config_key="schedule.variant", choices=[v.value for v in ScheduleVariant]),
            Option("preset", config_key="schedule_preset", choices=list(PRESETS)),
            Option("at", type=int, help="print the learning rate of one iteration"),
            Option("stride", type=int, default=1000, help="iterations between table rows"),
            Option("out", help="CSV path for the (iteration, lr) table"),
        ]
    )
    def schedule(self, ctx: Context) -> None:
        """Print or tabulate the learning-rate schedule."""

        cfg = ctx.config.resolved_schedule
        if ctx.args.at is not None:
            ctx.echo(np.format_float_positional(lr_at(cfg, ctx.args.at), trim="-"))
            if not ctx.args.out:
                return
        ctx.emit((("iteration", "lr"), schedule_table(cfg, ctx.args.stride)), kind="csv", out=ctx.args.out)

    @command(
        "eval",
        parameters=[
            Option("annotations", required=True, help="COCO annotation JSON"),
            Option("results", required=True, help="COCO result JSON"),
            Option("out", help="MetricsReport JSON path"),
        ],
    )
    def coco_eval(self, ctx: Context) -> None:
        """Compute COCO box AP, AP50, AP75, APS, APM and APL."""

        dataset = load_coco_annotations(ctx.args.annotations)
        dets = load_coco_results(ctx.args.results)
        names = {c.id: c.name for c in dataset.categories if c.name}
        report = evaluate(dets, dataset.ground_truths(), category_names=names)
        ctx.emit(report, out=ctx.args.out)


app = Application(prog="pptk", description="PP-YOLOv2 detector construction kit", version=__version__)
app.add_group(Toolkit(app))


def main(argv: Sequence[str] | None = None) -> int:
    return app.run(argv)
