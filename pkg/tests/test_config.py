from __future__ import annotations

from pathlib import Path

import pytest

from pptk import (
    ConverterNotFound,
    InvalidConfig,
    InvalidOverride,
    RunConfig,
    ScheduleVariant,
    apply_override,
    converter_for,
    resolve_config,
)


def test_defaults_follow_variant_e():
    cfg = resolve_config()
    assert cfg == RunConfig()
    assert cfg.resolved_variant.name == "E"
    assert cfg.resolved_input_size == 640
    assert cfg.resolved_iou_aware
    assert cfg.resolved_train_sizes[-1] == 768
    assert not cfg.widths_overridden


def test_layer_precedence(tmp_path: Path):
    path = tmp_path / "run.json"
    path.write_bytes(b'{"variant": "B", "seed": 3, "postprocess": {"alpha": 0.25, "max_dets": 50}}')

    from_file = resolve_config(config_file=path)
    assert (from_file.variant, from_file.seed) == ("B", 3)
    assert from_file.postprocess.alpha == 0.25
    # sibling fields of a partially given section keep their defaults
    assert from_file.postprocess.iou_thresh == 0.45

    flagged = resolve_config(config_file=path, flags={"variant": "C", "seed": None})
    assert (flagged.variant, flagged.seed) == ("C", 3)

    overridden = resolve_config(config_file=path, flags={"variant": "C"}, overrides=["variant=A", "postprocess.alpha=0.5"])
    assert overridden.variant == "A"
    assert overridden.postprocess.alpha == 0.5
    assert overridden.postprocess.max_dets == 50


def test_variant_drives_derived_values():
    cfg = resolve_config(flags={"variant": "b"})
    assert cfg.resolved_input_size == 608
    assert not cfg.resolved_iou_aware
    assert resolve_config(overrides=["variant=B", "postprocess.iou_aware=true"]).resolved_iou_aware


def test_typed_overrides():
    cfg = resolve_config(
        overrides=[
            "input_size=608",
            "augment.sizes=320, 352",
            "schedule.variant=cosine",
            "schedule.milestones=100000,200000",
            "neck_widths=1024,512,256",
        ]
    )
    assert cfg.resolved_input_size == 608
    assert cfg.resolved_train_sizes == (320, 352)
    assert cfg.schedule.variant is ScheduleVariant.cosine
    assert cfg.schedule.milestones == (100_000, 200_000)
    assert cfg.widths_overridden


def test_schedule_preset():
    cfg = resolve_config(overrides=["schedule_preset=minitrain", "schedule.variant=cosine"])
    assert cfg.resolved_schedule.total_iters == 90_000
    assert cfg.resolved_schedule.variant is ScheduleVariant.cosine


@pytest.mark.parametrize("override", ["bogus=1", "postprocess.bogus=1", "seed", "=3", "seed=abc", "schedule.variant=linear"])
def test_bad_overrides(override: str):
    with pytest.raises(InvalidOverride):
        apply_override({}, override)


@pytest.mark.parametrize("override", ["seed=-1", "input_size=100"])
def test_invalid_values(override: str):
    with pytest.raises(InvalidConfig):
        resolve_config(overrides=[override])


def test_unknown_field_in_file(tmp_path: Path):
    path = tmp_path / "run.json"
    path.write_bytes(b'{"varient": "B"}')
    with pytest.raises(InvalidConfig):
        resolve_config(config_file=path)


def test_malformed_file(tmp_path: Path):
    path = tmp_path / "run.json"
    path.write_bytes(b"{")
    with pytest.raises(InvalidConfig):
        resolve_config(config_file=path)


def test_missing_file_is_an_os_error(tmp_path: Path):
    with pytest.raises(OSError):
        resolve_config(config_file=tmp_path / "absent.json")


@pytest.mark.parametrize(
    "annotation, text, expected",
    [
        (int, "1_000", 1000),
        (float, "1e-3", 0.001),
        (float, ".5", 0.5),
        (bool, "Yes", True),
        (bool, "off", False),
        (int | None, "7", 7),
        (tuple[int, ...], "320,352", (320, 352)),
        (ScheduleVariant, "step", "step"),
    ],
)
def test_converters(annotation, text: str, expected):
    assert converter_for(annotation)("key", text) == expected


@pytest.mark.parametrize("annotation, text", [(int, "1.5"), (float, "abc"), (bool, "maybe"), (tuple[int, ...], "1,,2")])
def test_converters_reject(annotation, text: str):
    with pytest.raises(InvalidOverride):
        converter_for(annotation)("key", text)


def test_no_converter():
    with pytest.raises(ConverterNotFound):
        converter_for(complex)
