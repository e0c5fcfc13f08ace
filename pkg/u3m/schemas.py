# -*- coding: utf-8 -*-
#
# Copyright (C) 2024 Graz University of Technology.
#
# u3m-segmentation is free software; you can redistribute it and/or modify
# it under the terms of the MIT License; see LICENSE file for more details.

"""Schemas for validating model configuration files.

A configuration file is flat text made of ``[section]`` headers and
``key = value`` lines, ``#`` and ``;`` start comments and lists are comma
separated. Keys before the first header belong to ``[model]``. Missing keys
fall back to :mod:`u3m.config`, unknown keys are rejected.

>>> parse_config_text("modalities = 2\\nin_channels = 3, 1\\n").in_channels
(3, 1)
"""

import json
from collections.abc import Iterator
from dataclasses import dataclass, replace
from pathlib import Path
from types import MappingProxyType

from marshmallow import (
    RAISE,
    Schema,
    ValidationError,
    post_load,
    pre_load,
    validates_schema,
)
from marshmallow.fields import Boolean, Field, Float, Integer, Nested, String
from marshmallow.validate import OneOf, Range

from . import config
from .encoder import encoder_violations
from .errors import ConfigError
from .fusion import VARIANTS
from .types import (
    NUM_STAGES,
    DataConfig,
    EncoderConfig,
    FusionConfig,
    HeadConfig,
    ModelConfig,
    TrainConfig,
)

SECTIONS = ("model", "encoder", "fusion", "head", "train", "data")
"""Section names of the configuration file, in documentation order."""


class IntListField(Field):
    """Comma separated integers, or a JSON list of integers."""

    default_error_messages = MappingProxyType(
        {"invalid": "Value {value!r} is not a comma separated list of integers."},
    )

    def _deserialize(
        self,
        value: str | list | None,
        attr: str | None,
        data: dict | None,
        **kwargs: dict,
    ) -> tuple[int, ...]:
        items = value if isinstance(value, list | tuple) else str(value).split(",")
        try:
            values = tuple(int(str(item).strip()) for item in items)
        except ValueError as error:
            msg = "invalid"
            raise self.make_error(msg, value=value) from error
        if not values:
            msg = "invalid"
            raise self.make_error(msg, value=value)
        return values

    def _serialize(
        self,
        value: tuple | None,
        attr: str | None,
        obj: object,
        **kwargs: dict,
    ) -> list | None:
        return None if value is None else list(value)


class StringListField(Field):
    """Comma separated names, or a JSON list of names."""

    def _deserialize(
        self,
        value: str | list | None,
        attr: str | None,
        data: dict | None,
        **kwargs: dict,
    ) -> tuple[str, ...]:
        items = value if isinstance(value, list | tuple) else str(value).split(",")
        return tuple(str(item).strip() for item in items if str(item).strip())

    def _serialize(
        self,
        value: tuple | None,
        attr: str | None,
        obj: object,
        **kwargs: dict,
    ) -> list | None:
        return None if value is None else list(value)


def _positive(key: str, values: tuple[int, ...]) -> None:
    if min(values) < 1:
        msg = f"entries must be positive, got {values}"
        raise ValidationError(msg, key)


class ModelSectionSchema(Schema):
    """``[model]`` section."""

    class Meta:
        """Meta."""

        unknown = RAISE

    modalities = Integer(load_default=config.U3M_MODALITIES, validate=Range(min=1))
    in_channels = IntListField(load_default=config.U3M_IN_CHANNELS)
    num_classes = Integer(load_default=config.U3M_NUM_CLASSES, validate=Range(min=2))
    init_std = Float(
        load_default=config.U3M_INIT_STD,
        validate=Range(min=0, min_inclusive=False),
    )
    class_names = StringListField(load_default=())

    @validates_schema
    def validate_channels(self, data: dict, **_: dict) -> None:
        """Check one channel count per modality, or a single broadcast one."""
        channels, modalities = data["in_channels"], data["modalities"]
        _positive("in_channels", channels)
        if len(channels) not in (1, modalities):
            msg = f"{len(channels)} entries given for {modalities} modalities"
            raise ValidationError(msg, "in_channels")
        names = data["class_names"]
        if names and len(names) != data["num_classes"]:
            msg = f"{len(names)} names given for {data['num_classes']} classes"
            raise ValidationError(msg, "class_names")

    @post_load
    def broadcast(self, data: dict, **_: dict) -> dict:
        """Repeat a single channel count for every modality."""
        if len(data["in_channels"]) == 1:
            data["in_channels"] = data["in_channels"] * data["modalities"]
        return data


class EncoderSectionSchema(Schema):
    """``[encoder]`` section."""

    class Meta:
        """Meta."""

        unknown = RAISE

    stage_channels = IntListField(load_default=config.U3M_STAGE_CHANNELS)
    stage_depths = IntListField(load_default=config.U3M_STAGE_DEPTHS)
    heads = IntListField(load_default=config.U3M_HEADS)
    sr_ratios = IntListField(load_default=config.U3M_SR_RATIOS)
    patch_sizes = IntListField(load_default=config.U3M_PATCH_SIZES)
    strides = IntListField(load_default=config.U3M_STRIDES)
    mlp_ratio = Integer(load_default=config.U3M_MLP_RATIO, validate=Range(min=1))

    @validates_schema
    def validate_stages(self, data: dict, **_: dict) -> None:
        """Check one positive entry per stage."""
        for key in self.fields:
            if key == "mlp_ratio":
                continue
            if len(data[key]) != NUM_STAGES:
                msg = f"needs {NUM_STAGES} entries, got {len(data[key])}"
                raise ValidationError(msg, key)
            _positive(key, data[key])

    @post_load
    def make_config(self, data: dict, **_: dict) -> EncoderConfig:
        """Build the encoder config."""
        return EncoderConfig(**data)


class FusionSectionSchema(Schema):
    """``[fusion]`` section."""

    class Meta:
        """Meta."""

        unknown = RAISE

    pool_bins = IntListField(load_default=config.U3M_POOL_BINS)
    conv_kernels = IntListField(load_default=config.U3M_CONV_KERNELS)
    ca_reduction = Integer(load_default=config.U3M_CA_REDUCTION, validate=Range(min=1))
    pool_bins_mode = String(
        load_default=config.U3M_POOL_BINS_MODE,
        validate=OneOf(("clip", "strict")),
    )
    variant = String(load_default=config.U3M_FUSION_VARIANT, validate=OneOf(VARIANTS))

    @validates_schema
    def validate_branches(self, data: dict, **_: dict) -> None:
        """Check ascending unique bins and odd kernels."""
        bins = data["pool_bins"]
        _positive("pool_bins", bins)
        if list(bins) != sorted(set(bins)):
            msg = f"bins {bins} must be ascending without repetition"
            raise ValidationError(msg, "pool_bins")
        kernels = data["conv_kernels"]
        _positive("conv_kernels", kernels)
        if any(kernel % 2 == 0 for kernel in kernels):
            msg = f"kernels {kernels} must be odd"
            raise ValidationError(msg, "conv_kernels")

    @post_load
    def make_config(self, data: dict, **_: dict) -> FusionConfig:
        """Build the fusion config."""
        return FusionConfig(**data)


class HeadSectionSchema(Schema):
    """``[head]`` section."""

    class Meta:
        """Meta."""

        unknown = RAISE

    decoder_dim = Integer(load_default=config.U3M_DECODER_DIM, validate=Range(min=1))


class TrainSectionSchema(Schema):
    """``[train]`` section."""

    class Meta:
        """Meta."""

        unknown = RAISE

    lr = Float(
        load_default=config.U3M_LR,
        validate=Range(min=0, min_inclusive=False),
    )
    batch_size = Integer(load_default=config.U3M_BATCH_SIZE, validate=Range(min=1))
    epochs = Integer(load_default=config.U3M_EPOCHS, validate=Range(min=1))
    max_steps = Integer(load_default=config.U3M_MAX_STEPS, validate=Range(min=0))
    seed = Integer(load_default=config.U3M_SEED, validate=Range(min=0))
    beta1 = Float(
        load_default=config.U3M_ADAM_BETAS[0],
        validate=Range(min=0, max=1, max_inclusive=False),
    )
    beta2 = Float(
        load_default=config.U3M_ADAM_BETAS[1],
        validate=Range(min=0, max=1, max_inclusive=False),
    )
    adam_eps = Float(
        load_default=config.U3M_ADAM_EPS,
        validate=Range(min=0, min_inclusive=False),
    )
    schedule = String(
        load_default=config.U3M_SCHEDULE,
        validate=OneOf(("constant", "cosine")),
    )
    freeze_encoders = Boolean(load_default=config.U3M_FREEZE_ENCODERS)
    hflip = Boolean(load_default=config.U3M_AUGMENT["hflip"])
    rotate = Boolean(load_default=config.U3M_AUGMENT["rotate"])
    scale = Boolean(load_default=config.U3M_AUGMENT["scale"])
    ignore_index = Integer(load_default=config.U3M_IGNORE_INDEX)

    @post_load
    def make_config(self, data: dict, **_: dict) -> TrainConfig:
        """Build the training config."""
        return TrainConfig(**data)


class DataSectionSchema(Schema):
    """``[data]`` section."""

    class Meta:
        """Meta."""

        unknown = RAISE

    height = Integer(load_default=config.U3M_IMAGE_SIZE[0], validate=Range(min=1))
    width = Integer(load_default=config.U3M_IMAGE_SIZE[1], validate=Range(min=1))
    pad_to_32 = Boolean(load_default=config.U3M_PAD_TO_32)

    @post_load
    def make_config(self, data: dict, **_: dict) -> DataConfig:
        """Build the data config."""
        return DataConfig(**data)


class ModelConfigSchema(Schema):
    """Whole configuration, one nested schema per section."""

    class Meta:
        """Meta."""

        unknown = RAISE

    model = Nested(ModelSectionSchema)
    encoder = Nested(EncoderSectionSchema)
    fusion = Nested(FusionSectionSchema)
    head = Nested(HeadSectionSchema)
    train = Nested(TrainSectionSchema)
    data = Nested(DataSectionSchema)

    @pre_load
    def fill_sections(self, data: dict, **_: dict) -> dict:
        """Treat a missing section as an empty one."""
        return {section: {} for section in SECTIONS} | data

    @post_load
    def make_config(self, data: dict, **_: dict) -> ModelConfig:
        """Assemble the model config."""
        model = data["model"]
        return ModelConfig(
            modalities=model["modalities"],
            in_channels=model["in_channels"],
            init_std=model["init_std"],
            class_names=model["class_names"],
            encoder=data["encoder"],
            fusion=data["fusion"],
            head=HeadConfig(
                decoder_dim=data["head"]["decoder_dim"],
                num_classes=model["num_classes"],
            ),
            train=data["train"],
            data=data["data"],
        )


def config_violations(cfg: ModelConfig) -> Iterator[tuple[str, str, str]]:
    """Yield ``(section, key, message)`` for every cross-section violation."""
    if len(cfg.in_channels) != cfg.modalities:
        msg = f"{len(cfg.in_channels)} entries given for {cfg.modalities} modalities"
        yield "model", "in_channels", msg
    height, width = cfg.data.height, cfg.data.width
    for key, message in encoder_violations(cfg.encoder, height, width):
        section = "data" if key == "strides" and "input" in message else "encoder"
        yield section, "height" if section == "data" else key, message
    for index, channels in enumerate(cfg.encoder.stage_channels):
        if channels % cfg.fusion.ca_reduction:
            msg = (
                f"stage {index + 1}: {channels} channels not divisible by "
                f"{cfg.fusion.ca_reduction}"
            )
            yield "fusion", "ca_reduction", msg
    if cfg.fusion.pool_bins_mode == "strict" and height % 32 == 0 == width % 32:
        smallest = min(height, width) // cfg.encoder.downsampling(NUM_STAGES)
        if max(cfg.fusion.pool_bins) > smallest:
            msg = f"bin {max(cfg.fusion.pool_bins)} exceeds the {smallest} px stage"
            yield "fusion", "pool_bins", msg


def check_model_config(cfg: ModelConfig) -> ModelConfig:
    """Reject a config violating any invariant, before any compute."""
    for section, key, message in config_violations(cfg):
        msg = f"[{section}] {key}: {message}"
        raise ConfigError(msg)
    return cfg


@dataclass(frozen=True)
class ConfigText:
    """Raw sections of a configuration file with the line of every entry."""

    sections: dict[str, dict[str, str]]
    lines: dict[tuple[str, str], int]

    def line(self, section: str, key: str = "") -> int:
        """Get the line of ``key``, or of the section header."""
        return self.lines.get((section, key), self.lines.get((section, ""), 0))


def read_config_text(text: str) -> ConfigText:
    """Split configuration text into sections and keys."""
    sections: dict[str, dict[str, str]] = {}
    lines: dict[tuple[str, str], int] = {}
    section = "model"
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SECTIONS:
                msg = f"line {number}: unknown section [{section}]"
                raise ConfigError(msg)
            lines.setdefault((section, ""), number)
            sections.setdefault(section, {})
            continue
        key, separator, value = line.partition("=")
        key = key.strip()
        if not separator or not key:
            msg = f"line {number}: expected 'key = value', got {raw.strip()!r}"
            raise ConfigError(msg)
        if key in sections.get(section, {}):
            msg = f"line {number}: [{section}] {key} is set twice"
            raise ConfigError(msg)
        sections.setdefault(section, {})[key] = value.strip()
        lines[(section, key)] = number
    return ConfigText(sections, lines)


def _first_error(messages: dict) -> tuple[str, str, str]:
    section = next(iter(messages))
    detail = messages[section]
    if not isinstance(detail, dict):
        return section, "", " ".join(map(str, detail))
    key = next(iter(detail))
    problem = detail[key]
    text = " ".join(map(str, problem)) if isinstance(problem, list) else str(problem)
    return section, "" if key == "_schema" else key, text


def parse_config_text(text: str, source: str = "<config>") -> ModelConfig:
    """Parse and validate configuration text."""
    raw = read_config_text(text)
    try:
        cfg = ModelConfigSchema().load(raw.sections)
    except ValidationError as error:
        section, key, problem = _first_error(error.messages)
        where = f"[{section}] {key}".rstrip()
        msg = f"{source}:{raw.line(section, key)}: {where}: {problem}"
        raise ConfigError(msg) from error
    for section, key, problem in config_violations(cfg):
        msg = f"{source}:{raw.line(section, key)}: [{section}] {key}: {problem}"
        raise ConfigError(msg)
    return cfg


def parse_config(path: Path) -> ModelConfig:
    """Parse and validate the configuration file at ``path``."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as error:
        msg = f"cannot read config {path}: {error}"
        raise ConfigError(msg) from error
    return parse_config_text(text, str(path))


def config_to_dict(cfg: ModelConfig) -> dict:
    """Dump ``cfg`` section by section."""
    return {
        "model": ModelSectionSchema().dump(cfg),
        "encoder": EncoderSectionSchema().dump(cfg.encoder),
        "fusion": FusionSectionSchema().dump(cfg.fusion),
        "head": HeadSectionSchema().dump(cfg.head),
        "train": TrainSectionSchema().dump(cfg.train),
        "data": DataSectionSchema().dump(cfg.data),
    }


def config_to_json(cfg: ModelConfig) -> str:
    """Serialize ``cfg`` as canonical JSON."""
    return json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))


def config_from_json(text: str) -> ModelConfig:
    """Load a config serialized by :func:`config_to_json`."""
    try:
        cfg = ModelConfigSchema().load(json.loads(text))
    except (ValueError, ValidationError) as error:
        msg = f"stored configuration is invalid: {error}"
        raise ConfigError(msg) from error
    return check_model_config(cfg)


def with_seed(cfg: ModelConfig, seed: int | None) -> ModelConfig:
    """Override the training seed when ``seed`` is given."""
    if seed is None:
        return cfg
    return replace(cfg, train=replace(cfg.train, seed=seed))
