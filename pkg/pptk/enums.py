from enum import Enum

__all__ = ("ActivationKind", "Stage", "Mode", "ScheduleVariant", "MatchLabel", "ExitCode")


class ActivationKind(Enum):
    relu = "relu"
    leaky_relu = "leaky_relu"
    mish = "mish"
    silu = "silu"
    sigmoid = "sigmoid"
    linear = "linear"


class Stage(Enum):
    stem = "stem"
    res2 = "res2"
    res3 = "res3"
    res4 = "res4"
    res5 = "res5"
    classifier = "classifier"
    neck = "neck"
    head = "head"


# backbone stages in freezing order; frozen_stages=k freezes the stem and the first k
BACKBONE_STAGES = (Stage.stem, Stage.res2, Stage.res3, Stage.res4, Stage.res5)


class Mode(Enum):
    train = "train"
    eval = "eval"


class ScheduleVariant(Enum):
    step = "step"
    cosine = "cosine"


class MatchLabel(Enum):
    ignored = -1
    negative = 0
    positive = 1


class ExitCode(Enum):
    OK = 0
    CHECK_FAILED = 1
    USAGE = 2
    IO = 3
    VALIDATION = 4
    NUMERIC = 5
