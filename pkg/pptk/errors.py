from __future__ import annotations

from typing import TYPE_CHECKING, Any, Sequence

if TYPE_CHECKING:
    from .converters import Converter

__all__ = (
    "PPTKException",
    "GraphException",
    "UnknownNode",
    "DuplicateNode",
    "GraphCycle",
    "ShapeMismatch",
    "InvalidLayer",
    "TensorException",
    "TensorShapeError",
    "TensorFormatError",
    "MissingEntry",
    "LossException",
    "InvalidSoftLabel",
    "ZeroAreaBox",
    "GeometryMismatch",
    "ScheduleException",
    "IterationOutOfRange",
    "InvalidScheduleConfig",
    "AugmentException",
    "SampleShapeMismatch",
    "InvalidBlockSize",
    "ConfigException",
    "UnknownVariant",
    "ConverterNotFound",
    "InvalidOverride",
    "InvalidConfig",
    "DataException",
    "AnnotationFormatError",
    "CommandException",
    "CommandAlreadyAdded",
    "ExpectationFailed",
)


class PPTKException(Exception):
    ...


class GraphException(PPTKException):
    ...


class UnknownNode(GraphException):
    def __init__(self, node: str, missing: str) -> None:
        super().__init__(f"Node {node!r} references {missing!r}, which is neither a graph input nor an earlier node")
        self.node = node
        self.missing = missing


class DuplicateNode(GraphException):
    def __init__(self, node: str) -> None:
        super().__init__(f"A node named {node!r} already exists in the graph")
        self.node = node


class GraphCycle(GraphException):
    def __init__(self, nodes: Sequence[str]) -> None:
        super().__init__(f"Graph is not a topologically ordered DAG; offending nodes: {', '.join(map(repr, nodes))}")
        self.nodes = list(nodes)


class ShapeMismatch(GraphException):
    def __init__(self, node: str, reason: str) -> None:
        super().__init__(f"Shape mismatch at node {node!r}: {reason}")
        self.node = node
        self.reason = reason


class InvalidLayer(GraphException):
    def __init__(self, node: str, reason: str) -> None:
        super().__init__(f"Invalid layer {node!r}: {reason}")
        self.node = node
        self.reason = reason


class TensorException(PPTKException):
    ...


class TensorShapeError(TensorException):
    def __init__(self, op: str, expected: Any, received: Any) -> None:
        super().__init__(f"{op}: expected shape {expected!r}, received {received!r}")
        self.op = op
        self.expected = expected
        self.received = received


class TensorFormatError(TensorException):
    def __init__(self, path: str, offset: int, reason: str) -> None:
        super().__init__(f"{path}: byte offset {offset}: {reason}")
        self.path = path
        self.offset = offset


class MissingEntry(TensorException):
    def __init__(self, name: str) -> None:
        super().__init__(f"No entry tensor was given for graph input {name!r}")
        self.name = name


class LossException(PPTKException):
    ...


class InvalidSoftLabel(LossException):
    def __init__(self, value: float) -> None:
        super().__init__(f"Soft label t must lie in [0, 1], received {value!r}")
        self.value = value


class ZeroAreaBox(LossException):
    def __init__(self, index: int, box: Any) -> None:
        super().__init__(f"Ground truth #{index} has zero area: {box!r}")
        self.index = index


class GeometryMismatch(LossException):
    def __init__(self, level: int, reason: str) -> None:
        super().__init__(f"Head output at level {level} does not match the matching geometry: {reason}")
        self.level = level


class ScheduleException(PPTKException):
    ...


class IterationOutOfRange(ScheduleException):
    def __init__(self, iteration: int, total: int) -> None:
        super().__init__(f"Iteration {iteration} is outside [0, {total}]")
        self.iteration = iteration


class InvalidScheduleConfig(ScheduleException):
    ...


class AugmentException(PPTKException):
    ...


class SampleShapeMismatch(AugmentException):
    def __init__(self, first: Any, second: Any) -> None:
        super().__init__(f"Samples must share an image shape to be mixed, received {first!r} and {second!r}")


class InvalidBlockSize(AugmentException):
    def __init__(self, block_size: int, reason: str) -> None:
        super().__init__(f"Invalid DropBlock block size {block_size}: {reason}")
        self.block_size = block_size


class ConfigException(PPTKException):
    ...


class UnknownVariant(ConfigException):
    def __init__(self, name: str, known: Sequence[str]) -> None:
        super().__init__(f"Unknown variant {name!r}. Expected one of {', '.join(known)}")
        self.name = name


class ConverterNotFound(ConfigException):
    def __init__(self, annotation: Any) -> None:
        super().__init__(f"No converter is registered for {annotation!r}")


class InvalidOverride(ConfigException):
    def __init__(self, key: str, value: str, converter: Converter | None = None) -> None:
        suffix = "" if converter is None else f" (expected to match {converter.regex!r})"
        super().__init__(f"Invalid override {key}={value!r}{suffix}")
        self.key = key
        self.value = value


class InvalidConfig(ConfigException):
    def __init__(self, source: str, reason: str) -> None:
        super().__init__(f"Invalid configuration from {source}: {reason}")
        self.source = source


class DataException(PPTKException):
    ...


class AnnotationFormatError(DataException):
    def __init__(self, path: str, offset: int | None, reason: str) -> None:
        where = path if offset is None else f"{path}: byte offset {offset}"
        super().__init__(f"{where}: {reason}")
        self.path = path
        self.offset = offset


class CommandException(PPTKException):
    ...


class CommandAlreadyAdded(CommandException):
    def __init__(self, name: str) -> None:
        super().__init__(f"The {name!r} command was already added")
        self.name = name


class ExpectationFailed(CommandException):
    def __init__(self, failures: Sequence[str]) -> None:
        super().__init__("; ".join(failures))
        self.failures = list(failures)
