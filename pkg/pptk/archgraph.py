"""
Declarative detector graphs and their static accounting.

A :class:`GraphSpec` is an ordered tuple of layer nodes. Everything here is a
pure function of the graph: validation, shape inference, parameter and
FLOPs counting and the combined :class:`ArchReport`.
"""

from __future__ import annotations

import logging
from typing import Iterable, Mapping, Sequence, Type

import msgspec

from .enums import BACKBONE_STAGES, Stage
from .errors import DuplicateNode, GraphCycle, InvalidLayer, ShapeMismatch, UnknownNode
from .layers import DropBlock, Layer, LayerSpec, ShapeNCHW

__all__ = (
    "GraphSpec",
    "NodeReport",
    "ArchReport",
    "validate",
    "infer_shapes",
    "count_params",
    "count_flops",
    "count_macs",
    "frozen_stage_set",
    "per_stage_params",
    "analyze",
    "remove_kinds",
    "compose",
)

log = logging.getLogger(__name__)


class GraphSpec(msgspec.Struct, frozen=True, kw_only=True):
    nodes: tuple[Layer, ...]
    inputs: tuple[str, ...] = ("image",)
    outputs: tuple[str, ...] = ()
    frozen_stages: int = 0
    name: str = ""

    def node(self, name: str) -> Layer:
        for node in self.nodes:
            if node.name == name:
                return node
        raise KeyError(name)

    def of_kind(self, *kinds: Type[LayerSpec]) -> list[Layer]:
        return [node for node in self.nodes if isinstance(node, kinds)]

    def with_frozen_stages(self, frozen_stages: int) -> GraphSpec:
        return msgspec.structs.replace(self, frozen_stages=frozen_stages)

    def __len__(self) -> int:
        return len(self.nodes)

    def __repr__(self) -> str:
        return (
            f"<{self.__class__.__name__} name={self.name!r} nodes={len(self.nodes)} "
            f"inputs={list(self.inputs)!r} outputs={list(self.outputs)!r} frozen_stages={self.frozen_stages}>"
        )


class NodeReport(msgspec.Struct, frozen=True):
    name: str
    kind: str
    stage: str
    out_shape: list[int]
    params: int
    flops: int
    macs: int


class ArchReport(msgspec.Struct, frozen=True, kw_only=True):
    name: str
    input_shape: list[int]
    total_params: int
    trainable_params: int
    bn_statistics: int
    # flops counts a multiply-accumulate as two operations; ablation GFLOPs compare against gmacs
    flops: int
    gflops: float
    macs: int
    gmacs: float
    per_stage: dict[str, int]
    per_node: list[NodeReport]


def validate(graph: GraphSpec) -> None:
    """
    Checks that ``graph`` is a topologically ordered DAG.

    Raises
    -----------
    DuplicateNode
        A node name repeats, or shadows a graph input
    GraphCycle
        A node consumes a node that only appears later in the list
    UnknownNode
        A node or output references a name that does not exist at all
    InvalidLayer
        A node's own configuration is malformed
    """

    everything = {node.name for node in graph.nodes} | set(graph.inputs)
    available: set[str] = set(graph.inputs)
    if len(available) != len(graph.inputs):
        raise DuplicateNode(next(n for n in graph.inputs if graph.inputs.count(n) > 1))

    forward_refs: list[str] = []
    for node in graph.nodes:
        if node.name in available:
            raise DuplicateNode(node.name)
        node.check()
        for src in node.inputs:
            if src in available:
                continue
            if src in everything:
                forward_refs.append(node.name)
            else:
                raise UnknownNode(node.name, src)
        available.add(node.name)

    if forward_refs:
        raise GraphCycle(forward_refs)

    for out in graph.outputs:
        if out not in available:
            raise UnknownNode("<outputs>", out)
    if graph.frozen_stages < 0 or graph.frozen_stages > len(BACKBONE_STAGES) - 1:
        raise InvalidLayer("<graph>", f"frozen_stages must lie in [0, {len(BACKBONE_STAGES) - 1}]")


def _entry_shapes(graph: GraphSpec, entry: ShapeNCHW | Mapping[str, ShapeNCHW]) -> dict[str, ShapeNCHW]:
    if isinstance(entry, ShapeNCHW):
        if len(graph.inputs) != 1:
            raise ShapeMismatch("<inputs>", f"graph has inputs {list(graph.inputs)!r}; pass a shape per input")
        return {graph.inputs[0]: entry}
    missing = [name for name in graph.inputs if name not in entry]
    if missing:
        raise ShapeMismatch("<inputs>", f"no entry shape for {', '.join(missing)}")
    return {name: entry[name] for name in graph.inputs}


def infer_shapes(graph: GraphSpec, entry: ShapeNCHW | Mapping[str, ShapeNCHW]) -> dict[str, ShapeNCHW]:
    """
    Maps every graph input and node to its output shape.

    ``entry`` is a single shape for single-input graphs, or a mapping keyed by
    input name.
    """

    validate(graph)
    shapes = _entry_shapes(graph, entry)
    for node in graph.nodes:
        shapes[node.name] = node.out_shape([shapes[src] for src in node.inputs])
    return shapes


def frozen_stage_set(frozen_stages: int) -> frozenset[Stage]:
    """``frozen_stages=k`` freezes the stem and the first ``k`` residual stages."""

    if frozen_stages <= 0:
        return frozenset()
    return frozenset(BACKBONE_STAGES[: frozen_stages + 1])


def count_params(graph: GraphSpec, trainable_only: bool = False) -> int:
    frozen = frozen_stage_set(graph.frozen_stages) if trainable_only else frozenset()
    return sum(node.params() for node in graph.nodes if node.stage not in frozen)


def per_stage_params(graph: GraphSpec) -> dict[str, int]:
    totals: dict[str, int] = {}
    for stage in Stage:
        count = sum(node.params() for node in graph.nodes if node.stage is stage)
        if count or any(node.stage is stage for node in graph.nodes):
            totals[stage.value] = count
    return totals


def _costs(graph: GraphSpec, entry: ShapeNCHW | Mapping[str, ShapeNCHW]) -> Iterable[tuple[Layer, ShapeNCHW, int, int]]:
    shapes = infer_shapes(graph, entry)
    for node in graph.nodes:
        ins = [shapes[src] for src in node.inputs]
        out = shapes[node.name]
        yield node, out, node.macs(ins, out), node.flops(ins, out)


def count_flops(graph: GraphSpec, entry: ShapeNCHW | Mapping[str, ShapeNCHW]) -> int:
    return sum(flops for _, _, _, flops in _costs(graph, entry))


def count_macs(graph: GraphSpec, entry: ShapeNCHW | Mapping[str, ShapeNCHW]) -> int:
    return sum(macs for _, _, macs, _ in _costs(graph, entry))


def analyze(graph: GraphSpec, entry: ShapeNCHW | Mapping[str, ShapeNCHW]) -> ArchReport:
    per_node: list[NodeReport] = []
    flops = macs = 0
    for node, out, node_macs, node_flops in _costs(graph, entry):
        flops += node_flops
        macs += node_macs
        per_node.append(NodeReport(node.name, node.kind, node.stage.value, list(out), node.params(), node_flops, node_macs))

    first = entry if isinstance(entry, ShapeNCHW) else entry[graph.inputs[0]]
    report = ArchReport(
        name=graph.name,
        input_shape=list(first),
        total_params=count_params(graph),
        trainable_params=count_params(graph, trainable_only=True),
        bn_statistics=sum(node.statistics() for node in graph.nodes),
        flops=flops,
        gflops=flops / 1e9,
        macs=macs,
        gmacs=macs / 1e9,
        per_stage=per_stage_params(graph),
        per_node=per_node,
    )
    log.debug("Analyzed %r: %d params, %.3f GMACs", graph.name, report.total_params, report.gmacs)
    return report


def remove_kinds(graph: GraphSpec, *kinds: Type[LayerSpec]) -> GraphSpec:
    """
    Splices every node of the given kinds out of the graph.

    Only single-input layers can be spliced; consumers are rewired to the
    removed node's input.
    """

    kinds = kinds or (DropBlock,)
    rename: dict[str, str] = {}
    kept: list[Layer] = []
    for node in graph.nodes:
        if isinstance(node, kinds):
            if len(node.inputs) != 1:
                raise InvalidLayer(node.name, "only single-input layers can be removed")
            src = node.inputs[0]
            rename[node.name] = rename.get(src, src)
            continue
        if any(src in rename for src in node.inputs):
            node = msgspec.structs.replace(node, inputs=tuple(rename.get(src, src) for src in node.inputs))
        kept.append(node)

    outputs = tuple(rename.get(out, out) for out in graph.outputs)
    return msgspec.structs.replace(graph, nodes=tuple(kept), outputs=outputs)


def compose(
    *parts: GraphSpec,
    outputs: Sequence[str] | None = None,
    name: str = "",
    frozen_stages: int | None = None,
) -> GraphSpec:
    """
    Wires sub-graphs together by name.

    An input of a later part binds to the same-named node (or output) of an
    earlier part; unbound inputs become inputs of the composed graph.
    """

    if not parts:
        raise ValueError("compose needs at least one graph")

    nodes: list[Layer] = []
    produced: set[str] = set()
    inputs: list[str] = []
    for part in parts:
        for src in part.inputs:
            if src not in produced and src not in inputs:
                inputs.append(src)
        for node in part.nodes:
            if node.name in produced:
                raise DuplicateNode(node.name)
            nodes.append(node)
            produced.add(node.name)

    graph = GraphSpec(
        nodes=tuple(nodes),
        inputs=tuple(inputs),
        outputs=tuple(outputs if outputs is not None else parts[-1].outputs),
        frozen_stages=parts[0].frozen_stages if frozen_stages is None else frozen_stages,
        name=name or "+".join(p.name for p in parts if p.name),
    )
    validate(graph)
    return graph
