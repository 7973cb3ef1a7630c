"""Kinodynamic planning on graphs of reachable Bezier curves."""

from ._core import (
    FRAME_SCHEMA,
    FRAME_VERSION,
    SCENARIO_SCHEMA,
    SCENARIO_VERSION,
    Graph,
    Service,
    Session,
    bernstein,
    build_graph,
    check_edge,
    connect,
    cut,
    encode_message,
    evaluate,
    path_length_bound,
    plan,
    preset,
    simulate,
    subdivide,
    validate_scenario,
)
from .frames import FrameDecoder, decode_frames

__all__ = [
    "FRAME_SCHEMA",
    "FRAME_VERSION",
    "SCENARIO_SCHEMA",
    "SCENARIO_VERSION",
    "FrameDecoder",
    "Graph",
    "Service",
    "Session",
    "bernstein",
    "build_graph",
    "check_edge",
    "connect",
    "cut",
    "decode_frames",
    "encode_message",
    "evaluate",
    "path_length_bound",
    "plan",
    "preset",
    "simulate",
    "subdivide",
    "validate_scenario",
]
