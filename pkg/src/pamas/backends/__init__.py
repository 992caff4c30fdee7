from .base import (
    Backend,
    BackendError,
    MeterTotals,
    ParseError,
    Reflection,
    ReflectionContext,
    Summary,
    TokenUsage,
    UsageMeter,
    meter,
    self_reflect,
)
from .embedding import HashingEmbedder
from .remote import RemoteBackend
from .simulated import SimulatedAgentSpec, SimulatedBackend

__all__ = [
    "Backend",
    "BackendError",
    "HashingEmbedder",
    "MeterTotals",
    "ParseError",
    "Reflection",
    "ReflectionContext",
    "RemoteBackend",
    "SimulatedAgentSpec",
    "SimulatedBackend",
    "Summary",
    "TokenUsage",
    "UsageMeter",
    "meter",
    "self_reflect",
]
