"""Edge-relay messaging protocol: crypto primitives, settlement, consensus and a traffic simulator."""

__version__ = "0.1.0"
