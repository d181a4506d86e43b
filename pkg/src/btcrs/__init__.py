"""btcrs: hijack-based partition and delay attacks on Bitcoin, simulated over AS topologies."""

__version__ = "0.1.0"
