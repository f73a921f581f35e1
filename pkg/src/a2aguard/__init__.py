"""Agent-to-agent task exchange with verifiable discovery, guarded RPC,
streaming updates, push notifications, and an adversarial harness."""

__version__ = "0.1.0"
