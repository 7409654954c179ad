"""Pull-model compliance reporting over a simulated permissioned ledger."""

__version__ = "0.1.0"
