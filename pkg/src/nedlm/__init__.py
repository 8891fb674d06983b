"""Entity-aware bidirectional language model and local disambiguation ranker."""

__version__ = "0.1.0"
