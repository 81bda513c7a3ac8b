"""Extract, embed and cluster DeFi building blocks from Ethereum call traces."""

__version__ = "0.1.0"
