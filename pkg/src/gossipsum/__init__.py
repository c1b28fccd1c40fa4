"""Desk-scale simulator for decentralized momentum SGD over gossip topologies."""

__version__ = "0.1.0"
