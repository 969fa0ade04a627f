"""Learned synthesis of BGP/OSPF router configurations from forwarding requirements."""

__version__ = "0.1.0"
