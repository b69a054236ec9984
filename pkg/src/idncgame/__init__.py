"""Game-theoretic cooperative recovery of broadcast packets with instantly decodable network coding."""

__version__ = "0.1.0"
