"""Packet-capture preprocessing for encrypted traffic classification.

Turns classic pcap files into fixed-size byte samples whose protocol fields
can be selectively destroyed, and audits how much of a dataset is actually
encrypted.
"""

__version__ = "0.1.0"
