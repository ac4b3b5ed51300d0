"""Federated learning over a hybrid conventional / pinching-antenna NOMA uplink.

Fuzzy client classification, NOMA latency/energy evaluation, a from-scratch
DDPG resource optimizer, brute-force grid oracles and a small FL simulator.
"""

__version__ = "0.1.0"
