"""Event simulation of the car network and the routing policies it consults"""

from .policies import policy_jlcr, policy_lookahead, policy_static, policy_sw
from .simulator import simulate

__all__ = ["policy_jlcr", "policy_lookahead", "policy_static", "policy_sw", "simulate"]
