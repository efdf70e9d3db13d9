"""Desk-scale trajectory-planning stack.

Library + CLI: an imitation-learned trajectory policy supervised through
critic-ranked sampled actions, a dropout-Bayesian learned reward with an
uncertainty penalty, a QP-based post-optimizer, and a closed-loop simulator
over synthetic urban scenarios.
"""

__version__ = "0.1.0"
