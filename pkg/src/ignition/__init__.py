"""Ignition: a behavioral-cloning racing stack.

Synthesizes labeled driving data from an oracle driver in a built-in
simulator, trains a residual convolutional classifier to imitate it, and
evaluates the result in a closed real-time control loop.
"""

__version__ = "0.1.0"

MPH_PER_MPS = 2.236936
