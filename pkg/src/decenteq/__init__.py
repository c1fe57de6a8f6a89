"""Decentralized feedforward equalization for the massive MU-MIMO uplink.

The base-station antenna array is split into independent clusters; each
cluster only sees its slice of the receive vector and channel matrix.  Two
feedforward architectures are provided: a partially decentralized (PD) one
that sums per-cluster matched-filter statistics and equalizes centrally,
and a fully decentralized (FD) one that equalizes per cluster and fuses
soft symbols by inverse-variance weighting.  A scalar state-evolution
module predicts the per-user decoupled noise variance of both pipelines,
and an experiment harness reproduces rate / SER / minimum-antenna-ratio
sweeps from declarative config files.
"""

__version__ = "0.1.0"

from . import equalize, harness, info, model, se

__all__ = ["equalize", "harness", "info", "model", "se", "__version__"]
