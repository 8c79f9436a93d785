"""barrierops: a desk-scale cyber-physical stack for a smart traffic barrier.

The package wires together a minimal context broker, an IoT protocol agent,
two simulated devices (an inductive loop sensor and the barrier itself), a
time-series ingest sink, a from-scratch decision-forest trainer with a compact
on-device model format, a file-backed model registry, and a DAG runner that
automates the train -> compress -> deploy -> monitor cycle.
"""

__version__ = "0.1.0"
