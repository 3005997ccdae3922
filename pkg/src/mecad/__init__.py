"""Anomaly detection pipeline at the network edge, with policy-driven self-management.

Subpackages cover flow feature extraction (:mod:`mecad.flows`), the neural
detector and symptom aggregation (:mod:`mecad.detection`), the batch
throughput and latency model (:mod:`mecad.perf`), the traffic scenario
(:mod:`mecad.scenario`), management policies (:mod:`mecad.policy`), the
simulated orchestrator (:mod:`mecad.orchestration`) and the closed-loop
simulator (:mod:`mecad.sim`).
"""

__version__ = "0.1.0"
