"""Two-stage energy-efficiency benchmarking pipeline.

Stage 1 screens candidate models from metadata alone (thresholds, Pareto
dominance, NetScore ranking); stage 2 measures time, power, and energy of
real inference workloads from GPU telemetry and ranks deployment candidates
with the Sustainable Accuracy Metric (SAM).
"""

__version__ = "0.1.0"
