"""SP&A-Net: efficient defect-pattern classification built from scratch.

Subpackages map onto the main concerns: the autodiff tensor core, the
composite blocks (self-proliferation, global-context attention, bottleneck),
network assembly, training (circle loss, NAG, schedules, metrics), analytic
cost modeling, and the synthetic-defect data pipeline.
"""

__version__ = "0.1.0"
