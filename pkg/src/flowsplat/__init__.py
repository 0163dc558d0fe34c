"""Physics-informed neural fluid dynamics and Gaussian-splat animation."""

__version__ = "0.1.0"
