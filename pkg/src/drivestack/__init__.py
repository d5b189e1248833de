"""Highway cruising stack: learned lane-change decisions, preference-tuned
path planning, and predictive motion control in a mixed-traffic simulator."""

__version__ = "0.1.0"
