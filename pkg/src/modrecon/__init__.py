"""Reconfiguration planning and arm-motion simulation for lattice-modular
spacecraft: lattice state/action model, expert data generation, imitation
plus actor-critic policy learning, surface-graph routing, arm kinematics,
and an end-to-end trace-emitting pipeline."""

__version__ = "0.1.0"
