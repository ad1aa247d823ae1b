"""quadrun: quadruped locomotion learning stack on an in-house rigid-body simulator."""

__version__ = "0.1.0"
