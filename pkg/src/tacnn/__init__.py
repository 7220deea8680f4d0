"""Multi-task pedestrian CNN with attribute and scene-source assistance."""

__version__ = "0.1.0"
