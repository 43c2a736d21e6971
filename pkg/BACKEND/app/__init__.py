"""
Court Phases: basketball phase segmentation from player-tracking data
"""

__version__ = "0.1.0"
