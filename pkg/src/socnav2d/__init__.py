"""socnav2d: a 2D indoor social-navigation benchmark engine.

Library layout:
  gridmap    occupancy grids, map I/O, static costmaps
  orca       reciprocal-collision-avoidance pedestrian crowd
  sensing    field-of-view sensor model and egocentric local maps
  planner    proactive global planner (pedestrian-aware A*) and waypoints
  dwa        dynamic-window local planner baseline
  engine     episode simulation: kinematics, rewards, observations, replay logs
  mapgen     procedural indoor maps
  scenario   start/goal and crowd sampling
  bench      benchmark runs and metric aggregation
  protocol   newline-delimited JSON wire format
  server     environment service for external policy trainers
  render     matplotlib rendering of replays and costmaps
  cli        command line entry point
"""

__version__ = "0.1.0"
