"""Partitioned multi-agent volt-var control for radial distribution feeders."""
