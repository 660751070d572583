"""Metrics, configuration, experiment drivers and the command-line entry point."""
