"""Oracles, experiment orchestration and the command line interface."""
