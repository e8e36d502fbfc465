"""Experiment harness: config files, experiments and the command line."""
