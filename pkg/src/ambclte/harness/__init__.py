"""Experiment runner: configs, per-packet simulation, sweeps, link budget, captures, CLI."""
