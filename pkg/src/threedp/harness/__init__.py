"""Synthetic desk scenes, ADD-S evaluation and the command-line front end."""
