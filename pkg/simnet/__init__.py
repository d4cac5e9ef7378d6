"""Discrete-event network simulator: links, endpoints, traces and scenario files."""
