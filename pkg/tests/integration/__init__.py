"""Integration tests for phase-barrier."""
