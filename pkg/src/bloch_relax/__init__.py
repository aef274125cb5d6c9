"""Optimal relaxation of a qubit on the Bloch ball: channels, dynamics, closed forms and bounded control."""
