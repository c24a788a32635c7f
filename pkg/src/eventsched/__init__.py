"""Event-based multi-sensor scheduling for remote state estimation over a shared channel."""
