"""Observability package for OpenTelemetry tracing and solver metrics."""
