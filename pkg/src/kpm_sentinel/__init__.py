"""Interpretable DDoS detection on RAN KPM telemetry."""
