"""
OpenTelemetry setup for solver runs.
Spans and metrics go to console exporters when enabled in settings.
"""

from opentelemetry import trace, metrics
from opentelemetry.sdk.trace import TracerProvider
from opentelemetry.sdk.trace.export import BatchSpanProcessor, ConsoleSpanExporter
from opentelemetry.sdk.resources import Resource
from opentelemetry.sdk.metrics import MeterProvider
from opentelemetry.sdk.metrics.export import ConsoleMetricExporter, PeriodicExportingMetricReader

from config.settings import settings


def setup_telemetry(service_name: str = None) -> bool:
    """
    Configure tracing and metrics providers. Returns False when both are disabled.
    """
    observability = settings.observability
    if not (observability.enable_tracing or observability.enable_metrics):
        return False

    resource = Resource.create({"service.name": service_name or observability.service_name})

    if observability.enable_tracing:
        trace_provider = TracerProvider(resource=resource)
        trace_provider.add_span_processor(BatchSpanProcessor(ConsoleSpanExporter()))
        trace.set_tracer_provider(trace_provider)

    if observability.enable_metrics:
        metric_reader = PeriodicExportingMetricReader(
            ConsoleMetricExporter(),
            export_interval_millis=observability.metrics_export_interval_ms,
        )
        metrics.set_meter_provider(MeterProvider(resource=resource, metric_readers=[metric_reader]))
    return True


def get_tracer(name: str):
    return trace.get_tracer(name)


def get_meter(name: str):
    return metrics.get_meter(name)
