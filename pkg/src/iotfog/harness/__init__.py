"""Scenario runner, report rendering and shape checks."""

from iotfog.harness.config import (
    DEFAULT_SEED_PANEL,
    ConfigError,
    ScenarioConfig,
    format_config,
    load_config,
    parse_config,
)
from iotfog.harness.report import (
    Violation,
    check_shape,
    emit_report,
    fmt_seconds,
    load_report,
    render_csv,
    render_json,
    table,
)
from iotfog.harness.scenario import (
    Cell,
    ScenarioError,
    ScenarioReport,
    SizeReport,
    measure_size,
    run_scenario,
    target_position,
)

__all__ = [
    "DEFAULT_SEED_PANEL",
    "Cell",
    "ConfigError",
    "ScenarioConfig",
    "ScenarioError",
    "ScenarioReport",
    "SizeReport",
    "Violation",
    "check_shape",
    "emit_report",
    "fmt_seconds",
    "format_config",
    "load_config",
    "load_report",
    "measure_size",
    "parse_config",
    "render_csv",
    "render_json",
    "run_scenario",
    "table",
    "target_position",
]
