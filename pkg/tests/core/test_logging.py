import logging
from unittest.mock import Mock, patch

from app.core.logging import (
    LOG_FORMAT,
    RunContextFilter,
    initialize_logging,
    log_debug,
    log_error,
    log_info,
    log_warning,
    run_context,
)


def test_initialize_logging():
    """Test that logging gets initialized"""
    with patch("logging.basicConfig") as mock_config:
        initialize_logging()
        mock_config.assert_called_once()


def test_initialize_logging_with_level():
    """Test an explicit level is passed through"""
    with patch("logging.basicConfig") as mock_config:
        initialize_logging("WARNING")
        assert mock_config.call_args.kwargs["level"] == logging.WARNING


def test_log_functions_call_logger():
    """Test that log functions call logger methods"""
    mock_logger = Mock()

    log_info(mock_logger, "test message", iteration=3)
    log_debug(mock_logger, "debug message")

    mock_logger.info.assert_called_once_with("test message", extra={"iteration": 3})
    mock_logger.debug.assert_called_once_with("debug message", extra={})


def test_log_warning_and_error_forward_exc_info():
    """Test warning and error helpers pass exc_info through"""
    mock_logger = Mock()
    error = RuntimeError("boom")

    log_warning(mock_logger, "fallback", exc_info=error)
    log_error(mock_logger, "failed", exc_info=error, user=2)

    mock_logger.warning.assert_called_once_with("fallback", exc_info=error, extra={})
    mock_logger.error.assert_called_once_with("failed", exc_info=error, extra={"user": 2})


def _record(**extra) -> logging.LogRecord:
    record = logging.LogRecord("app.test", logging.INFO, __file__, 1, "message", None, None)
    for name, value in extra.items():
        setattr(record, name, value)
    return record


def test_initialize_logging_installs_context_filter():
    with patch("logging.basicConfig") as mock_config:
        initialize_logging()

    (handler,) = mock_config.call_args.kwargs["handlers"]
    assert any(isinstance(f, RunContextFilter) for f in handler.filters)
    assert "%(trial)s" in mock_config.call_args.kwargs["format"]


def test_context_filter_defaults_outside_a_run():
    record = _record()

    assert RunContextFilter().filter(record)
    assert (record.seed, record.trial) == ("-", "-")


def test_context_filter_tags_records_inside_a_run():
    record = _record()

    with run_context(seed=11, trial=3):
        RunContextFilter().filter(record)

    assert (record.seed, record.trial) == (11, 3)


def test_nested_context_restores_outer_fields():
    inner, outer = _record(), _record()

    with run_context(seed=11):
        with run_context(trial=2):
            RunContextFilter().filter(inner)
        RunContextFilter().filter(outer)

    assert (inner.seed, inner.trial) == (11, 2)
    assert (outer.seed, outer.trial) == (11, "-")


def test_extra_fields_take_precedence():
    record = _record(seed=99)

    with run_context(seed=11, trial=1):
        RunContextFilter().filter(record)

    assert record.seed == 99
    assert record.trial == 1


def test_formatted_line_carries_context(caplog_setup):
    handler = logging.StreamHandler()
    handler.addFilter(RunContextFilter())
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    record = _record()

    with run_context(seed=5, trial=0):
        handler.filter(record)

    assert "[seed=5 trial=0] message" in handler.format(record)
