import logging

from colorama import Fore

from core.logger import ColoredFormatter, LogSettings, get_logger, log_exception, setup_logger


def test_console_colors_do_not_leak(tmp_path):
    settings = LogSettings(console_level=logging.CRITICAL, to_file=True, directory=str(tmp_path))
    logger = setup_logger("test-leak", settings)
    logger.info("Freeze [u=1]")
    for handler in logger.handlers:
        handler.flush()
    text = next(tmp_path.glob("curious_misfa_*.log")).read_text(encoding="utf-8")
    assert "Freeze [u=1]" in text
    assert Fore.GREEN not in text


def test_formatter_leaves_record_untouched():
    record = logging.LogRecord("x", logging.WARNING, __file__, 1, "eta %s", ("low",), None)
    line = ColoredFormatter(fmt="%(levelname)s %(message)s").format(record)
    assert "[!] WARNING" in line
    assert "eta low" in line
    assert record.levelname == "WARNING"
    assert record.getMessage() == "eta low"


def test_setup_is_idempotent():
    settings = LogSettings(to_file=False)
    first = setup_logger("test-once", settings)
    second = setup_logger("test-once", settings)
    assert first is second
    assert len(first.handlers) == 1


def test_module_loggers_are_children():
    assert get_logger("services.agent").name == "CuriousMisfa.services.agent"


def test_log_exception_keeps_traceback(caplog):
    logger = logging.getLogger("test-exc")
    try:
        raise ValueError("bad tau")
    except ValueError as e:
        with caplog.at_level(logging.ERROR, logger="test-exc"):
            log_exception(logger, "Trial failed", e)
    assert "Trial failed: ValueError: bad tau" in caplog.text
    assert caplog.records[0].exc_info is not None


def test_env_settings(monkeypatch):
    monkeypatch.setenv("CDMISFA_LOG_LEVEL", "warning")
    monkeypatch.setenv("CDMISFA_LOG_TO_FILE", "0")
    settings = LogSettings.from_env()
    assert settings.console_level == logging.WARNING
    assert not settings.to_file
