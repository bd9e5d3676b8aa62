import logging

from core.utils import logging_setup
from core.utils.logging_setup import TqdmHandler, get_logger


class TestTqdmHandler:
    def test_emits_formatted_line_through_tqdm(self, monkeypatch):
        lines = []
        monkeypatch.setattr(logging_setup.tqdm, "write", lambda s: lines.append(s))
        handler = TqdmHandler()
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        log = get_logger("labbench.test_handler")
        log.propagate = False
        log.addHandler(handler)
        log.setLevel(logging.INFO)
        try:
            log.info("cell %s done in %d steps", "S+E", 40)
            log.debug("hidden")
        finally:
            log.removeHandler(handler)
        assert lines == ["INFO labbench.test_handler: cell S+E done in 40 steps"]

    def test_unknown_level_name_falls_back_to_info(self):
        assert logging_setup._as_level("chatty") == logging.INFO
        assert logging_setup._as_level("debug") == logging.DEBUG
        assert logging_setup._as_level(30) == 30
