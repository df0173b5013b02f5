import logging
from concurrent.futures import Future
from concurrent.futures import TimeoutError as FutureTimeout
from functools import wraps
from threading import Thread

logger = logging.getLogger(__name__)


def _settle(outcome: Future, method, args, kwargs) -> None:
    try:
        outcome.set_result(method(*args, **kwargs))
    except BaseException as e:
        outcome.set_exception(e)


def timeout(sec: float = 60):
    """
    Fail a test that runs longer than sec seconds.

    The body runs on a daemon thread named after the test; a body that
    overruns cannot be stopped, so it is left running and TimeoutError is
    raised in the caller. Training tests share cached models, so an overrun
    body may still finish and fill that cache for the next test.
    """
    def decorate(func):
        @wraps(func)
        def bounded(*args, **kwargs):
            outcome: Future = Future()
            worker = Thread(target=_settle, args=(outcome, func, args, kwargs),
                            name=f"test:{func.__name__}", daemon=True)
            worker.start()
            try:
                return outcome.result(timeout=sec)
            except FutureTimeout:
                if outcome.done():
                    raise
                logger.warning("%s still running after %ss", func.__name__, sec)
                raise TimeoutError(f"{func.__name__} timed out after {sec} seconds") from None
        return bounded
    return decorate
