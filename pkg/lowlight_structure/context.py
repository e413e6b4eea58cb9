import secrets
import threading
from datetime import datetime

import structlog

__all__ = ('get_context', 'generate_run_id', 'bind_run')
__ctx = None


def get_context():
    global __ctx
    if __ctx is None:
        __ctx = threading.local()
    return __ctx


def generate_run_id():
    return "{}.{}".format(datetime.utcnow().timestamp(), secrets.token_bytes(8).hex())


def bind_run(command: str, run_id: str = None) -> str:
    """Attach a run id to the thread-local context and to every log line."""
    run_id = run_id or generate_run_id()
    ctx = get_context()
    ctx.run_id = run_id
    ctx.command = command
    structlog.contextvars.bind_contextvars(run_id=run_id, command=command)
    return run_id
