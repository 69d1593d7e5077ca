from __future__ import annotations

import inspect
import logging
from typing import Any, Callable, Generic, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T", contravariant=True)

Handler = Callable[..., Any]


class EventEmitter(Generic[T]):
    """Synchronous observer registry keyed by a ``Literal`` of event names.

    Handlers may accept fewer positional arguments than are emitted; the
    surplus is dropped. A raising handler is logged and never interrupts the
    emitter's caller.
    """

    def __init__(self) -> None:
        self._handlers: dict[T, list[Handler]] = {}
        self._once: set[tuple[T, Handler]] = set()

    def on(self, event: T, callback: Handler | None = None) -> Handler:
        def register(handler: Handler) -> Handler:
            if inspect.iscoroutinefunction(handler):
                raise ValueError("Async handlers are not supported. Use a sync wrapper.")
            handlers = self._handlers.setdefault(event, [])
            if handler not in handlers:
                handlers.append(handler)
            return handler

        return register if callback is None else register(callback)

    def once(self, event: T, callback: Handler) -> Handler:
        self.on(event, callback)
        self._once.add((event, callback))
        return callback

    def off(self, event: T, callback: Handler) -> None:
        handlers = self._handlers.get(event)
        if not handlers:
            return
        if callback in handlers:
            handlers.remove(callback)
        self._once.discard((event, callback))
        if not handlers:
            del self._handlers[event]

    def emit(self, event: T, *args: Any) -> None:
        for handler in list(self._handlers.get(event, ())):
            if (event, handler) in self._once:
                self.off(event, handler)
            try:
                handler(*args[: _positional_capacity(handler, len(args))])
            except Exception as ex:
                logger.error(f"Handler raised exception on event '{event}': {ex}", exc_info=True)


def _positional_capacity(handler: Handler, available: int) -> int:
    try:
        params = inspect.signature(handler).parameters.values()
    except (TypeError, ValueError):
        return available
    count = 0
    for param in params:
        if param.kind is param.VAR_POSITIONAL:
            return available
        if param.kind in (param.POSITIONAL_ONLY, param.POSITIONAL_OR_KEYWORD):
            count += 1
    return min(count, available)
