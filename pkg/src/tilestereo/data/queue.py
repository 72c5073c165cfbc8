"""Bounded producer/consumer feed of training samples."""

from __future__ import annotations

import queue
import threading
from typing import Callable, Iterable


class SampleQueue:
    """Runs ``make(i)`` for each i in ``indices`` on a background thread.

    Consumers iterate and see samples in index order; at most ``maxsize``
    samples are buffered.  Exceptions in the producer re-raise on the consumer.
    """

    _DONE = object()

    def __init__(self, make: Callable, indices: Iterable[int], maxsize: int = 4):
        self._q: queue.Queue = queue.Queue(maxsize=maxsize)
        self._make = make
        self._indices = indices
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def _run(self):
        try:
            for i in self._indices:
                if self._stop.is_set():
                    return
                self._put(self._make(i))
        except BaseException as exc:  # forwarded to the consumer
            self._put(exc)
            return
        self._put(self._DONE)

    def _put(self, item):
        while not self._stop.is_set():
            try:
                self._q.put(item, timeout=0.1)
                return
            except queue.Full:
                continue

    def __iter__(self):
        while True:
            item = self._q.get()
            if item is self._DONE:
                return
            if isinstance(item, BaseException):
                raise item
            yield item

    def close(self):
        self._stop.set()
        self._thread.join(timeout=5)
