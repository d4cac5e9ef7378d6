"""
Event loop with a monotone virtual clock.
"""
import heapq
import itertools
import logging
from typing import Any, Callable, List, Optional

logger = logging.getLogger(__name__)


class Event:
    """Handle for a scheduled callback; cancelled events stay in the heap and are skipped."""
    __slots__ = ('time', 'callback', 'args', 'cancelled')

    def __init__(self, time: float, callback: Callable, args: tuple):
        self.time = time
        self.callback = callback
        self.args = args
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class Simulator:
    """Single-owner event scheduler; ties are broken by scheduling order."""

    def __init__(self):
        self.now = 0.0
        self._queue: List[tuple] = []
        self._counter = itertools.count()
        self.events_processed = 0

    def schedule(self, time: float, callback: Callable, *args: Any) -> Event:
        if time < self.now:
            raise ValueError(f"cannot schedule at {time} before current time {self.now}")
        event = Event(time, callback, args)
        heapq.heappush(self._queue, (time, next(self._counter), event))
        return event

    def schedule_in(self, delay: float, callback: Callable, *args: Any) -> Event:
        return self.schedule(self.now + delay, callback, *args)

    def run(self, until: Optional[float] = None) -> float:
        """
        Process events in time order.

        Args:
            until: Stop before the first event later than this time; the clock
                is then advanced to ``until``. None drains the queue.

        Returns:
            The clock value when the loop stops
        """
        queue = self._queue
        while queue:
            time, _, event = queue[0]
            if until is not None and time > until:
                break
            heapq.heappop(queue)
            if event.cancelled:
                continue
            self.now = time
            self.events_processed += 1
            event.callback(*event.args)
        if until is not None and until > self.now:
            self.now = until
        return self.now

    @property
    def pending(self) -> int:
        return sum(1 for _, _, event in self._queue if not event.cancelled)
