"""Instrumented allocation ledger for Tensor buffers.

Only buffers owned by :class:`inpaintq.tensor.Tensor` are counted; process
memory is never consulted. Trackers nest: every active tracker sees every
allocation made while it is open.
"""
import threading
import weakref

_local = threading.local()


class AllocationTracker:
    def __init__(self):
        self.live = 0
        self.peak = 0
        self.allocations = 0

    def _alloc(self, nbytes):
        self.live += nbytes
        self.allocations += 1
        if self.live > self.peak:
            self.peak = self.live

    def _free(self, nbytes):
        self.live -= nbytes

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().remove(self)
        return False


def _stack():
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def _release(trackers, nbytes):
    for t in trackers:
        t._free(nbytes)


def register(obj, nbytes):
    """Charge ``nbytes`` to every open tracker until ``obj`` is collected."""
    trackers = tuple(_stack())
    if not trackers:
        return
    for t in trackers:
        t._alloc(nbytes)
    weakref.finalize(obj, _release, trackers, nbytes)


def track(arr):
    """Register a freshly allocated ndarray buffer and return it unchanged."""
    register(arr, arr.nbytes)
    return arr
