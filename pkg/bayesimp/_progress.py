import sys
from timeit import default_timer


def format_time(t):
    """Format seconds into a human readable form.

    >>> format_time(10.4)
    '10.4s'
    >>> format_time(1000.4)
    '16min 40.4s'
    """
    m, s = divmod(t, 60)
    h, m = divmod(m, 60)
    if h:
        return f"{h:2.0f}hr {m:2.0f}min {s:4.1f}s"
    elif m:
        return f"{m:2.0f}min {s:4.1f}s"
    else:
        return f"{s:4.1f}s"


class progressbar:
    """Progress through a sweep of replicates.

    The bar is redrawn each time an item of the iterable is consumed, so it
    reports completed replicates rather than elapsed wall time.

    Parameters
    ----------
    iterable : iterable
        The object to iterate over. Must support ``len``.
    label : str, optional
        Prefix shown before the bar, e.g. the method being run.
    width : int, optional
        Width of the bar in characters.
    enabled : bool, optional
        Whether to draw anything. Default is True.
    file : file, optional
        Where to draw. Default is ``sys.stdout``.

    Example
    -------
    >>> with progressbar(seeds, label="BayesIMP") as itbl:  # doctest: +SKIP
    ...     for s in itbl:
    ...         run(s)
    BayesIMP [########################################] | 10/10 | 5.2s
    """
    def __init__(self, iterable, label="", width=40, enabled=True, file=None):
        self._iterable = iterable
        self._ndone = 0
        self._ntotal = len(iterable)
        self._label = label
        self._width = width
        self._enabled = enabled
        self._file = sys.stdout if file is None else file

    def __enter__(self):
        if self._enabled:
            self._start_time = default_timer()
            self._draw()
        return self

    def __exit__(self, type, value, traceback):
        if self._enabled:
            self._draw()
            self._file.write('\n')
            self._file.flush()

    def __iter__(self):
        for i in self._iterable:
            yield i
            self._ndone += 1
            if self._enabled:
                self._draw()

    def _draw(self):
        frac = (self._ndone / self._ntotal) if self._ntotal else 1
        bar = '#' * int(self._width * frac)
        elapsed = format_time(default_timer() - self._start_time)
        prefix = self._label + ' ' if self._label else ''
        msg = '\r{0}[{1:<{2}}] | {3}/{4} | {5}'.format(prefix, bar, self._width,
                                                       self._ndone, self._ntotal, elapsed)
        try:
            self._file.write(msg)
            self._file.flush()
        except ValueError:
            pass
