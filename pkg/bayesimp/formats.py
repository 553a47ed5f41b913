import csv
import io
import os
import tempfile
from multiprocessing.pool import ThreadPool

import numpy as np

from ._progress import progressbar
from .core import BayesImpException, DataError

__all__ = ('ObservationalDataset', 'format_float', 'write_csv', 'write_text',
           'write_dataset', 'read_dataset', 'map_replicates')


def _parse_n_threads(n_threads=1):
    if n_threads == -1:
        from multiprocessing import cpu_count
        return cpu_count()
    if n_threads < 1:
        raise BayesImpException("n-threads must be >= 1, or -1 for all cores")
    return n_threads


class ObservationalDataset:
    """A columnar table of samples.

    Parameters
    ----------
    columns : dict
        Mapping of column name to a 1-D array of samples. All columns must
        have the same length.

    Examples
    --------
    >>> d = ObservationalDataset({'x': [0., 1.], 'y': [2., 3.]})
    >>> d.points('x').shape
    (2, 1)
    """
    __slots__ = ('_columns',)

    def __init__(self, columns):
        cols = {}
        n = None
        for name, values in columns.items():
            values = np.asarray(values, dtype=float)
            if values.ndim != 1:
                raise DataError("Column %r must be one-dimensional" % name)
            if n is None:
                n = values.size
            elif values.size != n:
                raise DataError("Column %r has %d rows, expected %d"
                                % (name, values.size, n))
            cols[name] = values
        self._columns = cols

    def __repr__(self):
        return "ObservationalDataset<%d rows: %s>" % (len(self), ', '.join(self.names))

    def __len__(self):
        for values in self._columns.values():
            return values.size
        return 0

    def __contains__(self, name):
        return name in self._columns

    def __getitem__(self, name):
        try:
            return self._columns[name]
        except KeyError:
            raise DataError("Missing column %r (available: %s)"
                            % (name, ', '.join(self.names) or 'none'))

    @property
    def names(self):
        return list(self._columns)

    def points(self, names):
        """The named columns stacked into an ``(n, len(names))`` array."""
        if isinstance(names, str):
            names = [names]
        if not names:
            raise DataError("No columns requested")
        return np.column_stack([self[n] for n in names])

    def take(self, index):
        """A new dataset restricted to the given row indices."""
        return ObservationalDataset({k: v[index] for k, v in self._columns.items()})


def format_float(value):
    """Render a float with 17 significant digits.

    >>> format_float(0.1)
    '0.10000000000000001'
    """
    return '%.17g' % value


def _render(value):
    if isinstance(value, (float, np.floating)):
        return format_float(float(value))
    return str(value)


def write_text(path, text):
    """Write ``text`` to ``path`` atomically (temporary file then rename)."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, temp_path = tempfile.mkstemp(dir=directory, prefix='.tmp-')
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='') as f:
            f.write(text)
    except BaseException:
        # Writing failed, remove tempfile
        os.remove(temp_path)
        raise
    else:
        os.replace(temp_path, path)
    return path


def write_csv(path, header, rows):
    """Write a CSV file with a header row, ``\\n`` line endings and exact floats.

    Parameters
    ----------
    path : str
        Destination. Written atomically.
    header : sequence of str
        Column names.
    rows : iterable of sequences
        Row values. Floats are rendered with ``format_float``.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator='\n')
    writer.writerow(header)
    for row in rows:
        if len(row) != len(header):
            raise DataError("Row has %d fields, header has %d" % (len(row), len(header)))
        writer.writerow([_render(v) for v in row])
    return write_text(path, buf.getvalue())


def write_dataset(path, dataset):
    """Write an ``ObservationalDataset`` to CSV."""
    names = dataset.names
    columns = [dataset[n] for n in names]
    return write_csv(path, names, zip(*columns))


def read_dataset(path):
    """Read a CSV file written by ``write_dataset``."""
    with open(path, newline='', encoding='utf-8') as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("%s is empty, expected a header row" % path)
        rows = [row for row in reader if row]
    for lineno, row in enumerate(rows, 2):
        if len(row) != len(header):
            raise DataError("%s line %d: expected %d fields, got %d"
                            % (path, lineno, len(header), len(row)))
    try:
        values = np.array(rows, dtype=float).reshape(len(rows), len(header))
    except ValueError as e:
        raise DataError("%s: non-numeric value (%s)" % (path, e))
    return ObservationalDataset({name: values[:, i] for i, name in enumerate(header)})


def map_replicates(func, items, n_threads=1, label="", verbose=False):
    """Apply ``func`` to each item, optionally on a thread pool.

    Results are returned in the order of ``items`` regardless of
    ``n_threads``. With ``verbose`` a progress bar counts finished items.
    """
    items = list(items)
    n_threads = _parse_n_threads(n_threads)
    with progressbar(range(len(items)), label=label, enabled=verbose) as bar:
        if n_threads == 1 or len(items) <= 1:
            return [r for _, r in zip(bar, map(func, items))]
        with ThreadPool(min(n_threads, len(items))) as pool:
            return [r for _, r in zip(bar, pool.imap(func, items))]
