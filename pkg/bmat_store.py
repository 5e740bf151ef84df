"""
BMAT matrix files, out-of-core column batches and CSV metrics

BMAT layout (little-endian):

    offset  size  field
    0       8     magic  b"BEARMAT1"
    8       4     dtype  uint32 (1 = float32, 2 = float64)
    12      8     rows   uint64
    20      8     cols   uint64
    28      ...   payload, column-major, rows * cols entries

A file is valid only if its size is exactly 28 + rows * cols * itemsize.
See BMAT_FORMAT_README.md for the normative description.
"""

import os
import csv
import math
import struct
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import CapacityError, FormatError, ParameterError, StorageError
from matrix_core import MATRIX_DTYPE, as_matrix
import settings

logger = logging.getLogger(__name__)

BMAT_MAGIC = b"BEARMAT1"
HEADER = struct.Struct("<8sIQQ")
HEADER_SIZE = HEADER.size  # 28

DTYPE_CODES = {
    1: np.dtype('<f4'),
    2: np.dtype('<f8'),
}

PathLike = Union[str, os.PathLike]
Batch = Tuple[np.ndarray, np.ndarray]


@dataclass(frozen=True)
class BmatHeader:
    rows: int
    cols: int
    dtype_code: int = 1

    @property
    def dtype(self) -> np.dtype:
        return DTYPE_CODES[self.dtype_code]

    @property
    def payload_bytes(self) -> int:
        return self.rows * self.cols * self.dtype.itemsize

    @property
    def file_bytes(self) -> int:
        return HEADER_SIZE + self.payload_bytes

    def pack(self) -> bytes:
        return HEADER.pack(BMAT_MAGIC, self.dtype_code, self.rows, self.cols)


def dtype_code_for(dtype) -> int:
    dtype = np.dtype(dtype)
    for code, candidate in DTYPE_CODES.items():
        if candidate == dtype.newbyteorder('<'):
            return code
    raise ParameterError(f"BMAT stores float32 or float64 only, got {dtype}")


def read_header(path: PathLike) -> BmatHeader:
    """
    Read and validate a BMAT header against the file size

    Raises FormatError for a bad magic, unknown dtype, zero dimension or a
    size that does not match the header (with the byte accounting).
    """
    try:
        actual_bytes = os.path.getsize(path)
        with open(path, 'rb') as f:
            raw = f.read(HEADER_SIZE)
    except OSError as e:
        raise StorageError(f"Cannot read {path}: {e}") from e

    if len(raw) < HEADER_SIZE:
        raise FormatError(f"{path}: file is {actual_bytes} bytes, shorter than the {HEADER_SIZE}-byte header")

    magic, dtype_code, rows, cols = HEADER.unpack(raw)
    if magic != BMAT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {BMAT_MAGIC!r}")
    if dtype_code not in DTYPE_CODES:
        raise FormatError(f"{path}: unsupported dtype code {dtype_code}")
    if rows < 1 or cols < 1:
        raise FormatError(f"{path}: header declares an empty matrix ({rows} x {cols})")

    header = BmatHeader(rows=rows, cols=cols, dtype_code=dtype_code)
    if actual_bytes != header.file_bytes:
        raise FormatError(
            f"{path}: header declares {rows} x {cols} ({header.dtype}), expected {header.file_bytes} bytes "
            f"({HEADER_SIZE} header + {header.payload_bytes} payload), found {actual_bytes} bytes"
        )
    return header


def write_bmat(M: np.ndarray, path: PathLike):
    """Write a matrix as BMAT; float64 input keeps its precision, everything else is stored as float32."""
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] < 1 or M.shape[1] < 1:
        raise ParameterError(f"BMAT needs a non-empty 2-D matrix, got shape {M.shape}")
    dtype = np.dtype('<f8') if M.dtype == np.float64 else np.dtype('<f4')
    header = BmatHeader(rows=M.shape[0], cols=M.shape[1], dtype_code=dtype_code_for(dtype))

    # (n, m) column-major is (m, n) row-major
    columns = np.ascontiguousarray(M.T, dtype=dtype)
    try:
        with open(path, 'wb') as f:
            f.write(header.pack())
            columns.tofile(f)
    except OSError as e:
        raise StorageError(f"Cannot write {path}: {e}") from e

    logger.info(f"Wrote {header.rows} x {header.cols} BMAT ({header.file_bytes} bytes) to {path}")


def map_columns(path: PathLike, mode: str = 'r') -> Tuple[BmatHeader, np.memmap]:
    """Memory-map the payload as a (cols, rows) array: row j is column j of the matrix."""
    header = read_header(path)
    try:
        columns = np.memmap(path, dtype=header.dtype, mode=mode, offset=HEADER_SIZE,
                            shape=(header.cols, header.rows))
    except OSError as e:
        raise StorageError(f"Cannot map {path}: {e}") from e
    return header, columns


def read_bmat(path: PathLike, memory_cap_bytes: Optional[int] = None) -> np.ndarray:
    """
    Fully materialize a BMAT file as a column-major matrix

    Raises CapacityError when the payload exceeds the memory cap (use
    open_batch_source for such files).
    """
    header = read_header(path)
    cap = settings.MEMORY_CAP_MB * 1024 * 1024 if memory_cap_bytes is None else memory_cap_bytes
    if header.payload_bytes > cap:
        raise CapacityError(
            f"{path}: payload of {header.payload_bytes} bytes exceeds the memory cap of {cap} bytes; "
            f"stream it with open_batch_source instead"
        )

    try:
        payload = np.fromfile(path, dtype=header.dtype, count=header.rows * header.cols, offset=HEADER_SIZE)
    except OSError as e:
        raise StorageError(f"Cannot read {path}: {e}") from e

    matrix = payload.reshape((header.cols, header.rows)).T
    if not np.isfinite(matrix).all():
        raise FormatError(f"{path}: payload contains non-finite entries")
    return matrix.astype(header.dtype.newbyteorder('='), copy=False)


# ── Column batches ─────────────────────────────────────────────────────────

class BatchSource:
    """
    Seekable provider of column batches of an n x m matrix

    The backing store is a (cols, rows) row-major array, either the transpose
    view of an in-memory matrix or a memory map of a BMAT payload, so a batch
    only ever materializes its own columns. Single consumer.

    When dtype is set, batches of a store with another dtype are cast to it.
    """

    def __init__(self, columns: np.ndarray, batch_size: int, seed: int = 0, shuffle: bool = True,
                 transform: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                 path: Optional[PathLike] = None, dtype=None):
        if batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {batch_size}")
        self._columns = columns
        self.batch_size = int(batch_size)
        self.seed = int(seed)
        self.shuffle = shuffle
        self.transform = transform
        self.path = path
        self.dtype = None if dtype is None else np.dtype(dtype)

        self._epoch = 0
        self._cursor = 0

    @property
    def rows(self) -> int:
        return self._columns.shape[1]

    @property
    def cols(self) -> int:
        return self._columns.shape[0]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.rows, self.cols

    @property
    def batches_per_epoch(self) -> int:
        return math.ceil(self.cols / self.batch_size)

    @property
    def position(self) -> Tuple[int, int]:
        """(epoch, cursor) of the next batch returned by next_batch"""
        return self._epoch, self._cursor

    def order(self, epoch: int) -> np.ndarray:
        """Column visiting order for an epoch; a pure function of (seed, epoch)."""
        if not self.shuffle:
            return np.arange(self.cols)
        return np.random.default_rng([self.seed, epoch]).permutation(self.cols)

    def _read(self, columns: np.ndarray) -> np.ndarray:
        block = self._columns[columns].T
        if not np.isfinite(block).all():
            raise FormatError(f"Non-finite entries in columns {columns[0]}..{columns[-1]} of {self.path or 'matrix'}")
        if self.dtype is not None and block.dtype != self.dtype:
            block = block.astype(self.dtype)
        if self.transform is not None:
            block = self.transform(block)
        return block

    def iter_epoch(self, epoch: int) -> Iterator[Batch]:
        """Yield (column indices, n x b block) pairs covering every column once."""
        order = self.order(epoch)
        for start in range(0, self.cols, self.batch_size):
            columns = order[start:start + self.batch_size]
            yield columns, self._read(columns)

    def seek(self, epoch: int, cursor: int = 0):
        if cursor < 0 or cursor > self.cols:
            raise ParameterError(f"cursor {cursor} outside 0..{self.cols}")
        self._epoch, self._cursor = int(epoch), int(cursor)

    def next_batch(self) -> Batch:
        """Return the batch at the current position and advance, rolling over epochs."""
        if self._cursor >= self.cols:
            self._epoch, self._cursor = self._epoch + 1, 0
        columns = self.order(self._epoch)[self._cursor:self._cursor + self.batch_size]
        self._cursor += len(columns)
        return columns, self._read(columns)

    def sequential(self, batch_size: Optional[int] = None) -> Iterator[Batch]:
        """Yield contiguous batches in natural column order (used by inference passes)."""
        step = batch_size or self.batch_size
        for start in range(0, self.cols, step):
            stop = min(start + step, self.cols)
            yield np.arange(start, stop), self._read(np.arange(start, stop))

    def configure(self, batch_size: Optional[int] = None, seed: Optional[int] = None,
                  shuffle: Optional[bool] = None) -> 'BatchSource':
        """A source over the same data with other batching options."""
        return BatchSource(self._columns, batch_size or self.batch_size,
                           seed=self.seed if seed is None else seed,
                           shuffle=self.shuffle if shuffle is None else shuffle,
                           transform=self.transform, path=self.path, dtype=self.dtype)

    def head(self, n_cols: int) -> 'BatchSource':
        """A source over the first n_cols columns, sharing the backing store."""
        if not 1 <= n_cols <= self.cols:
            raise ParameterError(f"head needs 1 <= n_cols <= {self.cols}, got {n_cols}")
        return BatchSource(self._columns[:n_cols], self.batch_size, seed=self.seed, shuffle=self.shuffle,
                           transform=self.transform, path=self.path, dtype=self.dtype)

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> 'BatchSource':
        """A source whose batches are fn(batch); fn must preserve the number of columns."""
        inner = self.transform
        transform = fn if inner is None else (lambda block: fn(inner(block)))
        return BatchSource(self._columns, self.batch_size, seed=self.seed, shuffle=self.shuffle,
                           transform=transform, path=self.path, dtype=self.dtype)


def open_batch_source(source: Union[PathLike, np.ndarray], batch_size: int, seed: int = 0,
                      shuffle: bool = True, dtype=MATRIX_DTYPE) -> BatchSource:
    """
    Open a BatchSource over a BMAT file (memory-mapped) or an in-memory matrix.

    Batches come out as dtype, float32 by default, whatever the storage dtype,
    and the exact split L + S = Y holds for those values. dtype=None keeps the
    storage dtype.
    """
    if batch_size < 1:
        raise ParameterError(f"batch_size must be >= 1, got {batch_size}")

    if isinstance(source, (str, os.PathLike)):
        header, columns = map_columns(source)
        logger.info(f"Opened {source}: {header.rows} x {header.cols}, batch size {batch_size}, shuffle={shuffle}")
        if dtype is not None and header.dtype != np.dtype(dtype):
            logger.warning(f"{source} stores {header.dtype.name}; batches are rounded to {np.dtype(dtype).name}")
        return BatchSource(columns, batch_size, seed=seed, shuffle=shuffle, path=source, dtype=dtype)

    keep = np.result_type(np.asarray(source).dtype, MATRIX_DTYPE)
    matrix = as_matrix(source, dtype=keep if dtype is None else dtype)
    return BatchSource(matrix.T, batch_size, seed=seed, shuffle=shuffle, dtype=dtype)


# ── Column sinks ───────────────────────────────────────────────────────────

class MatrixSink:
    """Collect column blocks into an in-memory matrix"""

    def __init__(self, rows: int, cols: int, dtype=np.float32):
        self.matrix = np.zeros((rows, cols), dtype=dtype, order='F')

    def write(self, columns: np.ndarray, block: np.ndarray):
        self.matrix[:, columns] = block

    def close(self) -> np.ndarray:
        return self.matrix


class BmatSink:
    """Write column blocks, in any order, straight into a pre-sized BMAT file"""

    def __init__(self, path: PathLike, rows: int, cols: int, dtype=np.float32):
        self.path = path
        self.header = BmatHeader(rows=rows, cols=cols, dtype_code=dtype_code_for(dtype))
        try:
            with open(path, 'wb') as f:
                f.write(self.header.pack())
                f.truncate(self.header.file_bytes)
            self._columns = np.memmap(path, dtype=self.header.dtype, mode='r+', offset=HEADER_SIZE,
                                      shape=(cols, rows))
        except OSError as e:
            raise StorageError(f"Cannot create {path}: {e}") from e

    def write(self, columns: np.ndarray, block: np.ndarray):
        try:
            self._columns[columns] = block.T
        except OSError as e:
            raise StorageError(f"Cannot write to {self.path}: {e}") from e

    def close(self) -> PathLike:
        if self._columns is not None:
            self._columns.flush()
            self._columns = None
            logger.info(f"Wrote {self.header.rows} x {self.header.cols} BMAT to {self.path}")
        return self.path

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()


# ── Metrics CSV ────────────────────────────────────────────────────────────

def _format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.9g}"
    if isinstance(value, (list, tuple)):
        return " ".join(_format_value(v) for v in value)
    return str(value)


def write_metrics_csv(records: Sequence[Dict], path: PathLike, fieldnames: Optional[List[str]] = None):
    """
    Write records sharing one schema as CSV with a header row

    Floats are printed with 9 significant digits; sequences are joined with
    spaces. An empty record list writes the header only, so it needs fieldnames.
    """
    if fieldnames is None:
        fieldnames = list(records[0].keys()) if records else []
    if not fieldnames:
        raise ParameterError(f"Cannot write {path}: no records and no fieldnames")
    for i, record in enumerate(records):
        if list(record.keys()) != list(fieldnames):
            raise ParameterError(f"Record {i} has fields {list(record.keys())}, expected {fieldnames}")

    try:
        with open(path, 'w', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(fieldnames)
            for record in records:
                writer.writerow([_format_value(record[name]) for name in fieldnames])
    except OSError as e:
        raise StorageError(f"Cannot write {path}: {e}") from e

    logger.info(f"Wrote {len(records)} metric row(s) to {path}")


def read_metrics_csv(path: PathLike) -> List[Dict[str, str]]:
    try:
        with open(path, 'r', newline='') as f:
            return list(csv.DictReader(f))
    except OSError as e:
        raise StorageError(f"Cannot read {path}: {e}") from e
