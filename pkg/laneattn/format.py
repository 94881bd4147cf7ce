"""laneattn.format

Compact serialization for checkpoints and line-delimited record files.
Containers use msgpack when available and the path ends with .mpk, gzipped
JSON for .gz, plain JSON otherwise. Floats round-trip exactly in every form.
"""
import gzip
import io
import json
from typing import Any, Iterable, Iterator, Tuple

try:
    import msgpack
except Exception:
    msgpack = None


def _dumps(obj: Any, indent=None) -> str:
    return json.dumps(obj, indent=indent, allow_nan=False, sort_keys=False)


def save_blob(obj: Any, path: str):
    """Save a JSON-compatible object to `path` (.mpk msgpack, .gz gzipped JSON, else JSON)."""
    if path.endswith('.mpk') and msgpack is not None:
        with open(path, 'wb') as f:
            f.write(msgpack.packb(obj, use_bin_type=True))
    elif path.endswith('.gz'):
        # mtime=0 keeps the bytes reproducible
        with open(path, 'wb') as raw, gzip.GzipFile(fileobj=raw, mode='wb', mtime=0) as gz:
            gz.write(_dumps(obj).encode('utf-8'))
    else:
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(_dumps(obj, indent=1))


def load_blob(path: str) -> Any:
    """Load an object written by `save_blob`."""
    if path.endswith('.mpk'):
        if msgpack is None:
            raise OSError(f"{path}: msgpack is not installed")
        with open(path, 'rb') as f:
            return msgpack.unpackb(f.read(), raw=False)
    elif path.endswith('.gz'):
        with gzip.open(path, 'rt', encoding='utf-8') as f:
            return json.load(f)
    else:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)


def dump_record(record: Any) -> str:
    """One record as a single compact JSON line (no trailing newline)."""
    return json.dumps(record, separators=(',', ':'), allow_nan=False)


def write_records(records: Iterable[Any], path: str):
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        for record in records:
            f.write(dump_record(record))
            f.write('\n')


def append_record(record: Any, path: str):
    with open(path, 'a', encoding='utf-8', newline='\n') as f:
        f.write(dump_record(record))
        f.write('\n')


def iter_lines(path: str) -> Iterator[Tuple[int, str]]:
    """Yield (1-based line number, text) for every non-blank line."""
    with io.open(path, 'r', encoding='utf-8') as f:
        for lineno, line in enumerate(f, start=1):
            text = line.strip()
            if text:
                yield lineno, text
