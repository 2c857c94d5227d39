import glob
import json
import os
import sys
import zlib

import numpy as np

from config import ConfigException, DatasetException
from sampler import DegenerateInputException
from tensor import ContractException, NumericException, ShapeException
from vqta_file import VQTAFormatException

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_FORMAT = 2
EXIT_DEGENERATE = 3
EXIT_SHAPE = 4
EXIT_NUMERIC = 5

# Checked in order, the first match wins
EXIT_CODES = [
    (VQTAFormatException, EXIT_FORMAT),
    (ConfigException, EXIT_FORMAT),
    (DatasetException, EXIT_FORMAT),
    (DegenerateInputException, EXIT_DEGENERATE),
    (ShapeException, EXIT_SHAPE),
    (NumericException, EXIT_NUMERIC),
    (ContractException, EXIT_FORMAT),
]


def exit_code_for(exc: Exception) -> int | None:
    for kind, code in EXIT_CODES:
        if isinstance(exc, kind):
            return code
    return None


def known_exceptions() -> tuple[type, ...]:
    return tuple(kind for kind, _ in EXIT_CODES)


def note(message: str):
    """Progress messages go to stderr, stdout is reserved for JSON output."""
    print(message, file=sys.stderr)


def warn(message: str):
    print(f'WARNING {message}', file=sys.stderr)


def error(message: str):
    print(f'ERROR {message}', file=sys.stderr)


def dumps(doc) -> str:
    """Stable JSON: sorted keys, so output can be diffed between runs."""
    return json.dumps(doc, sort_keys=True)


def write_json(path: str, doc):
    with open(path, 'w') as f:
        f.write(dumps(doc))
        f.write('\n')


def seeded_rng(seed: int, name: str) -> np.random.Generator:
    """One independent generator per (seed, component name); the same pair always yields the same stream."""
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


def expand_path(paths: list[str], recurse: bool, ext: str | list[str]) -> list[str]:
    """Given a list of paths, return a sorted list of files. Use file globbing to handle -r."""
    files = set()

    if type(ext) is str:
        ext = [ext]

    for path in paths:
        if os.path.isfile(path):
            _, file_ext = os.path.splitext(os.path.basename(path))
            if file_ext in ext:
                files.add(path)
        else:
            if recurse:
                paths += glob.glob(path + '/*')

    return sorted(files)


def get_outfile_name(infile: str, suffix: str = '', ext: str = '.csv'):
    """Given input file path, return <path to infile>/<infile root>suffix.ext"""
    dirname, basename = os.path.split(infile)
    root, _ = os.path.splitext(basename)
    return os.path.join(dirname, root + suffix + ext)
