"""
Schema-versioned CSV files.

The first line is a comment naming the schema and its version; the rest is
a plain pandas CSV with a header row.
"""
import logging
import os
import re
from typing import Tuple

import pandas as pd

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
_HEADER_RE = re.compile(r'^# schema=(?P<schema>[\w.-]+) version=(?P<version>\d+)$')


def write_versioned_csv(df: pd.DataFrame, path: str, schema: str, version: int = SCHEMA_VERSION) -> str:
    """Write ``df`` under a ``# schema=... version=...`` line; returns the path."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', newline='') as f:
        f.write(f"# schema={schema} version={version}\n")
        df.to_csv(f, index=False, float_format='%.10g', lineterminator='\n')
    logger.info(f"Wrote {len(df)} rows to {path} (schema {schema} v{version})")
    return path


def read_versioned_csv(path: str) -> Tuple[pd.DataFrame, str, int]:
    """
    Read a file written by ``write_versioned_csv``.

    Returns:
        (frame, schema, version)

    Raises:
        ValueError: If the schema line is missing
    """
    with open(path) as f:
        first = f.readline().rstrip('\n')
        match = _HEADER_RE.match(first)
        if not match:
            raise ValueError(f"{path}: missing schema line, found {first!r}")
        df = pd.read_csv(f)
    return df, match.group('schema'), int(match.group('version'))
