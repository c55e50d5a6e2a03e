"""
Common utility functions for the bsdelab library

Error types shared by every module, output directory resolution, and the
deterministic CSV/JSON writers that every experiment goes through.
"""

import csv
import json
import math
import os
from pathlib import Path

# Environment variable naming the default output directory
OUTPUT_DIR_ENV = 'BSDELAB_OUTPUT_DIR'
DEFAULT_OUTPUT_DIR = 'results'

# Literal token written for a divergent quantity
DIVERGENT = 'DIVERGENT'


class NumericalError(RuntimeError):
    """A numerical procedure failed to converge or could not be evaluated."""


class InvariantViolation(AssertionError):
    """A mathematical property checked by an experiment did not hold."""


class Divergent:
    """
    Cell value for a quantity declared infinite.

    Carries the evidence that led to the verdict (truncated values, fitted
    growth exponent) so the JSON artifact can show it next to the token.
    """

    __slots__ = ('evidence',)

    def __init__(self, evidence=None):
        self.evidence = dict(evidence or {})

    def __eq__(self, other):
        return isinstance(other, Divergent) and self.evidence == other.evidence

    def __repr__(self):
        return f"Divergent({self.evidence!r})"


def normalize_output_dir(path):
    """
    Normalise an output directory as entered.

    Strips whitespace and surrounding quotes and expands ``~``. Returns the
    input unchanged if it is empty/None.
    """
    if not path or not str(path).strip():
        return path
    raw = str(path).strip().strip('"').strip("'")
    return str(Path(raw).expanduser())


def get_output_dir():
    """
    Read the output directory from the environment, normalised.

    Returns:
        The directory, or None when BSDELAB_OUTPUT_DIR is unset/empty.
    """
    return normalize_output_dir(os.environ.get(OUTPUT_DIR_ENV, '')) or None


def resolve_output_dir(explicit=None, verbose=False):
    """
    Work out where artifacts go, preferring what the caller asked for.

    An explicit directory (the ``--out`` flag or the config's ``out_dir``)
    wins. Otherwise ``BSDELAB_OUTPUT_DIR`` is used, and failing that
    ``./results``.

    Args:
        explicit: Directory given by the caller, or None
        verbose: Print which source the directory came from

    Returns:
        The normalised output directory
    """
    path = normalize_output_dir(explicit)
    if path:
        if verbose:
            print(f"Output directory from caller: {path}")
        return path

    path = get_output_dir()
    if path:
        if verbose:
            print(f"Output directory from {OUTPUT_DIR_ENV}: {path}")
        return path

    if verbose:
        print(f"Output directory defaulted to ./{DEFAULT_OUTPUT_DIR}")
    return DEFAULT_OUTPUT_DIR


def format_real(value):
    """
    Format a cell for CSV.

    Floats get 17 significant digits so they round-trip exactly; infinities
    and NaN become ``inf``, ``-inf`` and ``nan``. Divergent cells become the
    literal ``DIVERGENT`` token. Everything else is passed through ``str``.
    """
    if isinstance(value, Divergent):
        return DIVERGENT
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float) or hasattr(value, 'dtype'):
        value = float(value)
        if math.isnan(value):
            return 'nan'
        if math.isinf(value):
            return 'inf' if value > 0 else '-inf'
        return format(value, '.17g')
    if value is None:
        return ''
    return str(value)


def _json_cell(value):
    """Convert a cell into something ``json`` can write deterministically."""
    if isinstance(value, Divergent):
        return {'status': DIVERGENT, 'evidence': _json_cell(value.evidence)}
    if isinstance(value, dict):
        return {str(k): _json_cell(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_cell(v) for v in value]
    if getattr(value, 'ndim', 0) > 0:
        return _json_cell(value.tolist())
    if isinstance(value, bool) or value is None or isinstance(value, str):
        return value
    if isinstance(value, int):
        return value
    if isinstance(value, float) or hasattr(value, 'dtype'):
        value = value.item() if hasattr(value, 'item') else float(value)
        if isinstance(value, float) and not math.isfinite(value):
            return format_real(value)
        return value
    return str(value)


def write_csv_table(file, columns, rows):
    """
    Write rows to a CSV file with a header row.

    Args:
        file: Destination path
        columns: Column names, in order
        rows: Iterable of dicts keyed by column name (missing keys are empty)

    Raises:
        OSError: If the file cannot be written; the message names the path
    """
    try:
        with open(file, mode='w', newline='', encoding='utf-8') as fh:
            writer = csv.writer(fh, lineterminator='\n')
            writer.writerow(columns)
            for row in rows:
                writer.writerow([format_real(row.get(col)) for col in columns])
    except OSError as e:
        raise OSError(f"Failed to write CSV to {file}: {e}") from e


def write_json_document(file, content):
    """
    Write a JSON document, replacing the file if it exists.

    Keys are sorted and non-finite floats are written as strings, so the
    same content always produces the same bytes.

    Raises:
        OSError: If the file cannot be written; the message names the path
    """
    try:
        with open(file, 'w', encoding='utf-8') as fh:
            json.dump(_json_cell(content), fh, indent=2, sort_keys=True,
                      allow_nan=False)
            fh.write('\n')
    except OSError as e:
        raise OSError(f"Failed to write JSON to {file}: {e}") from e
