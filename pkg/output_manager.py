import csv
import json
import logging
import math
import sys
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from resource_manager import ResourceManager

SIGNIFICANT_DIGITS = 12


class OutputManager:
    """Canonical JSON and CSV writers shared by every subcommand."""

    @staticmethod
    def to_plain(value: Any) -> Any:
        """Convert numpy scalars/arrays, tuples and non-finite floats to JSON-ready values."""
        if isinstance(value, dict):
            return {str(k): OutputManager.to_plain(v) for k, v in value.items()}
        if isinstance(value, (list, tuple)):
            return [OutputManager.to_plain(v) for v in value]
        if isinstance(value, np.ndarray):
            return [OutputManager.to_plain(v) for v in value.tolist()]
        if isinstance(value, (bool, np.bool_)):
            return bool(value)
        if isinstance(value, (int, np.integer)):
            return int(value)
        if isinstance(value, (float, np.floating)):
            return OutputManager.round_float(float(value))
        return value

    @staticmethod
    def round_float(value: float) -> Optional[float]:
        if not math.isfinite(value):
            return None
        return float(format(value, f'.{SIGNIFICANT_DIGITS}g'))

    @staticmethod
    def canonical_json(data: Any) -> str:
        """Sorted keys, 12 significant digits, two-space indent, trailing newline."""
        return json.dumps(OutputManager.to_plain(data), sort_keys=True, indent=2, allow_nan=False) + '\n'

    @staticmethod
    def write_json(data: Any, path: Optional[str] = None) -> None:
        text = OutputManager.canonical_json(data)
        if path is None:
            sys.stdout.write(text)
            return
        ResourceManager.ensure_parent(path)
        with open(path, 'w', newline='\n') as f:
            f.write(text)
        logging.info(f"Wrote {path}")

    @staticmethod
    def format_cell(value: Any) -> str:
        if value is None:
            return ''
        if isinstance(value, (bool, np.bool_)):
            return 'true' if value else 'false'
        if isinstance(value, (int, np.integer)):
            return str(int(value))
        if isinstance(value, (float, np.floating)):
            value = float(value)
            if math.isnan(value):
                return ''
            return format(value, f'.{SIGNIFICANT_DIGITS}g')
        return str(value)

    @staticmethod
    def write_csv(rows: Iterable[Dict[str, Any]], fieldnames: Sequence[str], path: Optional[str] = None) -> int:
        """Write dict rows as CSV to `path` (stdout when None). Returns the number of data rows."""
        if path is None:
            return OutputManager._write_rows(sys.stdout, rows, fieldnames)
        ResourceManager.ensure_parent(path)
        with open(path, 'w', newline='') as f:
            count = OutputManager._write_rows(f, rows, fieldnames)
        logging.info(f"Wrote {count} rows to {path}")
        return count

    @staticmethod
    def _write_rows(stream, rows: Iterable[Dict[str, Any]], fieldnames: Sequence[str]) -> int:
        writer = csv.writer(stream, lineterminator='\n')
        writer.writerow(list(fieldnames))
        count = 0
        for row in rows:
            writer.writerow([OutputManager.format_cell(row.get(name)) for name in fieldnames])
            count += 1
        return count

    @staticmethod
    def load_schema(name: str) -> Dict[str, Any]:
        """Load a bundled JSON schema from schemas/."""
        with open(ResourceManager.get_resource_path(f'schemas/{name}.schema.json'), 'r') as f:
            return json.load(f)

    @staticmethod
    def schema_columns(name: str) -> List[str]:
        """Column order of a CSV schema."""
        return list(OutputManager.load_schema(name)["columns"])
