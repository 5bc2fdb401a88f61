import csv
import json
import hashlib
import logging

from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, IO, Iterable, List, Optional, Sequence, Union

import numpy as np

logger = logging.getLogger(__name__)


def exclude_keys(data, keys_to_exclude):
    """Recursively removes specified keys from a dictionary or list.

    Args:
        data: The data structure to process (dict, list, or primitive type)
        keys_to_exclude (list): List of keys to exclude from dictionaries

    Returns:
        The data structure with the specified keys removed.
    """
    if isinstance(data, dict):
        return {
            key: exclude_keys(value, keys_to_exclude)
            for key, value in data.items()
            if key not in keys_to_exclude
        }
    elif isinstance(data, (list, tuple)):
        return [exclude_keys(item, keys_to_exclude) for item in data]
    else:
        return data


def _json_serializer(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"Type {type(obj)} not serializable")


def to_json(document: Any) -> str:
    """Canonical JSON text: sorted keys, two space indent, trailing newline."""
    return json.dumps(document, sort_keys=True, indent=2, default=_json_serializer) + '\n'


def calculate_checksum(document: Any) -> str:
    record_string = json.dumps(document, sort_keys=True, default=_json_serializer).encode('utf-8')
    logger.debug(f"Record string for checksum calculation: {record_string[:200]}")
    return hashlib.md5(record_string).hexdigest()


def write_json(document: Any, filename: Union[str, Path]) -> None:
    path = Path(filename)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_json(document))
    logger.info(f"JSON report '{path}' has been created successfully.")


def _fieldnames(rows: Sequence[Dict[str, Any]], priority_fields: Optional[List[str]]) -> List[str]:
    fieldnames = set()
    for row in rows:
        fieldnames.update(row.keys())
    if priority_fields:
        priority_fields = [field for field in priority_fields if field in fieldnames]
        other_fields = sorted(field for field in fieldnames if field not in priority_fields)
        return priority_fields + other_fields
    return sorted(fieldnames)


def _csv_value(value: Any) -> Any:
    if value is None:
        return ''
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (list, tuple, dict)):
        return json.dumps(value, sort_keys=True, default=_json_serializer)
    return value


def write_rows(rows: Iterable[Dict[str, Any]], stream: IO[str], priority_fields: Optional[List[str]] = None) -> int:
    rows = list(rows)
    if not rows:
        logger.warning("No rows to write.")
        return 0
    writer = csv.DictWriter(stream, fieldnames=_fieldnames(rows, priority_fields), extrasaction='ignore',
                            lineterminator='\n')
    writer.writeheader()
    for row in rows:
        writer.writerow({key: _csv_value(value) for key, value in row.items()})
    return len(rows)


def write_dict_to_csv(rows: Iterable[Dict[str, Any]], filename: Union[str, Path],
                      priority_fields: Optional[List[str]] = None) -> None:
    path = Path(filename)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='') as csvfile:
        written = write_rows(rows, csvfile, priority_fields)
    logger.info(f"CSV file '{path}' has been created successfully ({written} rows).")


def parse_float_list(text: Union[str, Sequence[float], None]) -> Optional[List[float]]:
    """'0.01,0.02,0.05' -> [0.01, 0.02, 0.05]; lists pass through as floats."""
    if text is None:
        return None
    if isinstance(text, str):
        return [float(token) for token in text.split(',') if token.strip()]
    return [float(value) for value in text]
