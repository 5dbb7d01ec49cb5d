"""
File Utilities Module

This module handles file operations, directory setup, and the JSON-lines and
CSV plumbing shared by the pipeline stages.
"""

import json
import logging
import os
from pathlib import Path
from typing import Iterable, Iterator, List

import pandas as pd

from config.settings import INGESTION_CONFIG, format_error_message

# Configure logging
logger = logging.getLogger(__name__)


def ensure_directory_exists(directory_path):
    """
    Ensure a directory exists, creating it if necessary.

    Args:
        directory_path (str): Path to the directory

    Returns:
        str: The directory path
    """
    if not os.path.exists(directory_path):
        os.makedirs(directory_path, exist_ok=True)
        logger.info(f"Created directory: {directory_path}")

    return directory_path


def ensure_parent_exists(file_path):
    """Create the parent directory of file_path if needed."""
    parent = Path(file_path).parent
    if str(parent) and not parent.exists():
        ensure_directory_exists(str(parent))
    return file_path


def iter_lines(file_path) -> Iterator[str]:
    """
    Yield the lines of a UTF-8 text file without their trailing newline.

    Raises:
        FileNotFoundError: If the file does not exist
        OSError: If the file cannot be read
    """
    if not os.path.exists(file_path):
        logger.error(f"Input file not found: {file_path}")
        raise FileNotFoundError(format_error_message("file_not_found", path=file_path))
    try:
        with open(file_path, "r", encoding=INGESTION_CONFIG["encoding"]) as f:
            for line in f:
                yield line.rstrip("\r\n")
    except (OSError, UnicodeDecodeError) as e:
        logger.error(f"Failed to read {file_path}: {str(e)}")
        raise


def write_lines(lines: Iterable[str], file_path) -> int:
    """Write lines to a UTF-8 file, one per line. Returns the number written."""
    ensure_parent_exists(file_path)
    count = 0
    with open(file_path, "w", encoding=INGESTION_CONFIG["encoding"], newline="\n") as f:
        for line in lines:
            f.write(line)
            f.write("\n")
            count += 1
    logger.info(f"Wrote {count} lines to {file_path}")
    return count


def write_jsonl(records: Iterable[dict], file_path) -> int:
    """Write dictionaries as JSON-lines with stable key order."""
    return write_lines((json.dumps(record, separators=(",", ":")) for record in records), file_path)


def read_jsonl(file_path) -> List[dict]:
    """Read a JSON-lines file; blank lines are ignored."""
    return [json.loads(line) for line in iter_lines(file_path) if line.strip()]


def write_json(data, file_path) -> str:
    ensure_parent_exists(file_path)
    with open(file_path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2)
        f.write("\n")
    logger.info(f"Saved {file_path}")
    return str(file_path)


def read_json(file_path):
    if not os.path.exists(file_path):
        raise FileNotFoundError(format_error_message("file_not_found", path=file_path))
    with open(file_path, "r", encoding="utf-8") as f:
        return json.load(f)


def write_frame_csv(frame: pd.DataFrame, file_path, float_format: str = "%.6g") -> str:
    """Write a report table as CSV."""
    ensure_parent_exists(file_path)
    frame.to_csv(file_path, index=False, float_format=float_format, lineterminator="\n")
    logger.info(f"Saved {len(frame)} rows to {file_path}")
    return str(file_path)
