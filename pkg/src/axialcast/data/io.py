"""Line-delimited JSON match files.

Line 1 is a header ``{"schema": "axialcast.matches", "version": N}``; every
following line holds one match. Reading streams one record at a time.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Iterator

from .records import MatchRecord

FORMAT = "axialcast.matches"
VERSION = 1


class DatasetError(ValueError):
    pass


class VersionMismatch(DatasetError):
    pass


class CorruptRecord(DatasetError):
    def __init__(self, index: int, line: int, reason: str):
        super().__init__(f"record {index} (line {line}) is corrupt: {reason}")
        self.index = index
        self.line = line


def write_matches(path, matches: Iterable[MatchRecord]) -> int:
    n = 0
    with open(path, "w") as fh:
        fh.write(json.dumps({"schema": FORMAT, "version": VERSION}) + "\n")
        for m in matches:
            fh.write(json.dumps(m.to_dict(), separators=(",", ":")) + "\n")
            n += 1
    return n


def iter_matches(path) -> Iterator[MatchRecord]:
    with open(path) as fh:
        header_line = fh.readline()
        if not header_line.strip():
            return
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}: unreadable header ({exc})") from None
        if not isinstance(header, dict) or header.get("schema") != FORMAT:
            raise DatasetError(f"{path}: not a match dataset")
        if header.get("version") != VERSION:
            raise VersionMismatch(f"{path}: schema version {header.get('version')}, expected {VERSION}")
        index = 0
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            if not line.endswith("\n"):
                raise CorruptRecord(index, lineno, "truncated line")
            try:
                yield MatchRecord.from_dict(json.loads(line))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise CorruptRecord(index, lineno, f"{type(exc).__name__}: {exc}") from None
            index += 1


def read_matches(path) -> list[MatchRecord]:
    if not Path(path).exists():
        raise FileNotFoundError(path)
    return list(iter_matches(path))
