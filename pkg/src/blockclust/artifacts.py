"""Artifact file helpers.

Derived text artifacts start with a ``# manifest: <digest>`` line naming the
run manifest they were produced under; readers skip ``#`` lines.
"""

from __future__ import annotations

import hashlib
import os
from typing import Iterable, Iterator, Optional

from .errors import ManifestMismatch

TAG = "# manifest: "


def write_lines(path: str | os.PathLike, lines: Iterable[str], manifest: Optional[str] = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if manifest:
            fh.write(f"{TAG}{manifest}\n")
        for line in lines:
            fh.write(line + "\n")


def data_lines(path: str | os.PathLike) -> Iterator[str]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip() and not line.startswith("#"):
                yield line.rstrip("\n")


def manifest_tag(path: str | os.PathLike) -> Optional[str]:
    """The digest recorded in an artifact's first line, if any."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().strip()
    if first.startswith(TAG):
        return first[len(TAG):].strip()
    if first.startswith("<!-- manifest: "):
        return first[len("<!-- manifest: "):].split()[0]
    return None


def require_manifest(path: str | os.PathLike, expected: str) -> None:
    found = manifest_tag(path)
    if found != expected:
        raise ManifestMismatch(
            f"{os.fspath(path)} was produced under manifest {found}, current run is {expected}; "
            "re-run the upstream stages"
        )


def file_digest(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
