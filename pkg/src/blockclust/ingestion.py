"""Readers and writers for the two on-disk inputs.

``traces.jsonl`` holds one transaction per line::

    {"tx_id": str, "calls": [{"i": int, "p": int?, "to": hexaddr, "m": str?, "s": hex8?}]}

``registry.csv`` has the header ``address,protocol,class,selectors`` where
class is one of ``fd``, ``asset``, ``other`` and selectors are
``;``-separated 8-digit hex strings.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from typing import Iterable, Optional

from .errors import (
    BadAddress,
    BadSelector,
    DataError,
    DuplicateAddress,
    InvalidTree,
    LineError,
    MalformedSignature,
    SchemaError,
    TraceError,
    UnknownClass,
)
from .keccak import keccak256
from .model import (
    Address,
    CallRecord,
    ContractClass,
    ContractInfo,
    ContractRegistry,
    Selector,
    TransactionTrace,
    validate_trace,
)

log = logging.getLogger(__name__)

CLASS_CODES = {
    "fd": ContractClass.FACTORY_DEPLOYED,
    "asset": ContractClass.ASSET,
    "other": ContractClass.OTHER,
}
_CLASS_NAMES = {v: k for k, v in CLASS_CODES.items()}
REGISTRY_HEADER = ("address", "protocol", "class", "selectors")


def selector_of(signature: str) -> Selector:
    """First four bytes of the Keccak-256 digest of a canonical signature.

    >>> selector_of("transfer(address,uint256)").hex
    'a9059cbb'
    """
    if not signature or any(ch.isspace() for ch in signature):
        raise MalformedSignature(f"whitespace or empty signature: {signature!r}")
    open_at = signature.find("(")
    if open_at <= 0 or not signature.endswith(")"):
        raise MalformedSignature(f"expected name(types): {signature!r}")
    depth = 0
    for ch in signature[open_at:]:
        depth += {"(": 1, ")": -1}.get(ch, 0)
        if depth < 0:
            break
    if depth != 0 or "(" in signature[:open_at] or ")" in signature[:open_at]:
        raise MalformedSignature(f"unbalanced parentheses: {signature!r}")
    return Selector(keccak256(signature.encode("utf-8"))[:4])


def _parse_call(obj, line: int) -> CallRecord:
    if not isinstance(obj, dict):
        raise SchemaError(line, "call must be an object")
    idx, parent = obj.get("i"), obj.get("p")
    if not isinstance(idx, int) or isinstance(idx, bool):
        raise SchemaError(line, f"call index must be an integer: {idx!r}")
    if parent is not None and (not isinstance(parent, int) or isinstance(parent, bool)):
        raise SchemaError(line, f"parent must be an integer: {parent!r}")
    to, method, sel = obj.get("to"), obj.get("m"), obj.get("s")
    if not isinstance(to, str):
        raise SchemaError(line, "call needs a 'to' address")
    if method is not None and not isinstance(method, str):
        raise SchemaError(line, "'m' must be a string")
    if sel is not None and not isinstance(sel, str):
        raise SchemaError(line, "'s' must be a hex string")
    try:
        return CallRecord(idx, parent, Address.from_hex(to), method or "", Selector.from_hex(sel) if sel else None)
    except (BadAddress, BadSelector) as exc:
        raise SchemaError(line, str(exc)) from None


def parse_trace_line(text: str, line: int) -> TransactionTrace:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(line, f"invalid JSON: {exc.msg}") from None
    if not isinstance(obj, dict) or not isinstance(obj.get("tx_id"), str):
        raise SchemaError(line, "expected an object with a string 'tx_id'")
    calls = obj.get("calls")
    if not isinstance(calls, list):
        raise SchemaError(line, "'calls' must be a list")
    trace = TransactionTrace(obj["tx_id"], tuple(_parse_call(c, line) for c in calls))
    try:
        validate_trace(trace)
    except TraceError as exc:
        raise InvalidTree(line, f"{exc.kind}: {exc}") from None
    return trace


def parse_traces(path: str | os.PathLike, errors: Optional[list[LineError]] = None) -> list[TransactionTrace]:
    """Read a JSON-Lines trace file.

    By default the first malformed line raises. When ``errors`` is a list,
    malformed lines are appended to it (with their 1-based line number) and
    skipped instead.
    """
    traces = []
    with open(path, encoding="utf-8") as fh:
        for lineno, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                traces.append(parse_trace_line(text, lineno))
            except LineError as exc:
                if errors is None:
                    raise
                log.warning("skipping %s", exc)
                errors.append(exc)
    return traces


def write_traces(traces: Iterable[TransactionTrace], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in traces:
            fh.write(json.dumps(t.to_dict(), separators=(",", ":")) + "\n")


def parse_registry(path: str | os.PathLike) -> ContractRegistry:
    registry: ContractRegistry = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(REGISTRY_HEADER) - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"registry header lacks {sorted(missing)}")
        for row in reader:
            rowno = reader.line_num
            try:
                address = Address.from_hex(row["address"] or "")
            except BadAddress as exc:
                raise BadAddress(f"row {rowno}: {exc}") from None
            if address in registry:
                raise DuplicateAddress(f"row {rowno}: {address} listed twice")
            code = (row["class"] or "").strip().lower()
            cls = CLASS_CODES.get(code)
            if cls is None:
                try:
                    cls = ContractClass(code)
                except ValueError:
                    raise UnknownClass(f"row {rowno}: class {code!r} not in fd/asset/other") from None
            selectors = set()
            for part in (row["selectors"] or "").split(";"):
                if part.strip():
                    try:
                        selectors.add(Selector.from_hex(part))
                    except BadSelector as exc:
                        raise BadSelector(f"row {rowno}: {exc}") from None
            protocol = (row["protocol"] or "").strip() or None
            registry[address] = ContractInfo(address, protocol, cls, frozenset(selectors))
    return registry


def write_registry(registry: ContractRegistry, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REGISTRY_HEADER)
        for info in registry.values():
            w.writerow([
                str(info.address),
                info.protocol or "",
                _CLASS_NAMES[info.contract_class],
                ";".join(sorted(s.hex for s in info.selectors)),
            ])
