import json

import pytest
from hypothesis import given, strategies as st

from blockclust.errors import (
    BadSelector,
    DuplicateAddress,
    InvalidTree,
    MalformedSignature,
    SchemaError,
    UnknownClass,
)
from blockclust.ingestion import parse_registry, parse_traces, selector_of, write_registry, write_traces
from blockclust.model import ContractClass

from helpers import addr, info, registry, trace

HEADER = "address,protocol,class,selectors\n"


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_minimal_trace(tmp_path):
    line = ('{"tx_id":"t1","calls":[{"i":0,"to":"0x01","m":"swap"},'
            '{"i":1,"p":0,"to":"0x02","m":"transfer"}]}\n')
    [t] = parse_traces(write(tmp_path, "t.jsonl", line))
    assert t.tx_id == "t1" and len(t.calls) == 2
    assert [c.parent for c in t.calls] == [None, 0]
    assert t.calls[0].callee == addr(1)


def test_empty_file(tmp_path):
    assert parse_traces(write(tmp_path, "t.jsonl", "")) == []


def test_dangling_parent_reports_line(tmp_path):
    good = '{"tx_id":"a","calls":[{"i":0,"to":"0x01"}]}\n'
    bad = '{"tx_id":"b","calls":[{"i":0,"to":"0x01"},{"i":1,"p":7,"to":"0x02"}]}\n'
    with pytest.raises(InvalidTree) as exc:
        parse_traces(write(tmp_path, "t.jsonl", good + bad))
    assert exc.value.line == 2


def test_schema_errors(tmp_path):
    for text in ("not json", '{"calls":[]}', '{"tx_id":"x","calls":[{"i":0}]}',
                 '{"tx_id":"x","calls":[{"i":0,"to":"0x01","s":"abc"}]}'):
        with pytest.raises(SchemaError):
            parse_traces(write(tmp_path, "t.jsonl", text + "\n"))


def test_collect_mode_counts(tmp_path):
    lines = [
        '{"tx_id":"a","calls":[{"i":0,"to":"0x01"}]}',
        "garbage",
        "",
        '{"tx_id":"b","calls":[{"i":0,"to":"0x01"},{"i":1,"p":3,"to":"0x02"}]}',
        '{"tx_id":"c","calls":[{"i":0,"to":"0x01"},{"i":1,"p":0,"to":"0x02"}]}',
    ]
    errors = []
    out = parse_traces(write(tmp_path, "t.jsonl", "\n".join(lines) + "\n"), errors)
    non_empty = sum(1 for l in lines if l.strip())
    assert len(out) == non_empty - len(errors)
    assert [e.line for e in errors] == [2, 4]
    assert [t.tx_id for t in out] == ["a", "c"]


def test_traces_round_trip(tmp_path):
    ts = [trace([None, 0, 1, 0], [1, 2, 3, 4], ["a", "b", "c", "d"], tx_id=f"t{i}") for i in range(3)]
    p = tmp_path / "t.jsonl"
    write_traces(ts, p)
    assert parse_traces(p) == ts


def test_registry_row_with_selectors(tmp_path):
    reg = parse_registry(write(tmp_path, "r.csv", HEADER + "0x01,Uniswap,other,a9059cbb;70a08231\n"))
    entry = reg[addr(1)]
    assert entry.protocol == "Uniswap"
    assert entry.contract_class is ContractClass.OTHER
    assert {s.hex for s in entry.selectors} == {"a9059cbb", "70a08231"}


def test_registry_empty_protocol(tmp_path):
    reg = parse_registry(write(tmp_path, "r.csv", HEADER + "0x02,,asset,\n"))
    assert reg[addr(2)].protocol is None
    assert reg[addr(2)].selectors == frozenset()


@pytest.mark.parametrize("row,err", [
    ("0x01,P,token,\n", UnknownClass),
    ("0x01,P,fd,a9059c\n", BadSelector),
    ("0x01,P,fd,\n0x0001,Q,asset,\n", DuplicateAddress),
])
def test_registry_errors(tmp_path, row, err):
    with pytest.raises(err):
        parse_registry(write(tmp_path, "r.csv", HEADER + row))


def test_registry_round_trip(tmp_path):
    reg = registry(
        info(1, "P", ContractClass.FACTORY_DEPLOYED, ["a9059cbb"]),
        info(2, None, ContractClass.ASSET),
        info(3, "Q", ContractClass.OTHER, ["70a08231", "a9059cbb"]),
    )
    p = tmp_path / "r.csv"
    write_registry(reg, p)
    assert parse_registry(p) == reg


def test_selector_rejects_spaces():
    with pytest.raises(MalformedSignature):
        selector_of("transfer(address, uint256)")
    for bad in ("", "transfer", "transfer(address", "(address)", "f(a))("):
        with pytest.raises(MalformedSignature):
            selector_of(bad)


WELL_KNOWN = [
    "transfer(address,uint256)", "balanceOf(address)", "approve(address,uint256)",
    "transferFrom(address,address,uint256)", "totalSupply()", "allowance(address,address)",
    "swapExactTokensForTokens(uint256,uint256,address[],address,uint256)", "deposit()", "withdraw(uint256)",
]


def test_well_known_selectors_distinct():
    assert len({selector_of(s) for s in WELL_KNOWN}) == len(WELL_KNOWN)


@given(st.sampled_from(WELL_KNOWN))
def test_selector_is_pure(sig):
    assert selector_of(sig) == selector_of(str(sig))
