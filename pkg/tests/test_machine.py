import numpy as np
import pytest
from hypothesis import given, settings

from knitc.instructions import BACK, FRONT, PAPER_FREQUENCIES, Instruction, InstructionMap, random_map
from knitc.machine import (DEMOTE_OUT_OF_BOUNDS_MOVE, ERROR, UNPAIRED_CROSS_TO_MOVE, WARNING,
                           IllegalXfer, InvalidMap, KopsFormatError, MachineOp, compile_map,
                           expected_placement, format_op, parse_program, repair, serialize_program,
                           simulate, validate)

from conftest import instruction_maps


def kinds(report, severity=None):
    return [i.kind for i in report.issues if severity is None or i.severity == severity]


def ops_text(m):
    return [format_op(op) for op in compile_map(m)]


def corrupt(m: InstructionMap, rng) -> InstructionMap:
    """Inject unpaired crosses, conflicting cross orders and off-bed moves."""
    arr = m.codes.copy()
    h, w = arr.shape
    for _ in range(int(rng.integers(1, 6))):
        r, c = int(rng.integers(h)), int(rng.integers(w))
        kind = rng.integers(3)
        if kind == 0:
            arr[r, c] = rng.choice([Instruction.XRp, Instruction.XRm, Instruction.XLp, Instruction.XLm])
        elif kind == 1 and c + 1 < w:
            arr[r, c], arr[r, c + 1] = Instruction.XRp, Instruction.XLp
        else:
            arr[r, 0] = rng.choice([Instruction.FL1, Instruction.FL2, Instruction.BL1, Instruction.BL2])
            arr[r, w - 1] = rng.choice([Instruction.FR1, Instruction.FR2, Instruction.BR1, Instruction.BR2])
    return InstructionMap(arr)


# -- validate ---------------------------------------------------------------

def test_all_knit_is_clean():
    assert validate(InstructionMap.filled(20, 20)).issues == []


def test_unpaired_cross():
    report = validate(InstructionMap.from_rows(["XR+ K"]))
    assert [(i.kind, i.row, i.columns, i.severity) for i in report.issues] == [
        ("unpaired_cross", 0, (0,), ERROR)]


def test_out_of_bounds_move():
    report = validate(InstructionMap.from_rows(["FL1 K"]))
    assert kinds(report, ERROR) == ["move_out_of_bounds"]


@pytest.mark.parametrize("row", ["XR+ XL+", "XR- XL-", "XR+ XR- XL- XL-", "XR+ XL- XL+"])
def test_conflicting_cross_orders(row):
    assert kinds(validate(InstructionMap.from_rows([row])), ERROR) == ["cross_conflict"]


@pytest.mark.parametrize("row", ["XR+ XL-", "XR- XL+", "XR+ XR+ XL- XL-", "K XR- XL+ XL+ P"])
def test_valid_cables(row):
    assert validate(InstructionMap.from_rows([row])).ok


def test_crossing_moves_warn():
    report = validate(InstructionMap.from_rows(["FR2 FL1 K"]))
    assert report.ok
    assert kinds(report, WARNING) == ["crossing_moves"]


def test_converging_moves_do_not_warn():
    assert validate(InstructionMap.from_rows(["FR1 S FL1"])).issues == []


def test_unreached_stack_warns():
    report = validate(InstructionMap.from_rows(["K S K"]))
    assert report.ok and kinds(report) == ["unreached_stack"]


def test_move_onto_opposite_bed_transfer_is_error():
    # the back move would pick up the front stack loop parked on the back bed
    report = validate(InstructionMap.from_rows(["FR1 S BL1"]))
    assert kinds(report, ERROR) == ["move_bed_conflict"]


# -- repair -----------------------------------------------------------------

def test_repair_valid_map_is_identity():
    m = InstructionMap.from_rows(["K XR+ XL- P", "FR1 S K K"])
    out, log = repair(m)
    assert out == m and len(log) == 0


def test_repair_unpaired_cross_front():
    out, log = repair(InstructionMap.from_rows(["XR+ K"]))
    assert out.row_codes(0) == ["FR1", "K"]
    assert [a.kind for a in log.actions] == [UNPAIRED_CROSS_TO_MOVE]


def test_repair_unpaired_cross_back():
    out, _ = repair(InstructionMap.from_rows(["P XL-"]))
    assert out.row_codes(0) == ["P", "BL1"]


def test_repair_conflict_reorders_left_upper():
    out, _ = repair(InstructionMap.from_rows(["XR- XL- K"]))
    assert out.row_codes(0) == ["XR+", "XL-", "K"]


def test_repair_out_of_bounds_demotes():
    out, log = repair(InstructionMap.from_rows(["BL2 K FR1"]))
    assert out.row_codes(0) == ["P", "K", "K"]
    assert {a.kind for a in log.actions} == {DEMOTE_OUT_OF_BOUNDS_MOVE}


def test_unpaired_cross_at_edge_becomes_stitch():
    out, log = repair(InstructionMap.from_rows(["XL+ K"]))
    assert out.row_codes(0) == ["K", "K"]
    assert [a.kind for a in log.actions] == [UNPAIRED_CROSS_TO_MOVE, DEMOTE_OUT_OF_BOUNDS_MOVE]


def test_repair_corrupted_maps(rng):
    freq = np.array(PAPER_FREQUENCIES)
    for i in range(200):
        base = random_map(rng, weights=freq if i % 2 else None)
        m = corrupt(base, rng)
        out, log = repair(m, seed=i)
        assert validate(out).ok
        assert repair(out)[0] == out
        assert log.replay(m) == out
        compile_map(out)


@settings(max_examples=200, deadline=None)
@given(instruction_maps(max_width=10, max_height=6))
def test_repair_total_and_idempotent(m):
    out, log = repair(m)
    assert validate(out).ok
    again, again_log = repair(out)
    assert again == out and len(again_log) == 0
    assert log.replay(m) == out


# -- compile / simulate ------------------------------------------------------

def test_compile_plain_row():
    assert ops_text(InstructionMap.from_rows(["K K K"])) == ["knit f.0", "knit f.1", "knit f.2"]


def test_compile_purl_transfers_first():
    assert ops_text(InstructionMap.from_rows(["P"])) == ["xfer f.0 b.0", "knit b.0"]


def test_compile_move_right():
    assert ops_text(InstructionMap.from_rows(["FR1 K"])) == [
        "knit f.0", "knit f.1", "xfer f.0 b.0", "rack -1", "xfer b.0 f.1", "rack 0"]


def test_fig2_transfer_sequence_state():
    state = simulate(compile_map(InstructionMap.from_rows(["FR1 K"])))
    assert state.front.get(0, []) == []
    assert len(state.front[1]) == 2
    assert state.racking == 0


def test_compile_back_move_racks_positive():
    text = ops_text(InstructionMap.from_rows(["BR1 P"]))
    assert "rack 1" in text and "xfer f.0 b.1" in text


def test_compile_invalid_raises():
    with pytest.raises(InvalidMap) as exc:
        compile_map(InstructionMap.from_rows(["XR+ K"]))
    assert exc.value.report.errors[0].kind == "unpaired_cross"


def test_simulate_empty():
    state = simulate([])
    assert state.placement() == {} and state.racking == 0


def test_simulate_knit_then_tuck():
    state = simulate([MachineOp.knit(FRONT, 0), MachineOp.tuck(FRONT, 0)])
    assert len(state.front[0]) == 2


def test_knit_pulls_through_existing_loops():
    state = simulate([MachineOp.tuck(FRONT, 0), MachineOp.tuck(FRONT, 0), MachineOp.knit(FRONT, 0)])
    assert state.front[0] == [(2, 0)]
    assert state.parents[(2, 0)] == {(0, 0), (1, 0)}


def test_illegal_xfer():
    with pytest.raises(IllegalXfer) as exc:
        simulate([MachineOp.knit(FRONT, 0), MachineOp.rack(1), MachineOp.xfer(FRONT, 0, BACK, 0)])
    assert exc.value.position == 2
    with pytest.raises(IllegalXfer):
        simulate([MachineOp.xfer(FRONT, 0, FRONT, 1)])


def test_kops_round_trip():
    prog = compile_map(InstructionMap.from_rows(["FR1 S P", "XR+ XL- T"]))
    text = serialize_program(prog)
    assert parse_program(text) == prog
    assert parse_program("; header\nrack -2 ; comment\n\nknit b.3\n") == [
        MachineOp.rack(-2), MachineOp.knit(BACK, 3)]
    with pytest.raises(KopsFormatError):
        parse_program("knit x.1\n")


@pytest.mark.parametrize("wr", [1, 2])
@pytest.mark.parametrize("wl", [1, 2])
@pytest.mark.parametrize("lead", ["K", "P"])
def test_cross_pair_displacement(wr, wl, lead):
    # brute-force check straight from the simulated machine
    row = [lead] + ["XR+"] * wr + ["XL-"] * wl + [lead]
    m = InstructionMap.from_rows([row])
    state = simulate(compile_map(m), cast_on=len(row))
    where = {loop: n for bed in (FRONT, BACK) for n, loops in state.beds[bed].items() for loop in loops}
    for c in range(1, 1 + wr):
        assert where[(0, c)] == c + wl
    for c in range(1 + wr, 1 + wr + wl):
        assert where[(0, c)] == c - wr


def test_placement_all_knit():
    p = expected_placement(InstructionMap.filled(4, 1))
    assert p.needles == {(FRONT, n): frozenset({(0, n)}) for n in range(4)}


def test_placement_cable_swaps():
    p = expected_placement(InstructionMap.from_rows(["XR+ XL-"]))
    assert p.needles[(FRONT, 1)] == {(0, 0)}
    assert p.needles[(FRONT, 0)] == {(0, 1)}


def test_placement_rejects_invalid():
    with pytest.raises(InvalidMap):
        expected_placement(InstructionMap.from_rows(["XR+"]))


def test_oracle_equivalence_random(rng):
    for i in range(150):
        w, h = int(rng.integers(1, 21)), int(rng.integers(1, 21))
        m, _ = repair(random_map(rng, w, h))
        state = simulate(compile_map(m), cast_on=w)
        assert expected_placement(m).matches(state), m


def test_compile_racking_returns_to_zero(rng):
    for _ in range(50):
        m, _ = repair(random_map(rng))
        racking = 0
        for op in compile_map(m):
            if op.kind == "rack":
                racking = op.racking
            if op.kind == "knit" and op.needle == 0:
                assert racking == 0
        assert racking == 0
