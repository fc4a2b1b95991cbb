"""Validation, repair, compilation and simulation of instruction maps on a V-bed machine.

Racking convention: at racking ``r`` front needle ``n`` faces back needle ``n + r``.
Loops are identified by the (row, column) of the instruction that created them;
cast-on loops use row -1.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

from .instructions import (BACK, BASE_OP, CROSS_DIRECTION, CROSS_ORDER, EXPLICIT_SIDE, FRONT,
                           IS_CROSS, IS_MOVE, IS_TRANSFER, KNIT, MISS, MOVE_CODE, MOVE_OFFSET, TUCK,
                           Instruction, InstructionMap, resolve_sides, stack_landers)

BED_CHARS = ("f", "b")

_OFF = MOVE_OFFSET.tolist()
_BASE = BASE_OP.tolist()
_XFER = IS_TRANSFER.tolist()
_MOVE = IS_MOVE.tolist()
_CDIR = CROSS_DIRECTION.tolist()
_CORD = CROSS_ORDER.tolist()
_S = int(Instruction.S)

ERROR = "error"
WARNING = "warning"


class MachineError(Exception):
    pass


class IllegalXfer(MachineError):
    def __init__(self, position: int, op: "MachineOp", racking: int):
        super().__init__(f"op {position} ({format_op(op)}) is not aligned at racking {racking}")
        self.position = position


class InvalidMap(MachineError):
    def __init__(self, report: "ValidationReport"):
        errors = [i for i in report.issues if i.severity == ERROR]
        super().__init__(f"map has {len(errors)} validation error(s): "
                         + "; ".join(str(i) for i in errors[:5]))
        self.report = report


class KopsFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# machine operations

@dataclass(frozen=True)
class MachineOp:
    """One low-level operation. ``kind`` is rack/knit/tuck/miss/xfer.

    ``rack`` uses ``racking``; base ops use ``bed``/``needle``; ``xfer`` moves
    ``bed.needle`` to ``to_bed.to_needle``.
    """

    kind: str
    bed: int = 0
    needle: int = 0
    to_bed: int = 0
    to_needle: int = 0
    racking: int = 0

    @staticmethod
    def rack(r: int) -> "MachineOp":
        return MachineOp("rack", racking=r)

    @staticmethod
    def knit(bed: int, n: int) -> "MachineOp":
        return MachineOp("knit", bed, n)

    @staticmethod
    def tuck(bed: int, n: int) -> "MachineOp":
        return MachineOp("tuck", bed, n)

    @staticmethod
    def miss(bed: int, n: int) -> "MachineOp":
        return MachineOp("miss", bed, n)

    @staticmethod
    def xfer(bed: int, n: int, to_bed: int, to_n: int) -> "MachineOp":
        return MachineOp("xfer", bed, n, to_bed, to_n)


MachineProgram = list  # list[MachineOp]; initial racking is 0


def format_op(op: MachineOp) -> str:
    if op.kind == "rack":
        return f"rack {op.racking}"
    loc = f"{BED_CHARS[op.bed]}.{op.needle}"
    if op.kind == "xfer":
        return f"xfer {loc} {BED_CHARS[op.to_bed]}.{op.to_needle}"
    return f"{op.kind} {loc}"


def serialize_program(ops: Iterable[MachineOp]) -> str:
    return "".join(format_op(op) + "\n" for op in ops)


def _parse_loc(tok: str, lineno: int) -> tuple[int, int]:
    bed, _, idx = tok.partition(".")
    if bed not in BED_CHARS or not idx.isdigit():
        raise KopsFormatError(f"line {lineno}: bad needle {tok!r}")
    return BED_CHARS.index(bed), int(idx)


def parse_program(text: str) -> list[MachineOp]:
    ops = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split(";", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        kind = parts[0]
        if kind == "rack" and len(parts) == 2:
            try:
                ops.append(MachineOp.rack(int(parts[1])))
            except ValueError:
                raise KopsFormatError(f"line {lineno}: bad racking {parts[1]!r}") from None
        elif kind in ("knit", "tuck", "miss") and len(parts) == 2:
            bed, n = _parse_loc(parts[1], lineno)
            ops.append(MachineOp(kind, bed, n))
        elif kind == "xfer" and len(parts) == 3:
            bed, n = _parse_loc(parts[1], lineno)
            to_bed, to_n = _parse_loc(parts[2], lineno)
            ops.append(MachineOp.xfer(bed, n, to_bed, to_n))
        else:
            raise KopsFormatError(f"line {lineno}: cannot parse {raw!r}")
    return ops


def xfer_racking(from_bed: int, from_n: int, to_n: int) -> int:
    """Racking at which ``from_bed.from_n`` faces needle ``to_n`` on the other bed."""
    return to_n - from_n if from_bed == FRONT else from_n - to_n


# ---------------------------------------------------------------------------
# validation

@dataclass(frozen=True)
class Issue:
    kind: str
    row: int
    columns: tuple[int, ...]
    severity: str

    def __str__(self) -> str:
        cols = ",".join(map(str, self.columns))
        return f"{self.severity} {self.kind} at row {self.row} columns {cols}"


@dataclass
class ValidationReport:
    issues: list[Issue] = field(default_factory=list)

    @property
    def errors(self) -> list[Issue]:
        return [i for i in self.issues if i.severity == ERROR]

    @property
    def warnings(self) -> list[Issue]:
        return [i for i in self.issues if i.severity == WARNING]

    @property
    def ok(self) -> bool:
        return not self.errors


class CrossRun(NamedTuple):
    start: int
    stop: int
    direction: int


class CrossPair(NamedTuple):
    right: CrossRun
    left: CrossRun


def cross_runs(line) -> list[CrossRun]:
    runs = []
    c, w = 0, len(line)
    while c < w:
        d = _CDIR[line[c]]
        if d == 0:
            c += 1
            continue
        start = c
        while c < w and _CDIR[line[c]] == d:
            c += 1
        runs.append(CrossRun(start, c, int(d)))
    return runs


def cross_pairs(line) -> tuple[list[CrossPair], list[CrossRun]]:
    """Split the cross runs of a row into (pairs, unpaired runs).

    A pair is a maximal right-crossing run immediately followed by a maximal
    left-crossing run.
    """
    if not isinstance(line, list):
        line = line.tolist()
    runs = cross_runs(line)
    pairs, unpaired = [], []
    i = 0
    while i < len(runs):
        run = runs[i]
        if (run.direction > 0 and i + 1 < len(runs)
                and runs[i + 1].direction < 0 and runs[i + 1].start == run.stop):
            pairs.append(CrossPair(run, runs[i + 1]))
            i += 2
        else:
            unpaired.append(run)
            i += 1
    return pairs, unpaired


def _run_orders(line, run: CrossRun) -> set[int]:
    return {_CORD[line[c]] for c in range(run.start, run.stop)}


def pair_conflicts(line, pair: CrossPair) -> bool:
    ro, lo = _run_orders(line, pair.right), _run_orders(line, pair.left)
    return len(ro) != 1 or len(lo) != 1 or ro == lo


def _destinations(line: list, pairs: list[CrossPair]) -> list[int]:
    dest = [c + _OFF[code] for c, code in enumerate(line)]
    for right, left in pairs:
        for c in range(right.start, right.stop):
            dest[c] += left.stop - left.start
        for c in range(left.start, left.stop):
            dest[c] -= right.stop - right.start
    return dest


def validate(m: InstructionMap) -> ValidationReport:
    """Report structural problems that prevent (errors) or weaken (warnings) compilation.

    Errors: unpaired cross runs, cross pairs with conflicting order, moves whose
    target needle is off the bed, and moves landing on a transfer instruction
    that works on the other bed (its parked loop would be picked up).
    Warnings: moves in one row whose trajectories cross, stacks no move reaches.
    """
    codes = m.codes
    h, w = codes.shape
    sides = resolve_sides(m, strict=False).tolist()
    issues: list[Issue] = []
    for r in range(h):
        line = codes[r].tolist()
        pairs, unpaired = cross_pairs(line)
        for run in unpaired:
            issues.append(Issue("unpaired_cross", r, tuple(range(run.start, run.stop)), ERROR))
        for pair in pairs:
            if pair_conflicts(line, pair):
                issues.append(Issue("cross_conflict", r,
                                    tuple(range(pair.right.start, pair.left.stop)), ERROR))
        movers = [c for c in range(w) if _MOVE[line[c]]]
        for c in movers:
            d = c + _OFF[line[c]]
            if not 0 <= d < w:
                issues.append(Issue("move_out_of_bounds", r, (c,), ERROR))
            elif _XFER[line[d]] and sides[r][d] != sides[r][c]:
                issues.append(Issue("move_bed_conflict", r, (c, d), ERROR))
        for i, a in enumerate(movers):
            ta = a + _OFF[line[a]]
            for b in movers[i + 1:]:
                tb = b + _OFF[line[b]]
                if (a - b) * (ta - tb) < 0:
                    issues.append(Issue("crossing_moves", r, (a, b), WARNING))
        landed = stack_landers(codes, r)
        for c in range(w):
            if line[c] == _S and c not in landed:
                issues.append(Issue("unreached_stack", r, (c,), WARNING))
    return ValidationReport(issues)


# ---------------------------------------------------------------------------
# repair

UNPAIRED_CROSS_TO_MOVE = "unpairedCrossToMove"
REORDER_CONFLICTING_CROSS = "reorderConflictingCross"
DEMOTE_OUT_OF_BOUNDS_MOVE = "demoteOutOfBoundsMove"
DEMOTE_CONFLICTING_MOVE = "demoteConflictingMove"


@dataclass(frozen=True)
class RepairAction:
    kind: str
    row: int
    col: int
    before: int
    after: int


@dataclass
class RepairLog:
    actions: list[RepairAction] = field(default_factory=list)

    def replay(self, m: InstructionMap) -> InstructionMap:
        arr = m.codes.copy()
        for a in self.actions:
            arr[a.row, a.col] = a.after
        return InstructionMap(arr)

    def __len__(self) -> int:
        return len(self.actions)


def _plain_stitch(side: int) -> int:
    return Instruction.K if side == FRONT else Instruction.P


def repair(m: InstructionMap, seed: int = 0) -> tuple[InstructionMap, RepairLog]:
    """Relax invalid instructions until the map validates without errors.

    Unpaired crosses become offset-1 moves in their direction on their resolved
    bed; conflicting cross pairs are rescheduled so the right-moving run passes
    on top; moves off the bed or onto an opposite-bed transfer become plain
    stitches on their bed. ``seed`` is accepted for schedule randomisation but the
    current schedule choice is deterministic.
    """
    del seed
    arr = m.codes.copy()
    log = RepairLog()

    def set_cell(kind, r, c, code):
        if arr[r, c] != code:
            log.actions.append(RepairAction(kind, r, c, int(arr[r, c]), int(code)))
            arr[r, c] = code

    # each pass strictly reduces the number of crosses or moves, so this terminates
    while True:
        current = InstructionMap(arr)
        sides = resolve_sides(current, strict=False)
        changed = False
        h, w = arr.shape
        for r in range(h):
            line = arr[r]
            pairs, unpaired = cross_pairs(line)
            for run in unpaired:
                for c in range(run.start, run.stop):
                    set_cell(UNPAIRED_CROSS_TO_MOVE, r, c, MOVE_CODE[(int(sides[r, c]), run.direction)])
                    changed = True
            for pair in pairs:
                if pair_conflicts(line, pair):
                    for c in range(pair.right.start, pair.right.stop):
                        set_cell(REORDER_CONFLICTING_CROSS, r, c, Instruction.XRp)
                    for c in range(pair.left.start, pair.left.stop):
                        set_cell(REORDER_CONFLICTING_CROSS, r, c, Instruction.XLm)
                    changed = True
        if changed:
            continue
        report = validate(current)
        if report.ok:
            return current, log
        for issue in report.errors:
            c = issue.columns[0]
            if issue.kind == "move_out_of_bounds":
                set_cell(DEMOTE_OUT_OF_BOUNDS_MOVE, issue.row, c, _plain_stitch(int(EXPLICIT_SIDE[arr[issue.row, c]])))
            elif issue.kind == "move_bed_conflict":
                set_cell(DEMOTE_CONFLICTING_MOVE, issue.row, c, _plain_stitch(int(EXPLICIT_SIDE[arr[issue.row, c]])))


# ---------------------------------------------------------------------------
# compilation

def _move_schedule():
    # smaller |offset| first, right before left, front bed before back bed
    for off in (1, -1, 2, -2):
        for side in (FRONT, BACK):
            yield off, side


def compile_map(m: InstructionMap) -> list[MachineOp]:
    """Compile a map into machine operations, one five-step block per row.

    Assumes one cast-on loop on every front needle. Per row: (1) gather loops on
    the bed each instruction uses, (2) knit/tuck/miss left to right, (3) park
    every transfer instruction's loop on the opposite bed, (4) return moves by
    (offset, direction) group at their racking, then cross pairs with the lower
    run first, (5) return stacks at racking 0.
    """
    report = validate(m)
    if not report.ok:
        raise InvalidMap(report)
    codes = m.codes
    h, w = codes.shape
    sides = resolve_sides(m, strict=False)
    occupied = {(FRONT, n) for n in range(w)}
    ops: list[MachineOp] = []
    racking = 0

    def xfer(bed, n, to_bed, to_n):
        ops.append(MachineOp.xfer(bed, n, to_bed, to_n))
        if (bed, n) in occupied:
            occupied.discard((bed, n))
            occupied.add((to_bed, to_n))

    def rack(r):
        nonlocal racking
        if r != racking:
            ops.append(MachineOp.rack(r))
            racking = r

    for row in range(h):
        line, side = codes[row].tolist(), sides[row].tolist()
        pairs, _ = cross_pairs(line)
        transfer_cols = [c for c in range(w) if _XFER[line[c]]]

        for c in range(w):
            s = side[c]
            if (1 - s, c) in occupied:
                xfer(1 - s, c, s, c)

        for c in range(w):
            s, op = side[c], _BASE[line[c]]
            if op == KNIT:
                ops.append(MachineOp.knit(s, c))
                occupied.add((s, c))
            elif op == TUCK:
                ops.append(MachineOp.tuck(s, c))
                occupied.add((s, c))
            else:
                ops.append(MachineOp.miss(s, c))

        for c in transfer_cols:
            s = side[c]
            xfer(s, c, 1 - s, c)

        for off, bed in _move_schedule():
            cols = [c for c in transfer_cols if _OFF[line[c]] == off and side[c] == bed]
            if cols:
                rack(xfer_racking(1 - bed, cols[0], cols[0] + off))
                for c in cols:
                    xfer(1 - bed, c, bed, c + off)

        for right, left in pairs:
            runs = [(right, left.stop - left.start), (left, -(right.stop - right.start))]
            runs.sort(key=lambda rd: _CORD[line[rd[0].start]])  # lower (-) first
            for run, disp in runs:
                bed = side[run.start]
                rack(xfer_racking(1 - bed, run.start, run.start + disp))
                for c in range(run.start, run.stop):
                    xfer(1 - bed, c, bed, c + disp)

        rack(0)
        for c in transfer_cols:
            if line[c] == _S:
                s = side[c]
                xfer(1 - s, c, s, c)
    return ops


# ---------------------------------------------------------------------------
# simulation

LoopId = tuple  # (row, column)


@dataclass
class MachineState:
    beds: tuple[dict, dict] = field(default_factory=lambda: (defaultdict(list), defaultdict(list)))
    racking: int = 0
    parents: dict = field(default_factory=dict)

    @property
    def front(self) -> dict:
        return self.beds[FRONT]

    @property
    def back(self) -> dict:
        return self.beds[BACK]

    def placement(self) -> dict[tuple[int, int], frozenset]:
        out = {}
        for bed in (FRONT, BACK):
            for n, loops in self.beds[bed].items():
                if loops:
                    out[(bed, n)] = frozenset(loops)
        return out

    def describe(self) -> str:
        lines = [f"racking {self.racking}"]
        needles = sorted({n for bed in self.beds for n, v in bed.items() if v})
        for n in needles:
            for bed in (FRONT, BACK):
                loops = self.beds[bed].get(n)
                if loops:
                    ids = " ".join(f"{r}:{c}" for r, c in sorted(loops))
                    lines.append(f"{BED_CHARS[bed]}.{n}\t{len(loops)}\t{ids}")
        return "\n".join(lines) + "\n"


def simulate(program: Iterable[MachineOp], cast_on: int = 0) -> MachineState:
    """Execute a program. Needles start empty unless ``cast_on`` front needles get a loop.

    Every base op on a needle column advances that column's row counter, so the
    loop created by the k-th knit/tuck/miss slot of column n is named (k, n).
    """
    state = MachineState()
    for n in range(cast_on):
        state.front[n].append((-1, n))
    row_of = defaultdict(int)
    for pos, op in enumerate(program):
        if op.kind == "rack":
            state.racking = op.racking
        elif op.kind == "xfer":
            if op.bed == op.to_bed:
                raise IllegalXfer(pos, op, state.racking)
            f_n, b_n = (op.needle, op.to_needle) if op.bed == FRONT else (op.to_needle, op.needle)
            if f_n + state.racking != b_n:
                raise IllegalXfer(pos, op, state.racking)
            src = state.beds[op.bed]
            moved = src.pop(op.needle, [])
            state.beds[op.to_bed][op.to_needle].extend(moved)
        else:
            loop = (row_of[op.needle], op.needle)
            row_of[op.needle] += 1
            needle = state.beds[op.bed][op.needle]
            if op.kind == "knit":
                state.parents[loop] = frozenset(needle)
                needle[:] = [loop]
            elif op.kind == "tuck":
                state.parents[loop] = frozenset()
                needle.append(loop)
            elif op.kind != "miss":
                raise MachineError(f"unknown op kind {op.kind!r}")
    return state


@dataclass
class Placement:
    needles: dict[tuple[int, int], frozenset]
    parents: dict

    def matches(self, state: MachineState) -> bool:
        return self.needles == state.placement() and self.parents == state.parents


def expected_placement(m: InstructionMap, cast_on: bool = True) -> Placement:
    """Final loop placement and loop parentage, computed directly from instruction meanings.

    Each row gathers every column's loops onto the bed its instruction uses,
    applies the base operation, then relocates each moving loop to its column
    plus offset (moves) or across its partner run (cross pairs).
    """
    report = validate(m)
    if not report.ok:
        raise InvalidMap(report)
    codes = m.codes
    h, w = codes.shape
    sides = resolve_sides(m, strict=False).tolist()
    at: dict[tuple[int, int], set] = defaultdict(set)
    if cast_on:
        for n in range(w):
            at[(FRONT, n)].add((-1, n))
    parents = {}
    for r in range(h):
        line = codes[r].tolist()
        pairs, _ = cross_pairs(line)
        dest = _destinations(line, pairs)
        for c in range(w):
            s = sides[r][c]
            at[(s, c)] |= at.pop((1 - s, c), set())
            op = _BASE[line[c]]
            if op == KNIT:
                parents[(r, c)] = frozenset(at[(s, c)])
                at[(s, c)] = {(r, c)}
            elif op == TUCK:
                parents[(r, c)] = frozenset()
                at[(s, c)].add((r, c))
        moving = {}
        for c in range(w):
            if dest[c] != c:
                s = sides[r][c]
                moving[c] = (s, at.pop((s, c), set()))
        for c, (s, loops) in moving.items():
            at[(s, dest[c])] |= loops
    needles = {k: frozenset(v) for k, v in at.items() if v}
    return Placement(needles, parents)
