"""The 17-instruction knitting DSL and the instruction-map grid.

Maps are stored bottom row first: row 0 is the first knitted row.
"""

from __future__ import annotations

from enum import IntEnum
from typing import Iterable, Sequence

import numpy as np


class Instruction(IntEnum):
    K = 0
    P = 1
    T = 2
    M = 3
    FR1 = 4
    FR2 = 5
    FL1 = 6
    FL2 = 7
    BR1 = 8
    BR2 = 9
    BL1 = 10
    BL2 = 11
    XRp = 12
    XRm = 13
    XLp = 14
    XLm = 15
    S = 16

    @property
    def code(self) -> str:
        return CODES[self]

    @classmethod
    def from_code(cls, code: str) -> "Instruction":
        return cls(CODE_INDEX[code])


NUM_INSTRUCTIONS = 17
CODES = ("K", "P", "T", "M", "FR1", "FR2", "FL1", "FL2",
         "BR1", "BR2", "BL1", "BL2", "XR+", "XR-", "XL+", "XL-", "S")
CODE_INDEX = {c: i for i, c in enumerate(CODES)}

FRONT, BACK = 0, 1
SIDE_NAMES = ("front", "back")

# base operation per code
KNIT, TUCK, MISS = 0, 1, 2
BASE_OP = np.array([KNIT, KNIT, TUCK, MISS] + [KNIT] * 13, dtype=np.int8)

# explicit side per code: 0 front, 1 back, -1 inherited
EXPLICIT_SIDE = np.array(
    [FRONT, BACK, -1, -1, FRONT, FRONT, FRONT, FRONT,
     BACK, BACK, BACK, BACK, -1, -1, -1, -1, -1], dtype=np.int8)

MOVE_OFFSET = np.array(
    [0, 0, 0, 0, 1, 2, -1, -2, 1, 2, -1, -2, 0, 0, 0, 0, 0], dtype=np.int8)

# cross direction: 0 none, +1 right, -1 left; cross order: 0 none, +1 upper, -1 lower
CROSS_DIRECTION = np.array([0] * 12 + [1, 1, -1, -1, 0], dtype=np.int8)
CROSS_ORDER = np.array([0] * 12 + [1, -1, 1, -1, 0], dtype=np.int8)

IS_MOVE = MOVE_OFFSET != 0
IS_CROSS = CROSS_DIRECTION != 0
IS_STACK = np.arange(NUM_INSTRUCTIONS) == Instruction.S
IS_TRANSFER = IS_MOVE | IS_CROSS | IS_STACK

# front/back substitution applied when a map is viewed from the reverse side
_MIRROR_PAIRS = [("K", "P"), ("T", "T"), ("M", "M"), ("S", "S"),
                 ("FR1", "BL1"), ("FR2", "BL2"), ("FL1", "BR1"), ("FL2", "BR2"),
                 ("XR+", "XL-"), ("XR-", "XL+")]
MIRROR_CODE = np.zeros(NUM_INSTRUCTIONS, dtype=np.int8)
for _a, _b in _MIRROR_PAIRS:
    MIRROR_CODE[CODE_INDEX[_a]] = CODE_INDEX[_b]
    MIRROR_CODE[CODE_INDEX[_b]] = CODE_INDEX[_a]

MOVE_CODE = {(FRONT, 1): Instruction.FR1, (FRONT, 2): Instruction.FR2,
             (FRONT, -1): Instruction.FL1, (FRONT, -2): Instruction.FL2,
             (BACK, 1): Instruction.BR1, (BACK, 2): Instruction.BR2,
             (BACK, -1): Instruction.BL1, (BACK, -2): Instruction.BL2}

# Table 2 frequency row, in code order (percent; sums to 100.01)
PAPER_FREQUENCIES = (44.39, 47.72, 0.41, 1.49, 1.16, 0.01, 1.23, 0.01,
                     1.22, 0.02, 1.40, 0.02, 0.22, 0.18, 0.19, 0.22, 0.12)


class KnitFormatError(ValueError):
    pass


class MalformedHeader(KnitFormatError):
    pass


class DimensionMismatch(KnitFormatError):
    pass


class UnknownCode(KnitFormatError):
    def __init__(self, token: str, row: int, col: int):
        super().__init__(f"unknown instruction code {token!r} at row {row}, column {col}")
        self.token = token
        self.row = row
        self.col = col


class AmbiguousStackSide(ValueError):
    def __init__(self, row: int, col: int):
        super().__init__(f"moves from both beds land on stack at row {row}, column {col}")
        self.row = row
        self.col = col


class EmptyInput(ValueError):
    pass


class InstructionMap:
    """An immutable height x width grid of instruction indices, row 0 at the bottom."""

    __slots__ = ("_codes",)

    def __init__(self, codes):
        arr = np.array(codes, dtype=np.int8, copy=True)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"instruction map must be a non-empty 2D grid, got shape {arr.shape}")
        if arr.min() < 0 or arr.max() >= NUM_INSTRUCTIONS:
            raise ValueError("instruction indices must lie in 0..16")
        arr.flags.writeable = False
        self._codes = arr

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[str] | str]) -> "InstructionMap":
        """Build from code strings, bottom row first. Rows may be space-separated strings."""
        parsed = []
        for r, row in enumerate(rows):
            tokens = row.split() if isinstance(row, str) else list(row)
            out = []
            for c, tok in enumerate(tokens):
                if tok not in CODE_INDEX:
                    raise UnknownCode(tok, r, c)
                out.append(CODE_INDEX[tok])
            parsed.append(out)
        if len({len(r) for r in parsed}) != 1:
            raise DimensionMismatch("rows have different lengths")
        return cls(parsed)

    @classmethod
    def filled(cls, width: int, height: int, code: int = Instruction.K) -> "InstructionMap":
        return cls(np.full((height, width), int(code), dtype=np.int8))

    @property
    def codes(self) -> np.ndarray:
        return self._codes

    @property
    def width(self) -> int:
        return self._codes.shape[1]

    @property
    def height(self) -> int:
        return self._codes.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self._codes.shape

    def __getitem__(self, rc: tuple[int, int]) -> Instruction:
        return Instruction(int(self._codes[rc]))

    def replace(self, row: int, col: int, code: int) -> "InstructionMap":
        arr = self._codes.copy()
        arr[row, col] = int(code)
        return InstructionMap(arr)

    def row_codes(self, row: int) -> list[str]:
        return [CODES[i] for i in self._codes[row]]

    def __eq__(self, other) -> bool:
        if not isinstance(other, InstructionMap):
            return NotImplemented
        return self._codes.shape == other._codes.shape and bool(np.array_equal(self._codes, other._codes))

    def __hash__(self) -> int:
        return hash((self._codes.shape, self._codes.tobytes()))

    def __repr__(self) -> str:
        rows = " / ".join(" ".join(self.row_codes(r)) for r in range(min(self.height, 3)))
        more = " / ..." if self.height > 3 else ""
        return f"InstructionMap({self.width}x{self.height}: {rows}{more})"


def parse_map(text: str) -> InstructionMap:
    """Parse the ``.kp`` text format (header ``KP1 <width> <height>``, bottom row first)."""
    lines = text.splitlines()
    if not lines:
        raise MalformedHeader("empty input")
    header = lines[0].split(" ")
    if len(header) != 3 or header[0] != "KP1":
        raise MalformedHeader(f"bad header line {lines[0]!r}")
    try:
        width, height = int(header[1]), int(header[2])
    except ValueError:
        raise MalformedHeader(f"bad header dimensions {lines[0]!r}") from None
    if width < 1 or height < 1:
        raise MalformedHeader("dimensions must be positive")
    body = lines[1:]
    while body and body[-1] == "":
        body.pop()
    if len(body) != height:
        raise DimensionMismatch(f"header declares {height} rows, found {len(body)}")
    grid = np.empty((height, width), dtype=np.int8)
    for r, line in enumerate(body):
        tokens = line.split(" ")
        if len(tokens) != width:
            raise DimensionMismatch(f"row {r} has {len(tokens)} codes, expected {width}")
        for c, tok in enumerate(tokens):
            idx = CODE_INDEX.get(tok)
            if idx is None:
                raise UnknownCode(tok, r, c)
            grid[r, c] = idx
    return InstructionMap(grid)


def serialize_map(m: InstructionMap) -> str:
    lines = [f"KP1 {m.width} {m.height}"]
    lines.extend(" ".join(m.row_codes(r)) for r in range(m.height))
    return "\n".join(lines) + "\n"


def read_map(path) -> InstructionMap:
    with open(path, "r", encoding="ascii") as f:
        return parse_map(f.read())


def write_map(path, m: InstructionMap) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as f:
        f.write(serialize_map(m))


_T, _M, _S = int(Instruction.T), int(Instruction.M), int(Instruction.S)
_SIDE_LIST = EXPLICIT_SIDE.tolist()
_OFFSET_LIST = MOVE_OFFSET.tolist()
_KNITS = (BASE_OP == KNIT).tolist()


def stack_landers(codes: np.ndarray, row: int) -> dict[int, list[int]]:
    """Columns reached by moves in one row -> source columns of those moves."""
    landers: dict[int, list[int]] = {}
    for c, code in enumerate(codes[row].tolist()):
        off = _OFFSET_LIST[code]
        if off:
            landers.setdefault(c + off, []).append(c)
    return landers


def resolve_sides(m: InstructionMap, strict: bool = True) -> np.ndarray:
    """Bed side (0 front, 1 back) of every cell.

    Explicit cells keep their side. Stacks take the side of the move landing on
    them; crosses (and unreached stacks) inherit the side of the nearest earlier
    knit-performing cell in bottom-up, left-to-right scan order. Tuck and miss
    stay on the bed where the column's loops already reside, i.e. the side of the
    cell below (front on row 0).

    With ``strict`` a stack reached from both beds raises AmbiguousStackSide;
    otherwise the leftmost move wins.
    """
    codes = m.codes
    h, w = codes.shape
    rows = codes.tolist()
    sides = [[FRONT] * w for _ in range(h)]
    last = FRONT
    for r in range(h):
        line = rows[r]
        stack_side: dict[int, int] = {}
        for col, sources in stack_landers(codes, r).items():
            if 0 <= col < w and line[col] == _S:
                got = {_SIDE_LIST[line[s]] for s in sources}
                if len(got) > 1 and strict:
                    raise AmbiguousStackSide(r, col)
                stack_side[col] = _SIDE_LIST[line[sources[0]]]
        out = sides[r]
        for c in range(w):
            code = line[c]
            side = _SIDE_LIST[code]
            if side < 0:
                if code == _T or code == _M:
                    side = sides[r - 1][c] if r > 0 else FRONT
                elif c in stack_side:
                    side = stack_side[c]
                else:
                    side = last
            out[c] = side
            if _KNITS[code]:
                last = side
    return np.array(sides, dtype=np.int8)


def mirror_to_back(m: InstructionMap) -> InstructionMap:
    """The same fabric seen from its reverse side: horizontal flip plus code substitution."""
    return InstructionMap(MIRROR_CODE[m.codes[:, ::-1]])


def frequency_histogram(maps: Iterable[InstructionMap]) -> tuple[dict[str, int], dict[str, float]]:
    counts = np.zeros(NUM_INSTRUCTIONS, dtype=np.int64)
    for m in maps:
        counts += np.bincount(m.codes.ravel(), minlength=NUM_INSTRUCTIONS)
    total = int(counts.sum())
    if total == 0:
        raise EmptyInput("frequency_histogram needs at least one map")
    by_code = {CODES[i]: int(counts[i]) for i in range(NUM_INSTRUCTIONS)}
    percent = {k: 100.0 * v / total for k, v in by_code.items()}
    return by_code, percent


def random_map(rng: np.random.Generator, width: int = 20, height: int = 20,
               weights: Sequence[float] | None = None) -> InstructionMap:
    """I.i.d. cells; uniform over the 17 codes unless ``weights`` is given."""
    p = None
    if weights is not None:
        p = np.asarray(weights, dtype=np.float64)
        p = p / p.sum()
    return InstructionMap(rng.choice(NUM_INSTRUCTIONS, size=(height, width), p=p).astype(np.int8))
