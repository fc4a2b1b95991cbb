"""Desk-scale corpora: cropping, mirroring, procedural maps and the pseudo-real domain."""
from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.ndimage import map_coordinates
from scipy.spatial.distance import cdist

from .instructions import (CODES, NUM_INSTRUCTIONS, PAPER_FREQUENCIES, Instruction, InstructionMap,
                           mirror_to_back, random_map, read_map, write_map)
from .machine import repair, validate
from .render import TileAtlas, default_atlas, read_pgm, render, write_pgm

SYNTHETIC = "synthetic"
PSEUDO_REAL = "pseudoReal"
SPLITS = ("train", "val", "test")
MAP_SIZE = 20


class InsufficientCount(ValueError):
    pass


class CorpusFormatError(ValueError):
    pass


def derive_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# frequency tables and procedural maps

@dataclass(frozen=True)
class FrequencyTable:
    weights: tuple[float, ...]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (NUM_INSTRUCTIONS,) or (w < 0).any() or w.sum() <= 0:
            raise ValueError("frequency table needs 17 nonnegative weights with positive sum")
        object.__setattr__(self, "weights", tuple((w / w.sum()).tolist()))

    @classmethod
    def paper(cls) -> "FrequencyTable":
        return cls(PAPER_FREQUENCIES)

    @classmethod
    def uniform(cls) -> "FrequencyTable":
        return cls((1.0,) * NUM_INSTRUCTIONS)

    @classmethod
    def only(cls, code: int) -> "FrequencyTable":
        w = [0.0] * NUM_INSTRUCTIONS
        w[int(code)] = 1.0
        return cls(tuple(w))

    @classmethod
    def read_tsv(cls, path: str | Path) -> "FrequencyTable":
        """Two columns: instruction code and weight; unlisted codes get weight 0."""
        w = [0.0] * NUM_INSTRUCTIONS
        with open(path, newline="") as f:
            for row in csv.reader(f, delimiter="\t"):
                if not row or row[0].startswith("#") or row[0] == "code":
                    continue
                try:
                    w[Instruction.from_code(row[0].strip())] = float(row[1])
                except (KeyError, IndexError, ValueError) as exc:
                    raise ValueError(f"bad frequency row {row!r}") from exc
        return cls(tuple(w))

    def write_tsv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            f.write("code\tweight\n")
            for code, w in zip(CODES, self.weights):
                f.write(f"{code}\t{w!r}\n")


def sample_raw(count: int, freq: FrequencyTable, seed: int, size: int = MAP_SIZE) -> list[InstructionMap]:
    """Unrepaired i.i.d. maps; map ``i`` depends only on ``(seed, i)``."""
    return [random_map(np.random.default_rng([seed, i]), size, size, freq.weights) for i in range(count)]


def generate_valid(count: int, freq: FrequencyTable | None = None, seed: int = 0,
                   size: int = MAP_SIZE) -> list[InstructionMap]:
    if count < 1:
        raise ValueError("count must be at least 1")
    freq = freq or FrequencyTable.paper()
    return [repair(m)[0] for m in sample_raw(count, freq, seed, size)]


def crop_patterns(source: InstructionMap, crop_size: int = MAP_SIZE,
                  overlap: float = 0.5) -> list[InstructionMap]:
    """Overlapping square crops; small sources are padded with K and invalid crops dropped."""
    if crop_size < 1:
        raise ValueError("crop_size must be at least 1")
    arr = source.codes
    h, w = arr.shape
    if h < crop_size or w < crop_size:
        padded = np.full((max(h, crop_size), max(w, crop_size)), Instruction.K, dtype=arr.dtype)
        padded[:h, :w] = arr
        arr = padded
        h, w = arr.shape
    stride = max(1, int(round(crop_size * (1 - overlap))))
    out = []
    for y in range(0, h - crop_size + 1, stride):
        for x in range(0, w - crop_size + 1, stride):
            m = InstructionMap(arr[y:y + crop_size, x:x + crop_size])
            if validate(m).ok:
                out.append(m)
    return out


# ---------------------------------------------------------------------------
# pseudo-real perturbation

@dataclass(frozen=True)
class PerturbConfig:
    border_jitter: int = 4
    warp_sigma: float = 1.6
    gain: tuple[float, float] = (0.7, 1.3)
    bias: float = 20.0
    gamma: tuple[float, float] = (0.8, 1.25)
    lighting: float = 20.0
    noise: float = 4.0
    cells: int = MAP_SIZE

    @classmethod
    def none(cls) -> "PerturbConfig":
        return cls(0, 0.0, (1.0, 1.0), 0.0, (1.0, 1.0), 0.0, 0.0)


def kernel_centers(h: int, w: int, rows: int, cols: int) -> np.ndarray:
    cy = (np.arange(rows) + 0.5) * h / rows
    cx = (np.arange(cols) + 0.5) * w / cols
    return np.stack(np.meshgrid(cy, cx, indexing="ij"), -1).reshape(-1, 2)


@functools.lru_cache(maxsize=4)
def _warp_operator(h: int, w: int, rows: int, cols: int) -> np.ndarray:
    """Linear map from per-cell kernel displacements to a dense per-pixel field.

    Linear RBF (phi(r) = -r) with an affine polynomial tail, kernels at cell centers.
    """
    centers = kernel_centers(h, w, rows, cols)
    n = len(centers)
    poly = np.hstack([np.ones((n, 1)), centers])
    system = np.zeros((n + 3, n + 3))
    system[:n, :n] = -cdist(centers, centers)
    system[:n, n:] = poly
    system[n:, :n] = poly.T
    pix = np.stack(np.mgrid[0:h, 0:w], -1).reshape(-1, 2) + 0.5
    evaluate = np.hstack([-cdist(pix, centers), np.ones((len(pix), 1)), pix])
    rhs = np.zeros((n + 3, n))
    rhs[:n] = np.eye(n)
    return evaluate @ np.linalg.solve(system, rhs)


def warp_field(kernel_disp: np.ndarray, h: int, w: int, rows: int, cols: int) -> np.ndarray:
    """Dense (h, w, 2) displacement field interpolating ``kernel_disp`` (rows*cols, 2)."""
    return (_warp_operator(h, w, rows, cols) @ kernel_disp).reshape(h, w, 2)


def draw_geometry(rng: np.random.Generator, config: PerturbConfig):
    """Border offsets (top, left, bottom, right) and per-kernel warp displacements (dy, dx)."""
    j = config.border_jitter
    box = tuple(int(v) for v in rng.integers(-j, j + 1, size=4)) if j else (0, 0, 0, 0)
    disp = np.zeros((config.cells * config.cells, 2))
    if config.warp_sigma > 0:
        disp = rng.normal(0.0, config.warp_sigma, size=disp.shape)
    return box, disp


def perturb(image: np.ndarray, seed: int, config: PerturbConfig = PerturbConfig()) -> np.ndarray:
    """Map a clean render into the pseudo-real domain; deterministic given ``seed``."""
    if config == PerturbConfig.none():
        return image.copy()
    rng = np.random.default_rng(seed)
    h, w = image.shape
    img = image.astype(np.float64)

    (top, left, bottom, right), disp = draw_geometry(rng, config)
    sy, sx = (h + bottom - top) / h, (w + right - left) / w
    ys = top + (np.arange(h) + 0.5) * sy - 0.5
    xs = left + (np.arange(w) + 0.5) * sx - 0.5
    coords = np.stack(np.meshgrid(ys, xs, indexing="ij"))
    if config.warp_sigma > 0:
        coords = coords + warp_field(disp, h, w, config.cells, config.cells).transpose(2, 0, 1)
    img = map_coordinates(img, coords, order=1, mode="nearest")

    gain = rng.uniform(*config.gain)
    bias = rng.uniform(-config.bias, config.bias)
    gamma = math.exp(rng.uniform(math.log(config.gamma[0]), math.log(config.gamma[1])))
    v = np.clip((img * gain + bias) / 255.0, 0.0, 1.0)
    img = 255.0 * v ** gamma

    amp, theta = rng.uniform(0, config.lighting), rng.uniform(0, 2 * np.pi)
    gy, gx = np.mgrid[0:h, 0:w]
    img += amp * 2 * ((gx / max(w - 1, 1) - 0.5) * np.cos(theta) + (gy / max(h - 1, 1) - 0.5) * np.sin(theta))
    if config.noise > 0:
        img += rng.normal(0.0, config.noise, size=img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# samples and corpora

@dataclass(frozen=True, eq=False)
class SamplePair:
    image: np.ndarray
    map: InstructionMap
    domain: str
    source_id: str
    seed: int = 0


def make_image(m: InstructionMap, domain: str, seed: int, atlas: TileAtlas | None = None,
               config: PerturbConfig = PerturbConfig()) -> np.ndarray:
    img = render(m, atlas)
    return perturb(img, seed, config) if domain == PSEUDO_REAL else img


def double_with_mirror(samples: Sequence[SamplePair], atlas: TileAtlas | None = None,
                       config: PerturbConfig = PerturbConfig()) -> list[SamplePair]:
    """Append the back-side version of every sample, re-rendered from its mirrored map."""
    out = list(samples)
    for s in samples:
        m = mirror_to_back(s.map)
        seed = derive_seed(s.seed, 1)
        out.append(SamplePair(make_image(m, s.domain, seed, atlas, config), m, s.domain,
                              s.source_id + "-m", seed))
    return out


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.80
    val: float = 0.05
    test: float = 0.15
    seed: int = 0

    def __post_init__(self):
        if min(self.train, self.val, self.test) < 0 or abs(self.train + self.val + self.test - 1) > 1e-9:
            raise ValueError("split fractions must be nonnegative and sum to 1")

    def counts(self, n: int) -> tuple[int, int, int]:
        n_val = math.floor(n * self.val + 1e-9)
        n_test = math.floor(n * self.test + 1e-9)
        return n - n_val - n_test, n_val, n_test


@dataclass
class Corpus:
    splits: dict[str, list[SamplePair]] = field(default_factory=lambda: {s: [] for s in SPLITS})

    def __getitem__(self, split: str) -> list[SamplePair]:
        return self.splits[split]

    def domain(self, split: str, domain: str) -> list[SamplePair]:
        return [s for s in self.splits[split] if s.domain == domain]

    def unique(self) -> Iterable[tuple[str, SamplePair]]:
        seen = set()
        for split in SPLITS:
            for s in self.splits[split]:
                if s.source_id not in seen:
                    seen.add(s.source_id)
                    yield split, s


def make_corpus(n_synthetic: int, n_pseudo_real: int, seed: int = 0, split: SplitSpec = SplitSpec(),
                oversample: bool = False, freq: FrequencyTable | None = None,
                atlas: TileAtlas | None = None, config: PerturbConfig = PerturbConfig()) -> Corpus:
    """Synthetic pairs all go to train; pseudo-real pairs are split, with disjoint maps."""
    if n_synthetic < 0 or n_pseudo_real < 0:
        raise ValueError("counts must be nonnegative")
    n_train, n_val, n_test = split.counts(n_pseudo_real)
    if n_pseudo_real > 0 and split.test > 0 and n_test == 0:
        raise InsufficientCount(f"{n_pseudo_real} pseudo-real samples leave an empty test split")
    freq = freq or FrequencyTable.paper()
    corpus = Corpus()
    total = n_synthetic + n_pseudo_real
    maps = generate_valid(total, freq, seed) if total else []
    for i in range(n_synthetic):
        s = derive_seed(seed, i)
        corpus["train"].append(SamplePair(render(maps[i], atlas), maps[i], SYNTHETIC, f"syn{i:05d}", s))
    pseudo = []
    for k in range(n_pseudo_real):
        i = n_synthetic + k
        s = derive_seed(seed, i)
        pseudo.append(SamplePair(make_image(maps[i], PSEUDO_REAL, s, atlas, config), maps[i],
                                 PSEUDO_REAL, f"pr{k:05d}", s))
    order = np.random.default_rng([split.seed, seed]).permutation(n_pseudo_real)
    pseudo = [pseudo[i] for i in order]
    corpus["train"].extend(pseudo[:n_train])
    corpus["val"].extend(pseudo[n_train:n_train + n_val])
    corpus["test"].extend(pseudo[n_train + n_val:])
    if oversample and n_train and n_synthetic > n_train:
        real_train = pseudo[:n_train]
        corpus["train"].extend(real_train[i % n_train] for i in range(n_synthetic - n_train))
    return corpus


MANIFEST = "manifest.tsv"


def write_corpus(corpus: Corpus, root: str | Path) -> None:
    root = Path(root)
    for split in SPLITS:
        (root / split).mkdir(parents=True, exist_ok=True)
    lines = ["id\tsplit\tdomain\tseed"]
    for split, s in corpus.unique():
        write_map(root / split / f"{s.source_id}.kp", s.map)
        write_pgm(root / split / f"{s.source_id}.pgm", s.image)
        lines.append(f"{s.source_id}\t{split}\t{s.domain}\t{s.seed}")
    (root / MANIFEST).write_text("\n".join(lines) + "\n")


def read_corpus(root: str | Path) -> Corpus:
    root = Path(root)
    path = root / MANIFEST
    if not path.exists():
        raise CorpusFormatError(f"{path} not found")
    corpus = Corpus()
    with open(path, newline="") as f:
        for row in csv.DictReader(f, delimiter="\t"):
            split = row["split"]
            if split not in SPLITS:
                raise CorpusFormatError(f"unknown split {split!r}")
            sid = row["id"]
            corpus[split].append(SamplePair(read_pgm(root / split / f"{sid}.pgm"),
                                            read_map(root / split / f"{sid}.kp"),
                                            row["domain"], sid, int(row["seed"])))
    return corpus
