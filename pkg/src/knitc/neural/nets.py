"""Img2prog, Img2prog++, Refiner and the patch discriminator, plus KNW1 weight files."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..instructions import NUM_INSTRUCTIONS
from .tensor import (ShapeMismatch, Tensor, avg_pool, concat, conv2d, instance_norm, nn_upsample,
                     relu)

INPUT_SIZE = 160
OUTPUT_SIZE = 20
DESK_WIDTHS = (8, 16, 32)
NUM_RES_BLOCKS = 6


def normalize_image(img: np.ndarray, dtype=np.float64) -> np.ndarray:
    return img.astype(dtype) / 127.5 - 1.0


@dataclass
class NetworkSpec:
    kind: str
    layers: list[str] = field(default_factory=list)
    params: dict[str, tuple[int, ...]] = field(default_factory=dict)


class Network:
    """Parameter container with a deterministic, ordered parameter table."""

    kind = "network"

    def __init__(self, seed: int = 0, dtype=np.float64):
        self.params: dict[str, Tensor] = {}
        self.layers: list[str] = []
        self._rng = np.random.default_rng(seed)
        self.dtype = dtype

    # -- construction helpers --
    def _conv(self, name: str, cin: int, cout: int, k: int = 3, stride: int = 1, bias: bool = True) -> str:
        bound = np.sqrt(6.0 / (cin * k * k))
        w = self._rng.uniform(-bound, bound, size=(cout, cin, k, k)).astype(self.dtype)
        self.params[f"{name}.w"] = Tensor(w, requires_grad=True, name=f"{name}.w")
        if bias:
            self.params[f"{name}.b"] = Tensor(np.zeros(cout, self.dtype), requires_grad=True, name=f"{name}.b")
        self.layers.append(f"conv {name} {cin}->{cout} k{k} s{stride}")
        return name

    def conv(self, name: str, x: Tensor, stride: int = 1) -> Tensor:
        return conv2d(x, self.params[f"{name}.w"], self.params.get(f"{name}.b"), stride)

    def conv_in_relu(self, name: str, x: Tensor, stride: int = 1) -> Tensor:
        return relu(instance_norm(self.conv(name, x, stride)))

    def res_block(self, name: str, x: Tensor) -> Tensor:
        h = self.conv_in_relu(f"{name}.a", x)
        return x + instance_norm(self.conv(f"{name}.b", h))

    def _res_params(self, name: str, width: int) -> None:
        self._conv(f"{name}.a", width, width)
        self._conv(f"{name}.b", width, width)
        self.layers.append(f"residual {name}")

    # -- parameter table --
    def spec(self) -> NetworkSpec:
        return NetworkSpec(self.kind, list(self.layers), {k: t.shape for k, t in self.params.items()})

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise ShapeMismatch(f"parameter names differ: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, t in self.params.items():
            if tuple(state[k].shape) != t.shape:
                raise ShapeMismatch(f"{k}: expected {t.shape}, got {tuple(state[k].shape)}")
            t.data = np.array(state[k], dtype=self.dtype)

    def cast(self, dtype) -> None:
        self.dtype = dtype
        for t in self.params.values():
            t.data = t.data.astype(dtype)

    def meta(self) -> list[float]:
        raise NotImplementedError

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError


class Img2prog(Network):
    """Three stride-2 convs (160 -> 20), residual blocks, 3x3 then 1x1 to 17 logits.

    With ``skips`` the down-convolution outputs are average-pooled to 20x20 and
    concatenated before the final 3x3 convolution (Img2prog++).
    """

    def __init__(self, widths: tuple[int, int, int] = DESK_WIDTHS, n_res: int = NUM_RES_BLOCKS,
                 skips: bool = False, seed: int = 0, dtype=np.float64):
        super().__init__(seed, dtype)
        self.widths, self.n_res, self.skips = tuple(int(w) for w in widths), int(n_res), bool(skips)
        self.kind = "img2prog++" if skips else "img2prog"
        w0, w1, w2 = self.widths
        self._conv("down1", 1, w0, stride=2)
        self._conv("down2", w0, w1, stride=2)
        self._conv("down3", w1, w2, stride=2)
        for i in range(self.n_res):
            self._res_params(f"res{i}", w2)
        self._conv("final", w0 + w1 + 2 * w2 if skips else w2, w2)
        self._conv("out", w2, NUM_INSTRUCTIONS, k=1)

    def meta(self) -> list[float]:
        return [1.0 if self.skips else 0.0, *self.widths, self.n_res]

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1:] != (1, INPUT_SIZE, INPUT_SIZE):
            raise ShapeMismatch(f"img2prog expects (N, 1, 160, 160), got {x.shape}")
        d1 = self.conv_in_relu("down1", x, 2)
        d2 = self.conv_in_relu("down2", d1, 2)
        d3 = self.conv_in_relu("down3", d2, 2)
        h = d3
        for i in range(self.n_res):
            h = self.res_block(f"res{i}", h)
        if self.skips:
            h = concat([avg_pool(d1, 4), avg_pool(d2, 2), d3, h])
        h = self.conv_in_relu("final", h)
        return self.conv("out", h)


class Refiner(Network):
    """Image-to-image network: stride-2 down path, residual blocks, nearest x2 upsampling."""

    kind = "refiner"

    def __init__(self, width: int = 64, n_res: int = NUM_RES_BLOCKS, seed: int = 0, dtype=np.float64):
        super().__init__(seed, dtype)
        self.width, self.n_res = int(width), int(n_res)
        f = self.width
        self._conv("in", 1, f)
        self._conv("down", f, 2 * f, stride=2)
        for i in range(self.n_res):
            self._res_params(f"res{i}", 2 * f)
        self.layers.append("upsample nearest x2")
        self._conv("up", 2 * f, f)
        self._conv("out", f, 1)

    def meta(self) -> list[float]:
        return [self.width, self.n_res]

    def forward(self, x: Tensor) -> Tensor:
        h = self.conv_in_relu("in", x)
        h = self.conv_in_relu("down", h, 2)
        for i in range(self.n_res):
            h = self.res_block(f"res{i}", h)
        h = self.conv_in_relu("up", nn_upsample(h, 2))
        return x + self.conv("out", h)


class PatchDiscriminator(Network):
    kind = "discriminator"

    def __init__(self, width: int = 8, seed: int = 0, dtype=np.float64):
        super().__init__(seed, dtype)
        self.width = int(width)
        self._conv("d1", 1, width, stride=2)
        self._conv("d2", width, 2 * width, stride=2)
        self._conv("score", 2 * width, 1)

    def meta(self) -> list[float]:
        return [self.width]

    def forward(self, x: Tensor) -> Tensor:
        h = relu(self.conv("d1", x, 2))
        h = self.conv_in_relu("d2", h, 2)
        return self.conv("score", h)


# ---------------------------------------------------------------------------
# KNW1 weight files

MAGIC = b"KNW1"


class WeightFormatError(ValueError):
    pass


def encode_weights(records: dict[str, np.ndarray]) -> bytes:
    out = [MAGIC]
    for name, arr in records.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        out.append(struct.pack("<I", len(raw)) + raw)
        out.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


def decode_weights(data: bytes) -> dict[str, np.ndarray]:
    if data[:4] != MAGIC:
        raise WeightFormatError("missing KNW1 magic")
    pos, records = 4, {}
    try:
        while pos < len(data):
            (n,) = struct.unpack_from("<I", data, pos)
            name = data[pos + 4:pos + 4 + n].decode("utf-8")
            pos += 4 + n
            (rank,) = struct.unpack_from("<I", data, pos)
            dims = struct.unpack_from(f"<{rank}I", data, pos + 4)
            pos += 4 + 4 * rank
            count = int(np.prod(dims, dtype=np.int64))
            if pos + 4 * count > len(data):
                raise WeightFormatError(f"truncated payload for {name!r}")
            records[name] = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(dims).copy()
            pos += 4 * count
    except (struct.error, UnicodeDecodeError) as exc:
        raise WeightFormatError(f"corrupt weight file: {exc}") from None
    return records


@dataclass
class Model:
    """What a weight file holds: the instruction network and, in refiner mode, the refiner."""

    img2prog: Img2prog
    refiner: Refiner | None = None

    def records(self) -> dict[str, np.ndarray]:
        rec: dict[str, np.ndarray] = {"meta/img2prog": np.array(self.img2prog.meta(), np.float32)}
        rec.update({f"img2prog/{k}": v for k, v in self.img2prog.state().items()})
        if self.refiner is not None:
            rec["meta/refiner"] = np.array(self.refiner.meta(), np.float32)
            rec.update({f"refiner/{k}": v for k, v in self.refiner.state().items()})
        return rec


def save_model(path: str | Path, model: Model) -> None:
    Path(path).write_bytes(encode_weights(model.records()))


def model_from_records(records: dict[str, np.ndarray], dtype=np.float32) -> Model:
    if "meta/img2prog" not in records:
        raise WeightFormatError("weight file has no meta/img2prog record")
    skips, w0, w1, w2, n_res = (int(v) for v in records["meta/img2prog"])
    net = Img2prog((w0, w1, w2), n_res, bool(skips), dtype=dtype)
    net.load_state({k[len("img2prog/"):]: v for k, v in records.items() if k.startswith("img2prog/")})
    refiner = None
    if "meta/refiner" in records:
        width, n_res_r = (int(v) for v in records["meta/refiner"])
        refiner = Refiner(width, n_res_r, dtype=dtype)
        refiner.load_state({k[len("refiner/"):]: v for k, v in records.items() if k.startswith("refiner/")})
    return Model(net, refiner)


def load_model(path: str | Path, dtype=np.float32) -> Model:
    return model_from_records(decode_weights(Path(path).read_bytes()), dtype)
