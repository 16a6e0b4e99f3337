"""Compact storage of label grids.

Three codecs are provided: axis-aligned rectangle sets, pruned ``2^p``-trees
and run-length encoding, plus the ``MCMODEL`` text container that carries any
of them (or the raw label stream).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product
from pathlib import Path
from typing import Union

import numpy as np
from numba import njit

from .grid import GridSpec
from .model import LabelGrid

OUT = 0  # label of padding cells added to reach a power-of-two side
CODECS = ("raw", "rle", "tree", "rect")
SYMBOLS = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz"


class CodecError(ValueError):
    pass


# -- rectangles ------------------------------------------------------------

@dataclass(frozen=True)
class Rect:
    corner: tuple[int, ...]
    extent: tuple[int, ...]  # cells covered per axis, each >= 1
    label: int

    def slices(self):
        return tuple(slice(c, c + e) for c, e in zip(self.corner, self.extent))


@dataclass(frozen=True)
class RectSet:
    shape: tuple[int, ...]
    rects: tuple[Rect, ...]

    def __len__(self):
        return len(self.rects)

    @property
    def p(self) -> int:
        return len(self.shape)


@njit(cache=True)
def _greedy_rects_2d(labels):
    nx, ny = labels.shape
    used = np.zeros((nx, ny), dtype=np.bool_)
    out = np.empty((nx * ny, 5), dtype=np.int64)
    r = 0
    for x in range(nx):
        for y in range(ny):
            if used[x, y]:
                continue
            lab = labels[x, y]
            h = 1
            while y + h < ny and not used[x, y + h] and labels[x, y + h] == lab:
                h += 1
            w = 1
            while x + w < nx:
                ok = True
                for yy in range(y, y + h):
                    if used[x + w, yy] or labels[x + w, yy] != lab:
                        ok = False
                        break
                if not ok:
                    break
                w += 1
            for xx in range(x, x + w):
                for yy in range(y, y + h):
                    used[xx, yy] = True
            out[r, 0] = x
            out[r, 1] = y
            out[r, 2] = w
            out[r, 3] = h
            out[r, 4] = lab
            r += 1
    return out[:r]


def _greedy_rects_nd(labels: np.ndarray) -> list[Rect]:
    used = np.zeros(labels.shape, dtype=bool)
    rects = []
    for cell in np.ndindex(*labels.shape):
        if used[cell]:
            continue
        lab = labels[cell]
        extent = [1] * labels.ndim
        # grow the fastest-varying axis first, then the slower ones
        for ax in reversed(range(labels.ndim)):
            while cell[ax] + extent[ax] < labels.shape[ax]:
                sl = [slice(c, c + e) for c, e in zip(cell, extent)]
                sl[ax] = slice(cell[ax] + extent[ax], cell[ax] + extent[ax] + 1)
                block = tuple(sl)
                if used[block].any() or np.any(labels[block] != lab):
                    break
                extent[ax] += 1
        rect = Rect(tuple(int(c) for c in cell), tuple(extent), int(lab))
        used[rect.slices()] = True
        rects.append(rect)
    return rects


def to_rects(model: Union[LabelGrid, np.ndarray]) -> RectSet:
    """Greedy decomposition into disjoint equal-label boxes.

    Cells are visited in array order; each uncovered cell opens a box that
    grows along the last axis, then along the earlier axes.
    """
    labels = model.labels if isinstance(model, LabelGrid) else np.asarray(model)
    if labels.ndim == 2:
        raw = _greedy_rects_2d(np.ascontiguousarray(labels, dtype=np.int64))
        rects = tuple(Rect((int(x), int(y)), (int(w), int(h)), int(lab))
                      for x, y, w, h, lab in raw)
    else:
        rects = tuple(_greedy_rects_nd(labels))
    return RectSet(tuple(labels.shape), rects)


def from_rects(rs: RectSet) -> np.ndarray:
    out = np.full(rs.shape, OUT, dtype=np.int64)
    for r in rs.rects:
        out[r.slices()] = r.label
    return out


def rect_bits(rects: RectSet, k: int) -> int:
    """Storage cost ``r (2 p k + k)`` of ``r`` rectangles at ``k`` bits a value."""
    if k < 1:
        raise CodecError("k must be >= 1")
    return len(rects) * (2 * rects.p * k + k)


def set_bits(n: int, p: int, k: int) -> int:
    """Cost of listing ``n`` cells of a ``p``-dimensional set, ``k`` bits a coordinate."""
    return p * n * k


# -- 2^p-trees -------------------------------------------------------------

Node = Union[int, tuple]


@dataclass(frozen=True)
class OrthantTree:
    """Pruned orthant tree.

    A node is either a leaf label (``int``) or a tuple of ``2^p`` children in
    lexicographic orthant order (axis 0 slowest; low half before high half).
    """

    root: Node
    shape: tuple[int, ...]
    side: int

    @property
    def p(self) -> int:
        return len(self.shape)

    def nodes(self):
        stack = [self.root]
        while stack:
            n = stack.pop()
            yield n
            if isinstance(n, tuple):
                stack.extend(n)

    def counts(self) -> tuple[int, int]:
        """``(internal nodes, leaves)``."""
        internal = leaves = 0
        for n in self.nodes():
            if isinstance(n, tuple):
                internal += 1
            else:
                leaves += 1
        return internal, leaves

    def depth(self) -> int:
        def d(n):
            return 1 + max(d(c) for c in n) if isinstance(n, tuple) else 0
        return d(self.root)

    def lookup(self, cell) -> int:
        node, half = self.root, self.side
        cell = [int(c) for c in cell]
        while isinstance(node, tuple):
            half //= 2
            idx = 0
            for j, c in enumerate(cell):
                bit = 1 if c >= half else 0
                idx = idx * 2 + bit
                cell[j] = c - bit * half
            node = node[idx]
        return node

    def to_array(self) -> np.ndarray:
        full = np.empty((self.side,) * self.p, dtype=np.int64)
        offsets = list(product((0, 1), repeat=self.p))

        def fill(node, corner, size):
            if not isinstance(node, tuple):
                full[tuple(slice(c, c + size) for c in corner)] = node
                return
            h = size // 2
            for child, off in zip(node, offsets):
                fill(child, [c + o * h for c, o in zip(corner, off)], h)

        fill(self.root, [0] * self.p, self.side)
        return full[tuple(slice(0, s) for s in self.shape)]


def _next_pow2(n: int) -> int:
    return 1 << max(0, math.ceil(math.log2(n))) if n > 1 else 1


def build_tree(model: Union[LabelGrid, np.ndarray]) -> OrthantTree:
    labels = model.labels if isinstance(model, LabelGrid) else np.asarray(model)
    shape = tuple(labels.shape)
    p = labels.ndim
    side = _next_pow2(max(shape))
    padded = np.full((side,) * p, OUT, dtype=np.int64)
    padded[tuple(slice(0, s) for s in shape)] = labels
    # pyramid[j]: label of each block of side 2**j, or -1 when mixed
    pyramid = [padded]
    cur = padded
    while cur.shape[0] > 1:
        h = cur.shape[0] // 2
        blocks = cur.reshape(sum(((h, 2) for _ in range(p)), ()))
        inner = tuple(range(1, 2 * p, 2))
        lo, hi = blocks.min(axis=inner), blocks.max(axis=inner)
        cur = np.where((lo == hi) & (lo >= 0), lo, -1)
        pyramid.append(cur)
    offsets = list(product((0, 1), repeat=p))

    def node(level, idx):
        lab = int(pyramid[level][idx])
        if lab >= 0:
            return lab
        return tuple(node(level - 1, tuple(2 * i + o for i, o in zip(idx, off)))
                     for off in offsets)

    return OrthantTree(node(len(pyramid) - 1, (0,) * p), shape, side)


def serialize_tree(tree: OrthantTree) -> str:
    """Pre-order tokens: ``X`` for an internal node, the decimal label for a leaf.

    Tokens are concatenated when every label is a single digit, otherwise
    separated by single spaces.
    """
    tokens = []
    stack = [tree.root]
    while stack:
        n = stack.pop()
        if isinstance(n, tuple):
            tokens.append("X")
            stack.extend(reversed(n))
        else:
            tokens.append(str(n))
    sep = "" if all(len(t) == 1 for t in tokens) else " "
    return sep.join(tokens)


def _tree_tokens(text: str) -> list[str]:
    text = text.strip()
    if not text:
        raise CodecError("empty tree string at position 0")
    if not text.startswith("X"):
        return [text]
    return text.split(" ") if " " in text else list(text)


def deserialize_tree(text: str, shape) -> OrthantTree:
    shape = tuple(int(s) for s in shape)
    p = len(shape)
    side = _next_pow2(max(shape))
    tokens = _tree_tokens(text)
    pos = 0

    def parse(size):
        nonlocal pos
        if pos >= len(tokens):
            raise CodecError(f"tree string truncated at token {pos}")
        tok = tokens[pos]
        pos += 1
        if tok == "X":
            if size <= 1:
                raise CodecError(f"internal node below cell level at token {pos - 1}")
            return tuple(parse(size // 2) for _ in range(2 ** p))
        if not tok.isdigit():
            raise CodecError(f"bad token {tok!r} at token {pos - 1}")
        return int(tok)

    root = parse(side)
    if pos != len(tokens):
        raise CodecError(f"trailing tokens after position {pos}")
    return OrthantTree(root, shape, side)


def label_bits(L: int) -> int:
    """Bits per leaf label, covering ``0..L`` (``0`` is the padding label)."""
    return max(1, math.ceil(math.log2(L + 1)))


def pack_tree(tree: OrthantTree, L: int) -> tuple[bytes, int]:
    """Bit-packed pre-order: ``1`` internal, ``0`` + fixed-width label for a leaf."""
    k = label_bits(L)
    bits = []
    stack = [tree.root]
    while stack:
        n = stack.pop()
        if isinstance(n, tuple):
            bits.append("1")
            stack.extend(reversed(n))
        else:
            if not 0 <= n < 2 ** k:
                raise CodecError(f"label {n} does not fit in {k} bits")
            bits.append("0" + format(n, f"0{k}b"))
    s = "".join(bits)
    nbits = len(s)
    s += "0" * (-nbits % 8)
    return int(s, 2).to_bytes(len(s) // 8, "big") if s else b"", nbits


def unpack_tree(data: bytes, nbits: int, L: int, shape) -> OrthantTree:
    k = label_bits(L)
    s = format(int.from_bytes(data, "big"), f"0{len(data) * 8}b")[:nbits] if data else ""
    shape = tuple(shape)
    p = len(shape)
    pos = 0

    def parse():
        nonlocal pos
        if pos >= len(s):
            raise CodecError(f"packed tree truncated at bit {pos}")
        flag = s[pos]
        pos += 1
        if flag == "1":
            return tuple(parse() for _ in range(2 ** p))
        if pos + k > len(s):
            raise CodecError(f"packed tree truncated at bit {pos}")
        lab = int(s[pos:pos + k], 2)
        pos += k
        return lab

    root = parse()
    return OrthantTree(root, shape, _next_pow2(max(shape)))


# -- run-length encoding ---------------------------------------------------

def rle_encode(tokens: str) -> str:
    """``"AAAABBC"`` -> ``"4A2B1C"``; every run carries its decimal count."""
    if any(ch.isdigit() for ch in tokens):
        raise CodecError("run-length input must not contain digits")
    out = []
    i = 0
    n = len(tokens)
    while i < n:
        j = i
        while j < n and tokens[j] == tokens[i]:
            j += 1
        out.append(f"{j - i}{tokens[i]}")
        i = j
    return "".join(out)


def rle_decode(text: str) -> str:
    out = []
    i = 0
    n = len(text)
    while i < n:
        j = i
        while j < n and text[j].isdigit():
            j += 1
        if j == i:
            raise CodecError(f"missing run count at position {i}")
        if j == n:
            raise CodecError(f"truncated run at position {i}")
        count = int(text[i:j])
        if count < 1:
            raise CodecError(f"zero-length run at position {i}")
        out.append(text[j] * count)
        i = j + 1
    return "".join(out)


def labels_to_symbols(labels) -> str:
    labels = np.asarray(labels).ravel()
    if labels.size and (labels.min() < 1 or labels.max() > len(SYMBOLS)):
        raise CodecError(f"symbol stream supports labels 1..{len(SYMBOLS)}")
    table = np.array(list(SYMBOLS))
    return "".join(table[labels - 1]) if labels.size else ""


def symbols_to_labels(text: str) -> np.ndarray:
    try:
        return np.array([SYMBOLS.index(ch) + 1 for ch in text], dtype=np.int64)
    except ValueError:
        raise CodecError("unknown symbol in label stream") from None


# -- container -------------------------------------------------------------

def _row_major(labels: np.ndarray) -> np.ndarray:
    """Payload order: rows of constant y, x varying fastest."""
    return labels.T.ravel()


def _from_row_major(stream, dims) -> np.ndarray:
    stream = np.asarray(stream, dtype=np.int64)
    if stream.size != dims[0] * dims[1]:
        raise CodecError(f"payload holds {stream.size} labels, expected {dims[0] * dims[1]}")
    return stream.reshape(dims[1], dims[0]).T


def _fmt_float(v: float) -> str:
    return repr(float(v))


def dumps_model(model: LabelGrid, codec: str = "raw") -> str:
    if codec not in CODECS:
        raise CodecError(f"unknown codec {codec!r}; choose from {CODECS}")
    spec = model.spec
    if spec.p != 2:
        raise CodecError("the container stores 2-D models")
    lines = [
        "MCMODEL 1",
        f"dims {spec.dims[0]} {spec.dims[1]}",
        f"origin {spec.origin[0]} {spec.origin[1]}",
        f"precision {_fmt_float(spec.precision[0])} {_fmt_float(spec.precision[1])}",
        f"labels {model.L}",
        f"codec {codec}",
    ]
    stream = _row_major(model.labels)
    if codec == "raw":
        lines.append(" ".join(str(int(v)) for v in stream))
    elif codec == "rle":
        lines.append(rle_encode(labels_to_symbols(stream)))
    elif codec == "tree":
        lines.append(serialize_tree(build_tree(model)))
    else:
        for r in to_rects(model).rects:
            lines.append(f"{r.label} {r.corner[0]} {r.corner[1]} {r.extent[0]} {r.extent[1]}")
    return "\n".join(lines) + "\n"


def loads_model(text: str) -> LabelGrid:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if len(lines) < 6 or lines[0] != "MCMODEL 1":
        raise CodecError("not an MCMODEL 1 container")

    def field(i, key):
        parts = lines[i].split(" ")
        if parts[0] != key:
            raise CodecError(f"line {i + 1}: expected {key!r}")
        return parts[1:]

    try:
        dims = tuple(int(v) for v in field(1, "dims"))
        origin = tuple(int(v) for v in field(2, "origin"))
        precision = tuple(float(v) for v in field(3, "precision"))
        L = int(field(4, "labels")[0])
        codec = field(5, "codec")[0]
    except (ValueError, IndexError) as exc:
        raise CodecError(f"bad container header: {exc}") from None
    spec = GridSpec(precision, origin, dims)
    payload = lines[6:]
    if codec == "raw":
        stream = [int(v) for v in payload[0].split(" ")] if payload and payload[0] else []
        labels = _from_row_major(stream, dims)
    elif codec == "rle":
        labels = _from_row_major(symbols_to_labels(rle_decode(payload[0] if payload else "")), dims)
    elif codec == "tree":
        if not payload:
            raise CodecError("missing tree payload")
        labels = deserialize_tree(payload[0], dims).to_array()
    elif codec == "rect":
        rects = []
        for i, line in enumerate(payload, start=7):
            try:
                lab, x, y, w, h = (int(v) for v in line.split(" "))
            except ValueError:
                raise CodecError(f"line {i}: expected 'label x y w h'") from None
            rects.append(Rect((x, y), (w, h), lab))
        labels = from_rects(RectSet(dims, tuple(rects)))
    else:
        raise CodecError(f"unknown codec {codec!r}")
    return LabelGrid(spec, labels, L, {"codec": codec})


def save_model(model: LabelGrid, path, codec: str = "raw") -> int:
    """Write the container; returns the byte count."""
    data = dumps_model(model, codec).encode("ascii")
    Path(path).write_bytes(data)
    return len(data)


def load_model(path) -> LabelGrid:
    return loads_model(Path(path).read_text(encoding="ascii"))
