#!/usr/bin/env python3
"""File-protocol backend used by the adapter tests.

encode: per-patch channel means tiled across the embedding.
decode: the same signed-distance rectangle as the built-in mock decoder.
"""
import math
import os
import struct
import sys

STRIDE = int(os.environ.get("ADAPTER_STRIDE", "16"))
DIM = int(os.environ.get("ADAPTER_DIM", "32"))
SHARPNESS = float(os.environ.get("ADAPTER_SHARPNESS", "50"))


def read_tensor(path):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != b"WPST":
        raise SystemExit("bad magic")
    (rank,) = struct.unpack_from("<I", blob, 4)
    dims = list(struct.unpack_from("<%dI" % rank, blob, 8))
    count = 1
    for d in dims:
        count *= d
    data = struct.unpack_from("<%dd" % count, blob, 8 + 4 * rank)
    return dims, data


def write_tensor(path, dims, data):
    with open(path, "wb") as f:
        f.write(b"WPST")
        f.write(struct.pack("<I", len(dims)))
        f.write(struct.pack("<%dI" % len(dims), *dims))
        f.write(struct.pack("<%dd" % len(data), *data))


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def encode(src, dst):
    (h, w, _), px = read_tensor(src)
    cells = h // STRIDE
    out = []
    for cy in range(cells):
        for cx in range(cells):
            means = []
            for c in range(3):
                s = 0.0
                for y in range(cy * STRIDE, (cy + 1) * STRIDE):
                    for x in range(cx * STRIDE, (cx + 1) * STRIDE):
                        s += px[(y * w + x) * 3 + c]
                means.append(s / (STRIDE * STRIDE))
            out.extend(means[k % 3] for k in range(DIM))
    write_tensor(dst, [cells, cells, DIM], out)


def decode(features, tokens, dst):
    (cells, _, _), _ = read_tensor(features)
    size = cells * STRIDE
    (n, width), tok = read_tensor(tokens)
    min_extent = 2.0 / size
    out = []
    for i in range(n):
        cx, cy, bw, bh = (sigmoid(tok[i * width + k]) for k in range(4))
        hw = 0.5 * max(bw, min_extent)
        hh = 0.5 * max(bh, min_extent)
        for py in range(size):
            y = (py + 0.5) / size
            dy = min(cy + hh - y, y - (cy - hh))
            for px_ in range(size):
                x = (px_ + 0.5) / size
                dx = min(cx + hw - x, x - (cx - hw))
                out.append(SHARPNESS * min(dx, dy))
    write_tensor(dst, [n, size, size], out)


def main(argv):
    if len(argv) == 4 and argv[1] == "encode":
        encode(argv[2], argv[3])
    elif len(argv) == 5 and argv[1] == "decode":
        decode(argv[2], argv[3], argv[4])
    else:
        sys.stderr.write("usage: adapter_mock.py encode IMG OUT | decode FEAT TOK OUT\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
