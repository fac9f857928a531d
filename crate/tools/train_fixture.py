#!/usr/bin/env python3
"""Train the bundled 16x16 square-detector fixture and write it to fixtures/.

Class 0: uniform noise. Class 1: the same noise with a bright 4x4 square.
Pixels stay on the raw 0..255 scale (mean 0) so activation magnitudes are of
the same order as a mean-subtracted ImageNet model.

Outputs (all deterministic for a fixed torch build):
  fixtures/square16.arch.json
  fixtures/square16.fbiw
  fixtures/square16.meta.json
  fixtures/square16.pgm       one class-1 image used by the CLI golden tests
"""

import json
import struct
from pathlib import Path

import numpy as np
import torch
from torch import nn

SIZE = 16
SQUARE = 4
NOISE_MAX = 160
SQUARE_MIN = 200
OUT = Path(__file__).resolve().parent.parent / "fixtures"


def sample(rng, with_square):
    img = rng.integers(0, NOISE_MAX + 1, size=(SIZE, SIZE))
    box = None
    if with_square:
        r, c = rng.integers(0, SIZE - SQUARE + 1, size=2)
        img[r:r + SQUARE, c:c + SQUARE] = rng.integers(SQUARE_MIN, 256, size=(SQUARE, SQUARE))
        box = (int(r), int(c))
    return img.astype(np.uint8), box


def dataset(rng, n):
    xs, ys = [], []
    for i in range(n):
        label = i % 2
        img, _ = sample(rng, label == 1)
        xs.append(img)
        ys.append(label)
    x = torch.tensor(np.stack(xs), dtype=torch.float32).unsqueeze(1)
    return x, torch.tensor(ys)


def build():
    return nn.Sequential(
        nn.Conv2d(1, 8, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2),
        nn.Conv2d(8, 8, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2),
        nn.Flatten(),
        nn.Linear(128, 16), nn.ReLU(),
        nn.Linear(16, 2),
    )


ARCH = {
    "input_shape": [1, SIZE, SIZE],
    "layers": [
        {"type": "conv2d", "name": "conv1", "activation": "relu", "in_channels": 1,
         "out_channels": 8, "kernel": [3, 3], "stride": [1, 1], "padding": [1, 1]},
        {"type": "maxpool", "name": "pool1", "kernel": [2, 2], "stride": [2, 2]},
        {"type": "conv2d", "name": "conv2", "activation": "relu", "in_channels": 8,
         "out_channels": 8, "kernel": [3, 3], "stride": [1, 1], "padding": [1, 1]},
        {"type": "maxpool", "name": "pool2", "kernel": [2, 2], "stride": [2, 2]},
        {"type": "flatten", "name": "flatten"},
        {"type": "dense", "name": "fc1", "activation": "relu", "in": 128, "out": 16},
        {"type": "dense", "name": "fc2", "activation": "softmax", "in": 16, "out": 2},
    ],
}
WEIGHTED = {"conv1": 0, "conv2": 3, "fc1": 7, "fc2": 9}


def fbiw(entries):
    out = bytearray(b"FBIW")
    out += struct.pack("<II", 1, len(entries))
    for name, arr in entries:
        arr = np.ascontiguousarray(arr, dtype="<f4")
        enc = name.encode()
        out += struct.pack("<I", len(enc)) + enc
        out += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += b"\x00" + arr.tobytes()
    return bytes(out)


def main():
    torch.manual_seed(7)
    rng = np.random.default_rng(7)
    x, y = dataset(rng, 4000)
    xv, yv = dataset(rng, 1000)
    net = build()
    opt = torch.optim.Adam(net.parameters(), lr=1e-3)
    loss_fn = nn.CrossEntropyLoss()
    for epoch in range(12):
        perm = torch.randperm(len(x))
        for i in range(0, len(x), 64):
            idx = perm[i:i + 64]
            opt.zero_grad()
            loss = loss_fn(net(x[idx]), y[idx])
            loss.backward()
            opt.step()
        with torch.no_grad():
            acc = (net(xv).argmax(1) == yv).float().mean().item()
        print(f"epoch {epoch} loss {loss.item():.4f} val acc {acc:.4f}")

    entries = []
    for name, idx in WEIGHTED.items():
        layer = net[idx]
        entries.append((f"{name}.weight", layer.weight.detach().numpy()))
        entries.append((f"{name}.bias", layer.bias.detach().numpy()))

    OUT.mkdir(exist_ok=True)
    (OUT / "square16.arch.json").write_text(json.dumps(ARCH, indent=2) + "\n")
    (OUT / "square16.fbiw").write_bytes(fbiw(entries))

    img, box = sample(np.random.default_rng(2024), True)
    (OUT / "square16.pgm").write_bytes(b"P5\n16 16\n255\n" + img.tobytes())

    meta = {
        "model": "square16",
        "input": {"channels": 1, "height": SIZE, "width": SIZE, "mean": [0.0]},
        "classes": ["noise", "square"],
        "generator": {
            "noise": [0, NOISE_MAX],
            "square_size": SQUARE,
            "square_values": [SQUARE_MIN, 255],
        },
        "validation_accuracy": round(acc, 4),
        "sample_image_square_top_left": list(box),
        "tau_scale": 1.0,
    }
    (OUT / "square16.meta.json").write_text(json.dumps(meta, indent=2) + "\n")


if __name__ == "__main__":
    main()
