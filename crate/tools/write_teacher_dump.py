#!/usr/bin/env python3
"""Reference writer for distillcache teacher dumps.

Writes one sample directory in the layout `distillcache cache` reads:

    <dump_dir>/<sample_id with '/' -> '__'>/
        descriptor.json   {"sample_id", "n_views", "height", "width", "dtype": "float32-le"}
        pts_global.f32    (n_views, height, width, 3) float32 little-endian, C order
        pts_local.f32     same shape
        conf_global.f32   (n_views, height, width) float32 little-endian
        conf_local.f32    same shape

Usage as a library:

    from write_teacher_dump import write_dump
    write_dump("dumps", "scannet/scene0000_00/000", pts_g, pts_l, conf_g, conf_l)

Usage from the command line writes a random dump, handy for smoke tests:

    python3 tools/write_teacher_dump.py dumps scannet/scene0000_00/000 --views 20 --height 336 --width 777
"""

import argparse
import json
import os

import numpy as np

DTYPE = "float32-le"


def sample_dir(dump_dir, sample_id):
    return os.path.join(dump_dir, sample_id.replace("/", "__"))


def _check(name, array, shape):
    array = np.asarray(array)
    if array.shape != shape:
        raise ValueError(f"{name}: shape {array.shape}, expected {shape}")
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name}: contains non-finite values")
    return np.ascontiguousarray(array, dtype="<f4")


def write_dump(dump_dir, sample_id, pts_global, pts_local, conf_global, conf_local):
    """Writes one sample; returns the sample directory."""
    pts_global = np.asarray(pts_global)
    if pts_global.ndim != 4 or pts_global.shape[-1] != 3:
        raise ValueError(f"pts_global: expected (views, height, width, 3), got {pts_global.shape}")
    n_views, height, width, _ = pts_global.shape
    arrays = {
        "pts_global.f32": _check("pts_global", pts_global, (n_views, height, width, 3)),
        "pts_local.f32": _check("pts_local", pts_local, (n_views, height, width, 3)),
        "conf_global.f32": _check("conf_global", conf_global, (n_views, height, width)),
        "conf_local.f32": _check("conf_local", conf_local, (n_views, height, width)),
    }
    out = sample_dir(dump_dir, sample_id)
    os.makedirs(out, exist_ok=True)
    descriptor = {"sample_id": sample_id, "n_views": n_views, "height": height, "width": width, "dtype": DTYPE}
    with open(os.path.join(out, "descriptor.json"), "w") as f:
        json.dump(descriptor, f, indent=2)
        f.write("\n")
    for name, array in arrays.items():
        array.tofile(os.path.join(out, name))
    return out


def main():
    parser = argparse.ArgumentParser(description="Write a random teacher dump in the distillcache layout.")
    parser.add_argument("dump_dir")
    parser.add_argument("sample_id")
    parser.add_argument("--views", type=int, default=20)
    parser.add_argument("--height", type=int, default=336)
    parser.add_argument("--width", type=int, default=777)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    shape = (args.views, args.height, args.width)
    pts_g = rng.normal(size=shape + (3,))
    pts_l = rng.normal(size=shape + (3,))
    pts_l[..., 2] = np.abs(pts_l[..., 2]) + 1.0
    conf_g = rng.uniform(0.05, 3.0, size=shape)
    conf_l = rng.uniform(0.05, 3.0, size=shape)
    print(write_dump(args.dump_dir, args.sample_id, pts_g, pts_l, conf_g, conf_l))


if __name__ == "__main__":
    main()
