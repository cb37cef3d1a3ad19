"""Minimal standalone reader for the tensor directory format.

Reads tensors.json and tensors.bin with the standard library only and prints
{name: {"shape": [...], "values": [...]}} as JSON. Values use Python's
shortest round-trip float repr, so f64 data survives the trip exactly.
"""

import json
import math
import struct
import sys
from pathlib import Path


def read(directory):
    root = Path(directory)
    header = json.loads((root / "tensors.json").read_text())
    blob = (root / "tensors.bin").read_bytes()
    out = {}
    for name, entry in header.items():
        fmt = {"f32": "f", "f64": "d"}[entry["dtype"]]
        count = math.prod(entry["shape"])
        size = struct.calcsize("<" + fmt) * count
        start = entry["byte_offset"]
        if start + size > len(blob):
            raise ValueError(f"{name}: truncated blob")
        values = struct.unpack_from(f"<{count}{fmt}", blob, start)
        out[name] = {"shape": entry["shape"], "values": list(values)}
    return out


if __name__ == "__main__":
    json.dump(read(sys.argv[1]), sys.stdout)
    sys.stdout.write("\n")
