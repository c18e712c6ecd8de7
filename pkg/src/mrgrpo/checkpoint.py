"""Binary trainer checkpoints.

Layout::

    8 bytes   magic b"MRGRPOCK"
    u32 LE    format version
    u32 LE    header length n
    n bytes   UTF-8 JSON header: {"arch", "seed", "step", "h_target", "arrays": [[name, length], ...]}
    ...       the named arrays, little-endian float64, in header order

Arrays: ``theta``, ``ref_theta``, ``adam_m``, ``adam_v``.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointVersionError
from .grpo import TrainerState
from .policy import PolicyArch, PolicyParams

MAGIC = b"MRGRPOCK"
VERSION = 1
ARRAYS = ("theta", "ref_theta", "adam_m", "adam_v")


@dataclass
class Checkpoint:
    state: TrainerState
    h_target: float | None


def save_checkpoint(path, state: TrainerState, h_target: float | None) -> Path:
    """Write atomically (temp file + rename) so an interrupted save never corrupts ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {
        "theta": state.params.theta,
        "ref_theta": state.ref_params.theta,
        "adam_m": state.adam_m,
        "adam_v": state.adam_v,
    }
    header = {
        "arch": state.params.arch.to_dict(),
        "seed": int(state.seed),
        "step": int(state.step),
        "h_target": h_target,
        "arrays": [[k, int(arrays[k].size)] for k in ARRAYS],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC + struct.pack("<II", VERSION, len(blob)) + blob)
        for k in ARRAYS:
            f.write(np.ascontiguousarray(arrays[k], dtype="<f8").tobytes())
    os.replace(tmp, path)
    return path


def load_checkpoint(path, expect_arch: PolicyArch | None = None) -> Checkpoint:
    """Read a checkpoint; a wrong magic/version or architecture raises ``CheckpointVersionError``."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointVersionError(f"{path}: not a checkpoint file")
    version, n = struct.unpack("<II", data[8:16])
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, this build reads {VERSION}")
    header = json.loads(data[16:16 + n].decode("utf-8"))
    arch = PolicyArch.from_dict(header["arch"])
    if expect_arch is not None and arch != expect_arch:
        raise CheckpointVersionError(f"{path}: architecture {header['arch']} does not match the config")
    off = 16 + n
    arrays = {}
    for name, size in header["arrays"]:
        end = off + 8 * size
        if end > len(data):
            raise CheckpointVersionError(f"{path}: truncated array {name}")
        arrays[name] = np.frombuffer(data[off:end], dtype="<f8").astype(np.float64)
        off = end
    state = TrainerState(
        params=PolicyParams(arch, arrays["theta"]),
        ref_params=PolicyParams(arch, arrays["ref_theta"]),
        adam_m=arrays["adam_m"],
        adam_v=arrays["adam_v"],
        step=int(header["step"]),
        seed=int(header["seed"]),
    )
    return Checkpoint(state, header["h_target"])
