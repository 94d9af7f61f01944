"""Single-file checkpoint: versioned header, config snapshot, named tensors.

Layout: magic "SGCK", u32 version, u64 step, u32 json length + config JSON,
u32 record count, then per record a length-prefixed UTF-8 name, u8 rank,
rank x u32 dims and the float32 little-endian payload. Optimizer moments
and running statistics ride along as ordinary records so a resumed run
continues bit-for-bit.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import FormatError

CKPT_MAGIC = b"SGCK"
CKPT_VERSION = 1


def write_records(path: Path, step: int, config: dict,
                  records: dict[str, torch.Tensor]) -> None:
    path = Path(path)
    payload = json.dumps(config, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<IQ", CKPT_VERSION, step))
        f.write(struct.pack("<I", len(payload)))
        f.write(payload)
        f.write(struct.pack("<I", len(records)))
        for name, tensor in records.items():
            data = tensor.detach().to(torch.float32).cpu().numpy()
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", data.ndim))
            for d in data.shape:
                f.write(struct.pack("<I", d))
            f.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def read_records(path: Path) -> tuple[int, dict, dict[str, torch.Tensor]]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic")
    version, step = struct.unpack_from("<IQ", raw, 4)
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    offset = 16
    (json_len,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    config = json.loads(raw[offset:offset + json_len].decode("utf-8"))
    offset += json_len
    (count,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    records: dict[str, torch.Tensor] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", raw, offset)
            offset += 2
            name = raw[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<B", raw, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", raw, offset) if ndim else ()
            offset += 4 * ndim
            numel = int(np.prod(shape)) if ndim else 1
            end = offset + 4 * numel
            if end > len(raw):
                raise FormatError(f"{path}: truncated record {name!r}")
            data = np.frombuffer(raw[offset:end], dtype="<f4").reshape(shape)
            records[name] = torch.from_numpy(data.copy())
            offset = end
    except struct.error as exc:
        raise FormatError(f"{path}: truncated checkpoint") from exc
    return step, config, records


def module_records(prefix: str, module: torch.nn.Module) -> dict[str, torch.Tensor]:
    return {f"{prefix}.{name}": tensor
            for name, tensor in module.state_dict().items()}


def load_module_records(prefix: str, module: torch.nn.Module,
                        records: dict[str, torch.Tensor]) -> None:
    state = {}
    for name, reference in module.state_dict().items():
        key = f"{prefix}.{name}"
        if key not in records:
            raise FormatError(f"checkpoint is missing record {key!r}")
        state[name] = records[key].to(reference.dtype).reshape(reference.shape)
    module.load_state_dict(state)


def optimizer_records(prefix: str, opt: torch.optim.Adam) -> dict[str, torch.Tensor]:
    out: dict[str, torch.Tensor] = {}
    params = opt.param_groups[0]["params"]
    for idx, p in enumerate(params):
        state = opt.state.get(p, {})
        for key in ("exp_avg", "exp_avg_sq"):
            if key in state:
                out[f"{prefix}.{idx}.{key}"] = state[key]
        if "step" in state:
            step = state["step"]
            out[f"{prefix}.{idx}.step"] = (
                step if isinstance(step, torch.Tensor) else torch.tensor(float(step)))
    return out


def load_optimizer_records(prefix: str, opt: torch.optim.Adam,
                           records: dict[str, torch.Tensor]) -> None:
    params = opt.param_groups[0]["params"]
    for idx, p in enumerate(params):
        key_avg = f"{prefix}.{idx}.exp_avg"
        if key_avg not in records:
            continue  # parameter never stepped before the checkpoint
        opt.state[p] = {
            "step": records[f"{prefix}.{idx}.step"].reshape(()),
            "exp_avg": records[key_avg].reshape(p.shape).clone(),
            "exp_avg_sq": records[f"{prefix}.{idx}.exp_avg_sq"].reshape(p.shape).clone(),
        }


def config_snapshot(**dataclass_configs) -> dict:
    return {name: dataclasses.asdict(cfg) for name, cfg in dataclass_configs.items()}
