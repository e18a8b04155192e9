"""Checkpoint persistence.

Single-file container with deterministic bytes (no timestamps): a magic tag,
a format version, a canonical-JSON header describing metadata and array
shapes, the float64 little-endian payloads in header order, and a trailing
SHA-256 over everything before it. Loading verifies the version and the
checksum, so a truncated or bit-flipped file fails instead of half-loading.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .nnet import MlpSpec, ParameterVector
from .policies import (ComposedActor, ComposedValue, FeatureNorms, NetActor,
                       NetValue, PolicyHandle)

MAGIC = b"IATRPOC\n"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    """Unreadable, corrupt, or incompatible checkpoint file."""


@dataclass
class Checkpoint:
    """Self-describing policy snapshot: metadata plus named float64 arrays."""

    meta: dict
    arrays: dict[str, np.ndarray] = field(default_factory=dict)


def save_checkpoint(ckpt: Checkpoint, path):
    names = sorted(ckpt.arrays)
    header = {
        "format_version": FORMAT_VERSION,
        "meta": ckpt.meta,
        "arrays": [{"name": n, "shape": list(ckpt.arrays[n].shape)} for n in names],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", FORMAT_VERSION)
    blob += struct.pack("<Q", len(header_bytes))
    blob += header_bytes
    for n in names:
        arr = np.ascontiguousarray(ckpt.arrays[n], dtype="<f8")
        blob += arr.tobytes()
    blob += hashlib.sha256(bytes(blob)).digest()
    try:
        with open(path, "wb") as fh:
            fh.write(bytes(blob))
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint {path}: {e}") from e


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if len(blob) < len(MAGIC) + 12 + 32 or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (corrupt or truncated)")
    off = len(MAGIC)
    (version,) = struct.unpack_from("<I", body, off)
    off += 4
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version} unsupported "
                              f"(expected {FORMAT_VERSION})")
    (hlen,) = struct.unpack_from("<Q", body, off)
    off += 8
    header = json.loads(body[off : off + hlen].decode())
    off += hlen
    arrays = {}
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=off).reshape(shape)
        arrays[spec["name"]] = arr.astype(np.float64)
        off += count * 8
    if off != len(body):
        raise CheckpointError(f"{path}: payload length mismatch")
    return Checkpoint(meta=header["meta"], arrays=arrays)


def _spec_to_meta(spec: MlpSpec) -> dict:
    return {"input_dim": spec.input_dim, "hidden_dims": list(spec.hidden_dims),
            "output_dim": spec.output_dim, "activation": spec.activation}


def _spec_from_meta(d: dict) -> MlpSpec:
    return MlpSpec(d["input_dim"], d["output_dim"], tuple(d["hidden_dims"]),
                   d.get("activation", "relu"))


_NORM_FIELDS = ("own_shift", "own_scale", "goal_shift", "goal_scale",
                "other_shift", "other_scale")


def handle_to_checkpoint(handle: PolicyHandle, run_meta: dict) -> Checkpoint:
    meta = {
        "kind": handle.kind,
        "role": handle.role,
        "n_others": handle.n_others,
        "modifier_sees_goal": handle.modifier_sees_goal,
        "specs": {},
        **run_meta,
    }
    arrays = {}
    for name in _NORM_FIELDS:
        arrays[f"norms.{name}"] = getattr(handle.norms, name)
    if handle.kind == "composed":
        meta["specs"]["frozen_actor"] = _spec_to_meta(handle.frozen_actor.spec)
        meta["specs"]["frozen_critic"] = _spec_to_meta(handle.frozen_critic.spec)
        meta["specs"]["modifier_actor"] = _spec_to_meta(handle.actor.modifier.spec)
        meta["specs"]["modifier_critic"] = _spec_to_meta(handle.critic.modifier.spec)
        arrays["frozen_actor.values"] = handle.frozen_actor.values
        arrays["frozen_critic.values"] = handle.frozen_critic.values
        arrays["modifier_actor.values"] = handle.actor.modifier.values
        arrays["modifier_actor.log_std"] = handle.actor.modifier.extra
        arrays["modifier_critic.values"] = handle.critic.modifier.values
    else:
        meta["specs"]["actor"] = _spec_to_meta(handle.actor.params.spec)
        meta["specs"]["critic"] = _spec_to_meta(handle.critic.params.spec)
        arrays["actor.values"] = handle.actor.params.values
        arrays["actor.log_std"] = handle.actor.params.extra
        arrays["critic.values"] = handle.critic.params.values
    return Checkpoint(meta=meta, arrays=arrays)


def handle_from_checkpoint(ckpt: Checkpoint) -> PolicyHandle:
    meta = ckpt.meta
    try:
        norms = FeatureNorms(*[ckpt.arrays[f"norms.{n}"].copy() for n in _NORM_FIELDS])
        kind = meta["kind"]
        specs = meta["specs"]
        if kind == "composed":
            frozen_actor = ParameterVector(_spec_from_meta(specs["frozen_actor"]),
                                           ckpt.arrays["frozen_actor.values"].copy())
            frozen_critic = ParameterVector(_spec_from_meta(specs["frozen_critic"]),
                                            ckpt.arrays["frozen_critic.values"].copy())
            mod_actor = ParameterVector(_spec_from_meta(specs["modifier_actor"]),
                                        ckpt.arrays["modifier_actor.values"].copy(),
                                        ckpt.arrays["modifier_actor.log_std"].copy())
            mod_critic = ParameterVector(_spec_from_meta(specs["modifier_critic"]),
                                         ckpt.arrays["modifier_critic.values"].copy())
            actor = ComposedActor(frozen_actor, mod_actor, meta["n_others"],
                                  meta["modifier_sees_goal"])
            critic = ComposedValue(frozen_critic, mod_critic, meta["modifier_sees_goal"])
            return PolicyHandle(kind, meta["role"], meta["n_others"], norms,
                                actor, critic, frozen_actor, frozen_critic,
                                meta["modifier_sees_goal"])
        actor_pv = ParameterVector(_spec_from_meta(specs["actor"]),
                                   ckpt.arrays["actor.values"].copy(),
                                   ckpt.arrays["actor.log_std"].copy())
        critic_pv = ParameterVector(_spec_from_meta(specs["critic"]),
                                    ckpt.arrays["critic.values"].copy())
        return PolicyHandle(kind, meta["role"], meta["n_others"], norms,
                            NetActor(actor_pv), NetValue(critic_pv))
    except KeyError as e:
        raise CheckpointError(f"checkpoint missing field {e}") from e


def save_handle(handle: PolicyHandle, path, run_meta: dict):
    save_checkpoint(handle_to_checkpoint(handle, run_meta), path)


def load_handle(path) -> tuple[PolicyHandle, dict]:
    ckpt = load_checkpoint(path)
    return handle_from_checkpoint(ckpt), ckpt.meta
