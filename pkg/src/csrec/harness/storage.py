"""On-disk formats: dataset files, checkpoints, loss traces, manifests.

Every JSON file is canonical (see :mod:`csrec.serialization`) and carries a
``format_version``; CSV files start with a ``# format_version=N`` line.
"""
from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .. import __version__
from ..exceptions import ParseError, RoleMismatch, ValidationError
from ..seqrec import PARAM_NAMES, AdamState, SeqModelParams
from ..serialization import (  # noqa: F401 (sha256_file re-exported)
    FORMAT_VERSION, dump_file, dump_jsonl, dumps, load_file, load_jsonl, sha256_bytes, sha256_file,
)
from ..sim import INTERVENTIONAL, OBSERVATIONAL, Catalog, EventSequence, UserProfile, UserRecord

ROLES = ("ftilde", "csrec")
DATASET_FILES = ("catalog.json", "users.jsonl", "sequences.jsonl", "splits.json")


def _check_version(obj, path):
    if not isinstance(obj, dict) or obj.get("format_version") != FORMAT_VERSION:
        raise ParseError(f"{path}: missing or unsupported format_version", 1, 1)


# --------------------------------------------------------------------------
# dataset


@dataclass
class Dataset:
    catalog: Catalog
    records: list
    splits: dict
    manifest: dict = field(default_factory=dict)

    def by_id(self) -> dict:
        return {r.user_id: r for r in self.records}

    def subset(self, split: str) -> list:
        if split == "all":
            return list(self.records)
        index = self.by_id()
        return [index[u] for u in self.splits[split]]


def catalog_to_dict(catalog: Catalog) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "n_genres": catalog.n_genres,
        "items": [{"id": i, "genre": int(g), "popularity": float(p)}
                  for i, (g, p) in enumerate(zip(catalog.genres, catalog.popularity))],
    }


def catalog_from_dict(d) -> Catalog:
    _check_version(d, "catalog")
    items = d["items"]
    if [it["id"] for it in items] != list(range(len(items))):
        raise ValidationError("items", "ids must be 0..N-1 in order")
    return Catalog(
        genres=np.array([it["genre"] for it in items], dtype=np.int64),
        popularity=np.array([it["popularity"] for it in items], dtype=float),
        n_genres=int(d["n_genres"]),
    )


def record_to_dict(r: UserRecord) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "user_id": r.user_id,
        "prefs": list(r.user.prefs),
        "obs": [list(e) for e in r.obs.events],
        "intv": [list(e) for e in r.intv.events],
    }


def record_from_dict(d, drift_rate: float = 0.0) -> UserRecord:
    _check_version(d, "sequences record")
    user = UserProfile(int(d["user_id"]), tuple(d["prefs"]), drift_rate)
    return UserRecord(
        user=user,
        obs=EventSequence(OBSERVATIONAL, tuple(map(tuple, d["obs"]))),
        intv=EventSequence(INTERVENTIONAL, tuple(map(tuple, d["intv"]))),
    )


def _user_to_dict(u: UserProfile) -> dict:
    return {"format_version": FORMAT_VERSION, "user_id": u.user_id, "prefs": list(u.prefs), "drift_rate": u.drift_rate}


def write_dataset(directory, catalog: Catalog, records, splits: dict, config_hash: str) -> dict:
    """Write the four dataset files plus ``manifest.json``; returns the manifest."""
    os.makedirs(directory, exist_ok=True)
    blobs = {
        "catalog.json": dump_file(catalog_to_dict(catalog), os.path.join(directory, "catalog.json")),
        "users.jsonl": dump_jsonl([_user_to_dict(r.user) for r in records], os.path.join(directory, "users.jsonl")),
        "sequences.jsonl": dump_jsonl([record_to_dict(r) for r in records], os.path.join(directory, "sequences.jsonl")),
        "splits.json": dump_file({"format_version": FORMAT_VERSION, **splits}, os.path.join(directory, "splits.json")),
    }
    files = {name: sha256_bytes(data) for name, data in blobs.items()}
    manifest = new_manifest(config_hash, files)
    write_manifest(directory, manifest)
    return manifest


def dataset_hash(files: dict) -> str:
    """Hash over the dataset files' hashes in a fixed order."""
    return sha256_bytes("".join(f"{n}:{files[n]}\n" for n in DATASET_FILES).encode("utf-8"))


def read_dataset(directory) -> Dataset:
    for name in DATASET_FILES:
        if not os.path.exists(os.path.join(directory, name)):
            raise FileNotFoundError(f"{directory}: missing {name}")
    catalog = catalog_from_dict(load_file(os.path.join(directory, "catalog.json")))
    users = {u["user_id"]: u for u in load_jsonl(os.path.join(directory, "users.jsonl"))}
    records = [
        record_from_dict(d, users.get(d["user_id"], {}).get("drift_rate", 0.0))
        for d in load_jsonl(os.path.join(directory, "sequences.jsonl"))
    ]
    splits = load_file(os.path.join(directory, "splits.json"))
    _check_version(splits, "splits")
    splits = {k: splits[k] for k in ("train", "valid", "test")}
    manifest_path = os.path.join(directory, "manifest.json")
    manifest = load_file(manifest_path) if os.path.exists(manifest_path) else {}
    return Dataset(catalog=catalog, records=records, splits=splits, manifest=manifest)


# --------------------------------------------------------------------------
# manifest


def new_manifest(config_hash: str, files: dict) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "manifest",
        "tool_version": __version__,
        "config_hash": config_hash,
        "dataset_hash": dataset_hash(files),
        "files": dict(files),
        "checkpoints": {},
        "reports": {},
    }


def write_manifest(directory, manifest: dict) -> None:
    dump_file(manifest, os.path.join(directory, "manifest.json"))


def record_timestamp(directory, step: str, when: str) -> None:
    """Wall-clock times live outside the manifest so the manifest stays reproducible."""
    path = os.path.join(directory, "timestamps.json")
    stamps = load_file(path) if os.path.exists(path) else {"format_version": FORMAT_VERSION}
    stamps[step] = when
    dump_file(stamps, path)


# --------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    role: str
    params: SeqModelParams
    hyperparams: dict
    adam: Optional[AdamState] = None

    def to_dict(self) -> dict:
        if self.role not in ROLES:
            raise ValidationError("role", f"must be one of {ROLES}")
        d = {
            "format_version": FORMAT_VERSION,
            "kind": "checkpoint",
            "role": self.role,
            "hyperparams": self.hyperparams,
            "tensors": {k: v.tolist() for k, v in self.params.as_dict().items()},
        }
        if self.adam is not None:
            d["optimizer"] = {
                "step": self.adam.step,
                "m": {k: v.tolist() for k, v in self.adam.m.as_dict().items()},
                "v": {k: v.tolist() for k, v in self.adam.v.as_dict().items()},
            }
        return d

    @classmethod
    def from_dict(cls, d) -> "Checkpoint":
        _check_version(d, "checkpoint")
        if d.get("kind") != "checkpoint":
            raise ParseError("not a checkpoint file", 1, 1)
        role = d.get("role")
        if role not in ROLES:
            raise ValidationError("role", f"must be one of {ROLES}, got {role!r}")
        missing = [n for n in PARAM_NAMES if n not in d["tensors"]]
        if missing:
            raise ValidationError("tensors", f"missing {missing}")
        adam = None
        if "optimizer" in d:
            o = d["optimizer"]
            adam = AdamState(SeqModelParams.from_dict(o["m"]), SeqModelParams.from_dict(o["v"]), int(o["step"]))
        return cls(role=role, params=SeqModelParams.from_dict(d["tensors"]), hyperparams=d["hyperparams"], adam=adam)

    def to_bytes(self) -> bytes:
        return (dumps(self.to_dict()) + "\n").encode("utf-8")


def save_checkpoint(path, ckpt: Checkpoint) -> bytes:
    data = ckpt.to_bytes()
    with open(path, "wb") as fh:
        fh.write(data)
    return data


def load_checkpoint(path, role: Optional[str] = None) -> Checkpoint:
    ckpt = Checkpoint.from_dict(load_file(path))
    if role is not None and ckpt.role != role:
        raise RoleMismatch(f"{path}: expected a {role!r} checkpoint, found {ckpt.role!r}")
    return ckpt


# --------------------------------------------------------------------------
# CSV outputs


def _csv_text(header, rows, metadata=None) -> str:
    buf = io.StringIO()
    buf.write(f"# format_version={FORMAT_VERSION}\n")
    for key, value in (metadata or {}).items():
        buf.write(f"# {key}={format(value, '.17g') if isinstance(value, float) else value}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format(v, ".17g") if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def loss_trace_csv(init_loss, losses, residuals=None) -> str:
    """One row per epoch; the loss at initialization goes in a comment line."""
    header = ["epoch", "loss"] + (["mean_sq_residual"] if residuals is not None else [])
    rows = []
    for e, loss in enumerate(losses, 1):
        rows.append([e, float(loss)] + ([float(residuals[e - 1])] if residuals is not None else []))
    return _csv_text(header, rows, {"init_loss": float(init_loss)})


def ter_csv(rows) -> str:
    return _csv_text(["user_id", "item_id", "f_intv", "f_obs", "ter"], rows)


def read_csv(text: str):
    """``(header, rows, metadata)`` of a CSV written by this module."""
    lines = text.splitlines()
    if not lines or lines[0] != f"# format_version={FORMAT_VERSION}":
        raise ParseError("missing format_version line", 1, 1)
    metadata = {}
    body = []
    for line in lines[1:]:
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            metadata[key] = value
        else:
            body.append(line)
    rows = list(csv.reader(body))
    if not rows:
        raise ParseError("missing header row", len(lines) + 1, 1)
    return rows[0], rows[1:], metadata


def write_text(path, text: str) -> bytes:
    data = text.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(data)
    return data
