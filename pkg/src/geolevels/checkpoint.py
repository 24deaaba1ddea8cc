"""Versioned, checksummed JSON checkpoints with bit-exact array storage."""

from __future__ import annotations

import base64
import dataclasses
import hashlib
import json
import os
import tempfile

import numpy as np

from .districtrep import PcaProjector
from .encfeat import Encoder
from .forest import ForestConfig, RegressionForest, Tree
from .hyperlocal import OrdinalConfig, ScoreModel
from .neural import MlpParams
from .scaling import MultiLevelModel

FORMAT = "geolevels-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


class VersionMismatchError(CheckpointError):
    pass


# Arrays are stored as base64 of their little-endian bytes, so every float survives exactly.
def _arr(a: np.ndarray) -> dict:
    a = np.asarray(a)
    dt = a.dtype.newbyteorder("<")
    return {"dtype": dt.str, "shape": list(a.shape),
            "data": base64.b64encode(np.ascontiguousarray(a, dtype=dt).tobytes()).decode()}


def _unarr(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype=np.dtype(d["dtype"])).reshape(d["shape"]).astype(
        np.dtype(d["dtype"]).newbyteorder("="))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _arr(x)
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


def _mlp(p: MlpParams) -> dict:
    return {"layer_sizes": list(p.layer_sizes), "activation": p.activation,
            "weights": [_arr(w) for w in p.weights], "biases": [_arr(b) for b in p.biases]}


def _unmlp(d: dict) -> MlpParams:
    return MlpParams(tuple(d["layer_sizes"]), [_unarr(w) for w in d["weights"]],
                     [_unarr(b) for b in d["biases"]], d["activation"])


def _score(m: ScoreModel) -> dict:
    return {"params": _mlp(m.params), "cfg": dataclasses.asdict(m.cfg),
            "history": [float(v) for v in m.history], "warmup_history": [float(v) for v in m.warmup_history]}


def _unscore(d: dict) -> ScoreModel:
    cfg = d["cfg"]
    cfg["hidden"] = tuple(cfg["hidden"])
    return ScoreModel(_unmlp(d["params"]), OrdinalConfig(**cfg), d["history"], d["warmup_history"])


def _encoder(e: Encoder) -> dict:
    return {"params": _mlp(e.params), "n_c": e.n_c, "source": e.source,
            "cluster_head": None if e.cluster_head is None else _arr(e.cluster_head),
            "history": _jsonable(e.history)}


def _unencoder(d: dict) -> Encoder:
    head = None if d["cluster_head"] is None else _unarr(d["cluster_head"])
    return Encoder(_unmlp(d["params"]), d["n_c"], head, d["source"], d["history"])


def _forest(f: RegressionForest) -> dict:
    trees = [{k: _arr(getattr(t, k)) for k in ("feature", "threshold", "left", "right", "value")}
             for t in f.trees]
    return {"n_features": f.n_features, "config": dataclasses.asdict(f.config),
            "tree_seeds": [int(s) for s in f.tree_seeds], "trees": trees}


def _unforest(d: dict) -> RegressionForest:
    trees = [Tree(**{k: _unarr(v) for k, v in t.items()}) for t in d["trees"]]
    return RegressionForest(trees, d["n_features"], ForestConfig(**d["config"]), d["tree_seeds"])


def _pca(p: PcaProjector) -> dict:
    return {"mean": _arr(p.mean), "components": _arr(p.components),
            "explained_variance_ratio": _arr(p.explained_variance_ratio)}


def _unpca(d: dict) -> PcaProjector:
    return PcaProjector(_unarr(d["mean"]), _unarr(d["components"]), _unarr(d["explained_variance_ratio"]))


def _model(m: MultiLevelModel) -> dict:
    return {"score_model": _score(m.score_model),
            "members": [{"encoder": _encoder(e), "pca": _pca(p)} for e, p in m.members],
            "forest": _forest(m.forest), "eps": m.eps, "no_hyperlocal": m.no_hyperlocal,
            "tags": [list(t) for t in m.tags], "report": _jsonable(m.report)}


def _unmodel(d: dict) -> MultiLevelModel:
    members = [(_unencoder(x["encoder"]), _unpca(x["pca"])) for x in d["members"]]
    return MultiLevelModel(_unscore(d["score_model"]), members, _unforest(d["forest"]), d["eps"],
                           d["no_hyperlocal"], [tuple(t) for t in d["tags"]], d["report"])


_KINDS = {
    "multilevel": (MultiLevelModel, _model, _unmodel),
    "score": (ScoreModel, _score, _unscore),
    "encoder": (Encoder, _encoder, _unencoder),
}


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def dumps(model) -> bytes:
    for kind, (cls, enc, _) in _KINDS.items():
        if isinstance(model, cls):
            payload = {"kind": kind, "body": enc(model)}
            break
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")
    digest = hashlib.sha256(_canonical(payload)).hexdigest()
    return _canonical({"format": FORMAT, "version": VERSION, "sha256": digest, "payload": payload})


def loads(data: bytes):
    try:
        doc = json.loads(data)
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint: {e}") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise CheckpointError("not a geolevels checkpoint")
    if doc.get("version") != VERSION:
        raise VersionMismatchError(f"checkpoint version {doc.get('version')!r}, this build reads {VERSION}")
    payload = doc.get("payload")
    if hashlib.sha256(_canonical(payload)).hexdigest() != doc.get("sha256"):
        raise CheckpointError("checksum mismatch: checkpoint is corrupt")
    try:
        return _KINDS[payload["kind"]][2](payload["body"])
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"malformed checkpoint body: {e}") from None


def atomic_write(path, data: bytes) -> None:
    """Write via a temporary file in the same directory, then rename into place."""
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(model, path) -> str:
    """Write a checkpoint; returns its sha256 file digest."""
    data = dumps(model)
    atomic_write(path, data)
    return hashlib.sha256(data).hexdigest()


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
