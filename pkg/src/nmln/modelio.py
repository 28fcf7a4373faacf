"""Model container: a self-describing JSON file with bit-exact parameters.

Arrays are stored as base64 of their little-endian float64 bytes, so a
save/load round trip reproduces every parameter to the last ulp and the
file bytes are deterministic.  The container carries a hash of the
signature; loading against a different signature is refused.
"""

from __future__ import annotations

import base64
import hashlib
import json
from pathlib import Path

import numpy as np

from .logic import parse_formula
from .network import DenseNet, Layer
from .potentials import EmbeddingTable, IndicatorPotential, PotentialModel
from .relational import Signature

FORMAT = "nmln-model"
VERSION = 1


class ModelIOError(ValueError):
    """Raised on container mismatches: version, hash, or structure."""


def signature_hash(signature: Signature) -> str:
    payload = json.dumps(
        {
            "constants": list(signature.constants),
            "predicates": [[n, a] for n, a in signature.predicates],
        },
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _encode(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    return {
        "shape": list(arr.shape),
        "data": base64.b64encode(arr.astype("<f8").tobytes()).decode("ascii"),
    }


def _decode(obj: dict) -> np.ndarray:
    data = np.frombuffer(base64.b64decode(obj["data"]), dtype="<f8")
    return data.reshape(obj["shape"]).astype(np.float64)


def save_model(model: PotentialModel, path) -> None:
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "signature": {
            "constants": list(model.signature.constants),
            "predicates": [[n, a] for n, a in model.signature.predicates],
        },
        "signature_hash": signature_hash(model.signature),
        "k": model.k,
        "betas": _encode(model.betas),
        "net": None
        if model.net is None
        else {
            "layers": [
                {
                    "activation": layer.activation,
                    "weights": _encode(layer.weights),
                    "bias": _encode(layer.bias),
                }
                for layer in model.net.layers
            ]
        },
        "embeddings": None
        if model.embeddings is None
        else _encode(model.embeddings.vectors),
        "indicators": [
            {"formula": str(ind.formula), "weight": ind.weight}
            for ind in model.indicators
        ],
    }
    Path(path).write_text(
        json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n",
        encoding="utf-8",
    )


def load_model(path, signature: Signature | None = None) -> PotentialModel:
    """Load a model container; refuse version or signature-hash mismatches."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != FORMAT or doc.get("version") != VERSION:
        raise ModelIOError(
            f"unsupported container {doc.get('format')!r} v{doc.get('version')}"
        )
    stored_sig = Signature(
        tuple(doc["signature"]["constants"]),
        tuple((n, a) for n, a in doc["signature"]["predicates"]),
    )
    if signature_hash(stored_sig) != doc["signature_hash"]:
        raise ModelIOError("signature hash mismatch: container was tampered with")
    if signature is not None:
        if signature_hash(signature) != doc["signature_hash"]:
            raise ModelIOError(
                "model was trained against a different signature; refusing to load"
            )
        stored_sig = signature
    net = None
    if doc["net"] is not None:
        net = DenseNet(
            [
                Layer(_decode(l["weights"]), _decode(l["bias"]), l["activation"])
                for l in doc["net"]["layers"]
            ]
        )
    embeddings = (
        EmbeddingTable(_decode(doc["embeddings"]))
        if doc["embeddings"] is not None
        else None
    )
    indicators = tuple(
        IndicatorPotential(parse_formula(i["formula"]), float(i["weight"]))
        for i in doc["indicators"]
    )
    return PotentialModel(
        signature=stored_sig,
        k=int(doc["k"]),
        net=net,
        betas=_decode(doc["betas"]),
        embeddings=embeddings,
        indicators=indicators,
    )
