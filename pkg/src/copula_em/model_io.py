"""Versioned JSON persistence of fitted copula models.

Floats are written with Python's shortest round-trip representation, so
``dumps(loads(text)) == text`` for any document produced by :func:`dumps`.
"""
from __future__ import annotations

import json

import numpy as np

from .copula import CopulaModel
from .errors import CopulaEMError, IngestionError
from .marginals import MixtureMarginal

FORMAT = "copula_em_model_v1"


def to_document(model: CopulaModel, columns=None, fit: dict | None = None) -> dict:
    columns = list(columns) if columns is not None else [f"x{j + 1}" for j in range(model.p)]
    return {
        "format": FORMAT,
        "p": model.p,
        "columns": columns,
        "sigma": [[float(v) for v in row] for row in model.sigma],
        "marginals": [m.to_dict() for m in model.marginals],
        "fit": dict(fit or {}),
    }


def dumps(model: CopulaModel, columns=None, fit: dict | None = None) -> str:
    return _dump_doc(to_document(model, columns, fit))


def _dump_doc(doc: dict) -> str:
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def loads(text: str):
    """Parse a model document. Returns ``(model, columns, fit)``."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise IngestionError(f"model file is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise IngestionError(f"model file must declare format {FORMAT!r}")
    try:
        p = int(doc["p"])
        sigma = np.array(doc["sigma"], dtype=float)
        margs = [MixtureMarginal.from_dict(d) for d in doc["marginals"]]
        columns = [str(c) for c in doc["columns"]]
        fit = dict(doc.get("fit", {}))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CopulaEMError):
            raise IngestionError(f"invalid model file: {exc}") from None
        raise IngestionError(f"invalid model file: missing or malformed field ({exc})") from None
    if sigma.shape != (p, p) or len(margs) != p or len(columns) != p:
        raise IngestionError(f"model file is inconsistent with p={p}")
    try:
        model = CopulaModel(sigma, margs)
    except CopulaEMError as exc:
        raise IngestionError(f"invalid model file: {exc}") from None
    return model, columns, fit


def save(path, model: CopulaModel, columns=None, fit: dict | None = None) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(model, columns, fit))


def load(path):
    with open(path) as fh:
        return loads(fh.read())
