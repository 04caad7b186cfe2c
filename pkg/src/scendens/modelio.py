"""Fitted-model wrappers sharing one density/sample contract, plus JSON I/O.

The three model kinds (gmm, gcm, gmcm) expose ``logpdf`` over data rows,
seeded ``sample`` returning a Dataset, and a JSON-serializable payload.
Model files carry a schema version, the model kind, fit metadata and a
fingerprint of the training data.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from . import gcm, gmcm
from .dataset import EPS_CLIP, Dataset
from .gmm import GmmParams
from .marginals import MarginalModel

SCHEMA_VERSION = 1


class ModelFileError(ValueError):
    """Raised for unreadable or schema-incompatible model files."""


def data_fingerprint(ds: Dataset) -> str:
    h = hashlib.sha256()
    h.update("\x1f".join(ds.columns).encode("utf-8"))
    h.update(np.ascontiguousarray(ds.values).tobytes())
    return h.hexdigest()


@dataclass
class FittedGmm:
    """Gaussian mixture fitted on raw data."""

    params: GmmParams
    columns: list[str]

    kind = "gmm"

    @property
    def d(self) -> int:
        return self.params.d

    def logpdf(self, values: np.ndarray) -> np.ndarray:
        return self.params.logpdf(np.atleast_2d(values))

    def sample(self, n: int, seed: int) -> Dataset:
        return Dataset(self.columns, self.params.sample(n, seed))

    def restrict(self, dims: list[int]) -> "FittedGmm":
        return FittedGmm(
            self.params.restrict(dims), [self.columns[j] for j in dims]
        )

    def to_payload(self) -> dict:
        return {"params": self.params.to_payload(), "columns": self.columns}

    @classmethod
    def from_payload(cls, payload: dict) -> "FittedGmm":
        return cls(
            GmmParams.from_payload(payload["params"]), list(payload["columns"])
        )


@dataclass
class FittedGcm:
    """Gaussian copula over KDE marginals."""

    params: gcm.GcmParams
    marginals: MarginalModel

    kind = "gcm"

    @property
    def columns(self) -> list[str]:
        return self.marginals.columns

    @property
    def d(self) -> int:
        return self.params.d

    def logpdf(self, values: np.ndarray) -> np.ndarray:
        values = np.atleast_2d(values)
        log_f = self.marginals.log_pdf_matrix(values)
        u = np.clip(self.marginals.cdf_matrix(values), EPS_CLIP, 1.0 - EPS_CLIP)
        return log_f.sum(axis=1) + gcm.copula_logdensity(self.params, u)

    def sample(self, n: int, seed: int) -> Dataset:
        u = gcm.sample_unit(self.params, n, seed)
        u = np.clip(u, EPS_CLIP, 1.0 - EPS_CLIP)
        return Dataset(self.columns, self.marginals.quantile_matrix(u))

    def restrict(self, dims: list[int]) -> "FittedGcm":
        sub_marg = MarginalModel(
            [self.marginals.marginals[j] for j in dims],
            [self.columns[j] for j in dims],
        )
        return FittedGcm(self.params.restrict(dims), sub_marg)

    def to_payload(self) -> dict:
        return {
            "params": self.params.to_payload(),
            "marginals": self.marginals.to_payload(),
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "FittedGcm":
        return cls(
            gcm.GcmParams.from_payload(payload["params"]),
            MarginalModel.from_payload(payload["marginals"]),
        )


@dataclass
class FittedGmcm:
    """Gaussian mixture copula over KDE marginals.

    The joint log density follows the change-of-variables form: marginal
    log densities, minus the latent marginal log densities (the inverse
    CDF Jacobian), plus the latent mixture log density.
    """

    base: GmmParams
    marginals: MarginalModel

    kind = "gmcm"

    @property
    def columns(self) -> list[str]:
        return self.marginals.columns

    @property
    def d(self) -> int:
        return self.base.d

    def logpdf(self, values: np.ndarray) -> np.ndarray:
        values = np.atleast_2d(values)
        log_f = self.marginals.log_pdf_matrix(values)
        u = np.clip(self.marginals.cdf_matrix(values), EPS_CLIP, 1.0 - EPS_CLIP)
        _, log_marg, log_joint = gmcm.copula_parts(self.base, u)
        return log_f.sum(axis=1) - log_marg.sum(axis=1) + log_joint

    def sample(self, n: int, seed: int) -> Dataset:
        z = self.base.sample(n, seed)
        u = np.clip(
            gmcm.marginal_cdf_matrix(self.base, z), EPS_CLIP, 1.0 - EPS_CLIP
        )
        return Dataset(self.columns, self.marginals.quantile_matrix(u))

    def restrict(self, dims: list[int]) -> "FittedGmcm":
        sub_marg = MarginalModel(
            [self.marginals.marginals[j] for j in dims],
            [self.columns[j] for j in dims],
        )
        return FittedGmcm(self.base.restrict(dims), sub_marg)

    def to_payload(self) -> dict:
        return {
            "base": self.base.to_payload(),
            "marginals": self.marginals.to_payload(),
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "FittedGmcm":
        return cls(
            GmmParams.from_payload(payload["base"]),
            MarginalModel.from_payload(payload["marginals"]),
        )


_MODEL_CLASSES = {"gmm": FittedGmm, "gcm": FittedGcm, "gmcm": FittedGmcm}

FittedModel = FittedGmm | FittedGcm | FittedGmcm


def save_model(model: FittedModel, path: str | os.PathLike, metadata: dict) -> None:
    """Write a model file atomically (temp file plus rename)."""
    doc = {
        "schema_version": SCHEMA_VERSION,
        "model_kind": model.kind,
        "payload": model.to_payload(),
        "metadata": metadata,
    }
    tmp = f"{path}.tmp.{os.getpid()}"
    try:
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def load_model(path: str | os.PathLike) -> tuple[FittedModel, dict]:
    """Load a model file, validating schema version and kind."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ModelFileError(f"no such model file: {path}") from None
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"invalid model file {path}: {exc}") from None
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ModelFileError(
            f"unsupported schema version {version!r} (supported: {SCHEMA_VERSION})"
        )
    kind = doc.get("model_kind")
    if kind not in _MODEL_CLASSES:
        raise ModelFileError(f"unknown model kind {kind!r}")
    try:
        model = _MODEL_CLASSES[kind].from_payload(doc["payload"])
    except (KeyError, ValueError, TypeError) as exc:
        raise ModelFileError(f"invalid {kind} payload in {path}: {exc}") from None
    return model, doc.get("metadata", {})
