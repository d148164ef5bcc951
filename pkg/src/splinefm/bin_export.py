"""Convert a spline-encoded model into a conventional binned model.

For each bin the continuous field's reduced embedding p(z) and linear
term are evaluated at the bin's midpoint (midpoints taken in raw-value
space, then transformed), producing a model that needs only interval
lookup and the one-hot path to serve.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .model import ModelParams
from .schema import (
    BinnedNumerical,
    ContinuousNumerical,
    DatasetSchema,
    FieldSchema,
)

__all__ = ["BinnedExport", "make_boundaries", "export_binned"]


@dataclass(frozen=True)
class BinnedExport:
    field_id: int
    boundaries: np.ndarray = field(repr=False)  # length N+1
    bin_embeddings: np.ndarray = field(repr=False)  # (N, k_f)
    bin_linear: np.ndarray = field(repr=False)  # (N,)
    midpoints: np.ndarray = field(repr=False)  # raw-space midpoints used

    @property
    def num_bins(self) -> int:
        return len(self.boundaries) - 1

    def table(self) -> list:
        """Human-readable rows: (low, high, midpoint, linear, embedding...)."""
        rows = []
        for j in range(self.num_bins):
            rows.append(
                (
                    float(self.boundaries[j]),
                    float(self.boundaries[j + 1]),
                    float(self.midpoints[j]),
                    float(self.bin_linear[j]),
                    *self.bin_embeddings[j].tolist(),
                )
            )
        return rows


def make_boundaries(transform, num_bins: int, mode: str = "inverse_cdf", explicit=None):
    """Bin boundaries for export.

    Modes: "inverse_cdf" places boundaries at transform.inverse(j/N);
    "geometric" builds a geometric ladder over the transform's range
    (positive domain required); "explicit" validates user boundaries.
    """
    if mode == "explicit":
        b = np.asarray(explicit, dtype=float)
        if b.ndim != 1 or len(b) < 2 or not (np.diff(b) > 0).all():
            raise ConfigError("explicit boundaries must be strictly increasing")
        return b
    if num_bins < 1:
        raise ConfigError(f"need at least 1 bin, got {num_bins}")
    if mode == "inverse_cdf":
        return np.array([transform.inverse(j / num_bins) for j in range(num_bins + 1)])
    if mode == "geometric":
        lo, hi = transform.inverse(0.0), transform.inverse(1.0)
        if lo <= 0.0:
            raise ConfigError("geometric boundaries require a positive domain")
        return np.geomspace(lo, hi, num_bins + 1)
    raise ConfigError(f"unknown boundary mode {mode!r}")


def export_binned(
    model: ModelParams, field_name: str, boundaries
) -> tuple[ModelParams, BinnedExport]:
    """Re-type one continuous field as binned, materializing per-bin rows."""
    schema = model.schema
    fld = schema.field_named(field_name)
    kind = fld.kind
    if not isinstance(kind, ContinuousNumerical):
        raise ConfigError(f"field {field_name!r} is not continuous numerical")
    boundaries = np.asarray(boundaries, dtype=float)
    if boundaries.ndim != 1 or len(boundaries) < 2 or not (np.diff(boundaries) > 0).all():
        raise ConfigError("boundaries must be strictly increasing, length >= 2")
    lo, hi = kind.transform.inverse(0.0), kind.transform.inverse(1.0)
    if boundaries[0] > lo or boundaries[-1] < hi:
        warnings.warn(
            f"boundaries [{boundaries[0]}, {boundaries[-1]}] do not cover the "
            f"transform range [{lo}, {hi}]; out-of-range values clamp to outer bins",
            stacklevel=2,
        )

    fid = fld.field_id
    num_bins = len(boundaries) - 1
    midpoints = 0.5 * (boundaries[:-1] + boundaries[1:])
    k_f = model.interaction.embed_dim(fid)
    bin_embeddings = np.empty((num_bins, k_f))
    bin_linear = np.empty(num_bins)
    w_field = model.w[fld.offset : fld.offset + fld.width]
    for j, mid in enumerate(midpoints):
        basis_vals = kind.basis.eval(kind.transform.apply(mid))
        bin_embeddings[j] = basis_vals @ model.V[fid]
        bin_linear[j] = basis_vals @ w_field

    new_fields = []
    offset = 0
    new_V = []
    new_w_parts = []
    for f in schema.fields:
        if f.field_id == fid:
            new_kind = BinnedNumerical(boundaries)
            new_V.append(bin_embeddings.copy())
            new_w_parts.append(bin_linear.copy())
        else:
            new_kind = f.kind
            new_V.append(model.V[f.field_id].copy())
            new_w_parts.append(model.w[f.offset : f.offset + f.width].copy())
        new_fields.append(
            FieldSchema(field_id=f.field_id, name=f.name, kind=new_kind, offset=offset)
        )
        offset += new_kind.width
    new_schema = DatasetSchema(fields=tuple(new_fields), label_kind=schema.label_kind)
    new_model = ModelParams(
        schema=new_schema,
        interaction=model.interaction,
        w0=model.w0,
        w=np.concatenate(new_w_parts),
        V=new_V,
    )
    export = BinnedExport(
        field_id=fid,
        boundaries=boundaries,
        bin_embeddings=bin_embeddings,
        bin_linear=bin_linear,
        midpoints=midpoints,
    )
    return new_model, export
