"""Density grid container and serialization.

A DensityGrid holds density values sampled at cell centers on one or two
loss axes, plus enough metadata (scenario fingerprint, quadrature settings,
schema version) to make every artifact self-describing and reproducible.

Serialized artifacts are deterministic: the in-memory creation timestamp is
excluded by default so re-running a scenario yields byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError

SCHEMA_VERSION = "1"


def canonical_json(obj) -> str:
    """Stable, compact JSON used for hashing and artifact embedding."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def scenario_fingerprint(resolved: dict) -> str:
    """Hex digest identifying a resolved scenario, independent of where its
    outputs are written."""
    content = {k: v for k, v in resolved.items() if k != "outputs"}
    return hashlib.sha256(canonical_json(content).encode()).hexdigest()[:16]


def _fmt(x: float) -> str:
    return f"{x:.17g}"


@dataclass
class DensityGrid:
    """Density values at cell centers, with optional solver quality flags.

    axes : tuple of one or two strictly increasing center arrays
    values : array of matching shape, nonnegative, per unit loss (or loss^2)
    quality : same-shape float array, 0 = clean, 1 = near-singular solve
    metadata : schema version, grid kind, fingerprint, quadrature settings
    """

    axes: tuple
    values: np.ndarray
    metadata: dict = field(default_factory=dict)
    quality: np.ndarray | None = None
    timestamp: float = field(default_factory=time.time, compare=False)

    def __post_init__(self):
        self.axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
        if len(self.axes) not in (1, 2):
            raise ParameterError("DensityGrid supports 1 or 2 axes")
        for a in self.axes:
            if a.ndim != 1 or len(a) < 2 or np.any(np.diff(a) <= 0):
                raise ParameterError("each axis must be strictly increasing")
        self.values = np.asarray(self.values, dtype=float)
        expected = tuple(len(a) for a in self.axes)
        if self.values.shape != expected:
            raise ParameterError(
                f"values shape {self.values.shape} does not match axes {expected}"
            )
        if np.any(self.values < -1e-12):
            raise ParameterError("densities must be nonnegative")
        self.values = np.maximum(self.values, 0.0)
        if self.quality is not None:
            self.quality = np.asarray(self.quality, dtype=float)
            if self.quality.shape != self.values.shape:
                raise ParameterError("quality shape must match values")
        self.metadata.setdefault("schema_version", SCHEMA_VERSION)

    def to_csv(self, path, comments=()) -> None:
        """Write rows of (l1[, l2], density[, quality]) at full round-trip
        precision with Unix newlines.  Optional comment lines ("# ..." before
        the header) let artifacts embed provenance without breaking parsers
        that skip comments."""
        cols = ["l1", "l2"][: len(self.axes)] + ["density"]
        if self.quality is not None:
            cols.append("quality")
        with open(path, "w", newline="\n") as fh:
            for line in comments:
                fh.write(f"# {line}\n")
            fh.write(",".join(cols) + "\n")
            if len(self.axes) == 1:
                for i, x in enumerate(self.axes[0]):
                    row = [_fmt(x), _fmt(self.values[i])]
                    if self.quality is not None:
                        row.append(_fmt(self.quality[i]))
                    fh.write(",".join(row) + "\n")
            else:
                for i, x in enumerate(self.axes[0]):
                    for j, y in enumerate(self.axes[1]):
                        row = [_fmt(x), _fmt(y), _fmt(self.values[i, j])]
                        if self.quality is not None:
                            row.append(_fmt(self.quality[i, j]))
                        fh.write(",".join(row) + "\n")

    def to_json(self, path=None, include_timestamp: bool = False):
        """JSON envelope with full metadata; returns the string if no path.

        The timestamp is excluded unless asked for, keeping artifacts
        byte-identical across re-runs.
        """
        env = {
            "schema_version": self.metadata.get("schema_version", SCHEMA_VERSION),
            "kind": "density_grid",
            "axes": [a.tolist() for a in self.axes],
            "values": self.values.tolist(),
            "quality": None if self.quality is None else self.quality.tolist(),
            "metadata": {k: v for k, v in self.metadata.items()},
        }
        if include_timestamp:
            env["timestamp"] = self.timestamp
        text = json.dumps(env, sort_keys=True, indent=1) + "\n"
        if path is not None:
            with open(path, "w", newline="\n") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_json(cls, path) -> "DensityGrid":
        with open(path) as fh:
            env = json.load(fh)
        if env.get("kind") != "density_grid":
            raise ParameterError(f"not a density grid file: {path}")
        quality = env.get("quality")
        return cls(
            axes=tuple(np.asarray(a) for a in env["axes"]),
            values=np.asarray(env["values"]),
            metadata=env.get("metadata", {}),
            quality=None if quality is None else np.asarray(quality),
        )


def cell_centers(n_cells: int, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    """Centers of n_cells equal cells spanning [lo, hi]."""
    if n_cells < 2:
        raise ParameterError("need at least 2 cells")
    edges = np.linspace(lo, hi, n_cells + 1)
    return 0.5 * (edges[:-1] + edges[1:])
