"""Reconstruction quality metrics over lists of mesh pairs."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .discrepancy import VarifoldConfig, chamfer_distance, hausdorff_distance, varifold_distance_sq
from .mesh import TriMesh

METRICS = ("mse", "hausdorff", "chamfer", "varifold_sq")


def mean_squared_error(output: TriMesh, truth: TriMesh):
    """Mean squared vertex error, or ``None`` if the connectivities differ."""
    if not output.same_connectivity(truth):
        return None
    d = output.vertices - truth.vertices
    return float(np.mean(np.sum(d * d, axis=1)))


def pair_metrics(output: TriMesh, truth: TriMesh, cfg: VarifoldConfig = VarifoldConfig()):
    rec = {
        "hausdorff": hausdorff_distance(output, truth),
        "chamfer": chamfer_distance(output.vertices, truth.vertices),
        "varifold_sq": varifold_distance_sq(output, truth, cfg),
    }
    mse = mean_squared_error(output, truth)
    if mse is not None:
        rec["mse"] = mse
    return rec


@dataclass
class EvalRecord:
    cases: list = field(default_factory=list)
    sigma: float = 0.4

    @property
    def means(self):
        out = {}
        for key in METRICS:
            vals = [c[key] for c in self.cases if key in c]
            if vals:
                out[key] = float(np.mean(vals))
        return out

    def to_json(self):
        return {"sigma": self.sigma, "cases": self.cases, "means": self.means}

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=("name",) + METRICS, restval="")
            writer.writeheader()
            for c in self.cases:
                writer.writerow(c)
            writer.writerow({"name": "mean", **self.means})


def eval_reconstruction(outputs, ground_truth, cfg: VarifoldConfig = VarifoldConfig(),
                        names=None) -> EvalRecord:
    """Metrics for each (output, ground truth) pair, aligned by index."""
    outputs, ground_truth = list(outputs), list(ground_truth)
    if len(outputs) != len(ground_truth):
        raise ValueError(f"{len(outputs)} outputs but {len(ground_truth)} ground-truth meshes")
    names = [f"case_{i:03d}" for i in range(len(outputs))] if names is None else list(names)
    record = EvalRecord(sigma=cfg.sigma)
    for name, out, gt in zip(names, outputs, ground_truth):
        record.cases.append({"name": name, **pair_metrics(out, gt, cfg)})
    return record
