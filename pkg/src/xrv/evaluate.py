"""Fidelity metrics and the depth-resolution study.

The study sweeps stack heights over a train/test corpus: for each height
h the ground truth is the y-downsampled test volume, the input is its
projection, and the contenders are the minimum-norm replicate baseline
and example-based reconstruction with and without the pairwise term and
with and without exact projection enforcement.  One CSV row per
(h, method) aggregates RMSE/PSNR over the test volumes.

Wall-clock runtime is reported per row but is inherently nondeterministic;
golden comparisons should ignore that column (everything else is
bit-stable for fixed seeds).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .forward import downsample_y, project_y, replicate_baseline
from .grids import ValidationError, Volume
from .inference import voxelize
from .training import PatchSpec, build_index, extract_pairs

CSV_HEADER = "h,method,rmse,psnr,max_proj_residual,runtime_s"

METHOD_NAMES = (
    "replicate",
    "ebsr_unary",
    "ebsr_unary_enforced",
    "ebsr_full",
    "ebsr_full_enforced",
)


def rmse(a: Volume, b: Volume) -> float:
    """Root mean squared voxel difference; dims must match."""
    if a.data.shape != b.data.shape:
        raise ValidationError(
            f"volume shapes differ: {a.data.shape} vs {b.data.shape}"
        )
    diff = a.data - b.data
    return float(np.sqrt(np.mean(diff * diff)))


def psnr(a: Volume, b: Volume, peak: float) -> float:
    """Peak signal-to-noise ratio in dB; +inf when the volumes coincide."""
    if not peak > 0:
        raise ValidationError(f"peak must be > 0, got {peak}")
    r = rmse(a, b)
    if r == 0.0:
        return math.inf
    return 20.0 * math.log10(peak / r)


def _psnr_from_rmse(r, peak):
    return math.inf if r == 0.0 else 20.0 * math.log10(peak / r)


@dataclass(frozen=True)
class StudyRow:
    h: int
    method: str
    rmse: float
    psnr: float
    max_proj_residual: float
    runtime_s: float


@dataclass(frozen=True)
class StudyReport:
    rows: tuple

    def to_csv(self) -> str:
        """Render as CSV with 6-significant-digit numeric formatting."""
        lines = [CSV_HEADER]
        for r in self.rows:
            lines.append(
                "%d,%s,%s,%s,%s,%s"
                % (r.h, r.method, _g6(r.rmse), _g6(r.psnr),
                   _g6(r.max_proj_residual), _g6(r.runtime_s))
            )
        return "\n".join(lines) + "\n"


def _g6(x):
    return "%.6g" % x


def resolution_study(train, test, heights, spec: PatchSpec = None,
                     lam: float = 1.0, peak: float = 1000.0,
                     max_sweeps: int = 50) -> StudyReport:
    """Sweep stack heights and methods over a train/test volume corpus.

    Every height must divide every volume's ny, and the train and test
    sets must be disjoint.  Rows come out ordered by (height, method);
    runtime covers reconstruction only (shared database builds are
    excluded).
    """
    train = list(train)
    test = list(test)
    if spec is None:
        spec = PatchSpec()
    if not train or not test:
        raise ValidationError("need at least one training and one test volume")
    heights = [int(h) for h in heights]
    if not heights:
        raise ValidationError("need at least one stack height")
    for vol in train + test:
        for h in heights:
            if vol.ny % h != 0:
                raise ValidationError(f"height {h} does not divide ny={vol.ny}")
    for i, tr in enumerate(train):
        for j, te in enumerate(test):
            if tr is te or (tr.data.shape == te.data.shape
                            and np.array_equal(tr.data, te.data)):
                raise ValidationError(f"train volume {i} and test volume {j} coincide")

    rows = []
    for h in heights:
        spec_h = replace(spec, h=h)
        all_pairs = []
        for vol_id, tv in enumerate(train):
            all_pairs.extend(extract_pairs(tv, spec_h, volume_id=vol_id))
        index = build_index(all_pairs, spec_h)

        def reconstruct(method, img):
            if method == "replicate":
                return replicate_baseline(img, h)
            enforce = method.endswith("_enforced")
            lam_m = 0.0 if method.startswith("ebsr_unary") else lam
            result = voxelize(img, index, lam=lam_m, n_modes=1,
                              enforce=enforce, max_sweeps=max_sweeps)
            return result.modes[0][0]

        for method in METHOD_NAMES:
            errs = []
            resid = 0.0
            elapsed = 0.0
            for te in test:
                gt = downsample_y(te, te.ny // h)
                img = project_y(te)
                t0 = time.perf_counter()
                recon = reconstruct(method, img)
                elapsed += time.perf_counter() - t0
                errs.append(rmse(recon, gt))
                resid = max(resid, float(np.max(np.abs(project_y(recon).data - img.data))))
            agg = float(np.mean(errs))
            rows.append(StudyRow(h=h, method=method, rmse=agg,
                                 psnr=_psnr_from_rmse(agg, peak),
                                 max_proj_residual=resid, runtime_s=elapsed))
    return StudyReport(rows=tuple(rows))
