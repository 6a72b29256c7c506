"""End-point error maps and ALL / NOC / OCC aggregation.

ALL is every pixel valid in the "occ" ground truth, NOC every pixel valid in
the "noc" ground truth, and OCC their difference.  All three regions are
scored against the flow values stored in the "occ" file.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import as_flow
from .errors import DimMismatch, NocNotSubset, RegionEmpty
from .flowio import FlowFile

REGIONS = ("all", "noc", "occ")
FL_ABS_THRESH = 3.0
FL_REL_THRESH = 0.05


def _as_flowfile(x) -> FlowFile:
    return x if isinstance(x, FlowFile) else FlowFile(as_flow(x), None)


def epe_map(est, gt) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel end-point error and the mask where it is defined.

    ``est`` is a flow array (or ``FlowFile``, whose mask is ignored); ``gt``
    a ``FlowFile`` or flow array.  Pixels where ``gt`` is invalid get NaN.
    """
    e = est.flow if isinstance(est, FlowFile) else as_flow(est)
    g = _as_flowfile(gt)
    if e.shape != g.flow.shape:
        raise DimMismatch(f"estimate {e.shape[:2]} vs ground truth {g.flow.shape[:2]}")
    epe = np.sqrt(np.sum((e - g.flow) ** 2, axis=2))
    return np.where(g.valid, epe, np.nan), g.valid.copy()


@dataclass(frozen=True)
class EvalReport:
    epe_all: float
    epe_noc: float
    epe_occ: float
    fl_all: float
    n_all: int
    n_noc: int
    n_occ: int

    @property
    def empty_regions(self) -> tuple[str, ...]:
        return tuple(r for r in REGIONS if getattr(self, f"n_{r}") == 0)

    def check(self) -> "EvalReport":
        """Raise ``RegionEmpty`` if any region had no pixels."""
        if self.empty_regions:
            raise RegionEmpty(f"no pixels in region(s): {', '.join(self.empty_regions)}")
        return self

    def as_dict(self) -> dict:
        return {
            "epe_all": self.epe_all, "epe_noc": self.epe_noc, "epe_occ": self.epe_occ,
            "fl_all": self.fl_all, "n_all": self.n_all, "n_noc": self.n_noc, "n_occ": self.n_occ,
        }


def _mean(values: np.ndarray) -> float:
    return float(np.mean(values)) if values.size else math.nan


def evaluate(est, gt_occ, gt_noc) -> EvalReport:
    """Score ``est`` against a KITTI-style occ/noc ground-truth pair.

    An empty region reports NaN for its EPE (and for ``fl_all`` when ALL is
    empty); use ``EvalReport.check`` to turn that into ``RegionEmpty``.
    """
    occ, noc = _as_flowfile(gt_occ), _as_flowfile(gt_noc)
    if occ.flow.shape != noc.flow.shape:
        raise DimMismatch(f"gt_occ {occ.flow.shape[:2]} vs gt_noc {noc.flow.shape[:2]}")
    if np.any(noc.valid & ~occ.valid):
        n = int(np.count_nonzero(noc.valid & ~occ.valid))
        raise NocNotSubset(f"{n} pixel(s) are valid in gt_noc but not in gt_occ")
    epe, _ = epe_map(est, occ)
    m_all = occ.valid
    m_noc = noc.valid
    m_occ = occ.valid & ~noc.valid
    e_all = epe[m_all]
    mag = np.sqrt(np.sum(occ.flow ** 2, axis=2))[m_all]
    outliers = (e_all > FL_ABS_THRESH) & (e_all > FL_REL_THRESH * mag)
    return EvalReport(
        epe_all=_mean(e_all),
        epe_noc=_mean(epe[m_noc]),
        epe_occ=_mean(epe[m_occ]),
        fl_all=_mean(outliers.astype(np.float64)),
        n_all=int(e_all.size),
        n_noc=int(np.count_nonzero(m_noc)),
        n_occ=int(np.count_nonzero(m_occ)),
    )


def format_report(report: EvalReport) -> str:
    """Human-readable table."""
    lines = ["region      EPE(px)   pixels"]
    for r in REGIONS:
        lines.append(f"{r.upper():<8} {getattr(report, f'epe_{r}'):>10.4f} {getattr(report, f'n_{r}'):>8d}")
    lines.append(f"Fl-all   {100.0 * report.fl_all:>9.2f}%")
    return "\n".join(lines)
