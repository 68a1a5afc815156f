"""Rate-distortion evaluation and Bjontegaard-delta quality.

Each trained model contributes one RD point per metric (its average bpp
and average quality over the dataset); BD-Quality integrates monotone
piecewise-cubic fits of quality against log10(bpp) over the common rate
interval and reports the mean difference (test minus anchor).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator

from .codec import bpp as stream_bpp
from .codec import compress, decompress
from .display import choose_exposures
from .hdr_io import HdrImage
from .metrics import PSNR_METRIC, SSIM_METRIC, d_h_star, nlpd
from .model import HdrCodec

DEFAULT_METRICS = ("nlpd", "d_star_psnr", "d_star_ssim")


@dataclass
class RdPoint:
    bpp: float
    quality: float
    metric: str
    image_id: str = ""

    def __post_init__(self):
        if self.bpp <= 0:
            raise ValueError("bpp must be positive")


@dataclass
class RdCurve:
    points: list[RdPoint]

    def __post_init__(self):
        self.points = sorted(self.points, key=lambda p: p.bpp)
        rates = [p.bpp for p in self.points]
        if any(b <= a for a, b in zip(rates, rates[1:])):
            raise ValueError("curve bpp values must be strictly increasing")

    @property
    def rates(self) -> np.ndarray:
        return np.array([p.bpp for p in self.points])

    @property
    def qualities(self) -> np.ndarray:
        return np.array([p.quality for p in self.points])


@dataclass
class RdRecord:
    image_id: str
    lambda_l: float
    bpp: float
    bpp_side: float
    metric: str
    value: float


def evaluate_image(
    image: HdrImage,
    model: HdrCodec,
    l_max: float,
    metrics=DEFAULT_METRICS,
    exposure_count: int = 4,
) -> dict[str, float]:
    """Compress/decompress one image and score the requested metrics.

    Returns metric values plus the bpp accounting of both streams.
    """
    from .hdr_io import preprocess

    ref = preprocess(image)
    bs = compress(ref, model, l_max)
    ldr, hdr = decompress(bs, model)
    total, side = stream_bpp(bs)
    out = {"bpp": total, "bpp_side": side}
    exposures = choose_exposures(ref, l_max, exposure_count)
    for name in metrics:
        if name == "nlpd":
            out[name] = nlpd(ref, ldr, l_max)
        elif name == "d_star_psnr":
            out[name], _ = d_h_star(ref, hdr, l_max, exposures, PSNR_METRIC)
        elif name == "d_star_ssim":
            out[name], _ = d_h_star(ref, hdr, l_max, exposures, SSIM_METRIC)
        else:
            raise ValueError(f"unknown metric {name!r}")
    return out


def evaluate(
    images: list[tuple[str, HdrImage]],
    models: list[tuple[float, HdrCodec]],
    l_max: float = 1e5,
    metrics=DEFAULT_METRICS,
) -> tuple[list[RdRecord], dict[str, RdCurve]]:
    """Per-image records and per-model average RD curves for each metric.

    ``models`` pairs each codec with its LDR trade-off weight; curve points
    are the per-model averages, sorted by average bpp.
    """
    if not models:
        raise ValueError("need at least one model")
    records: list[RdRecord] = []
    curve_points: dict[str, list[RdPoint]] = {m: [] for m in metrics}
    for lambda_l, model in models:
        scores = []
        for image_id, image in images:
            s = evaluate_image(image, model, l_max, metrics)
            scores.append(s)
            for name in metrics:
                records.append(
                    RdRecord(image_id, lambda_l, s["bpp"], s["bpp_side"], name, s[name])
                )
        mean_bpp = float(np.mean([s["bpp"] for s in scores]))
        for name in metrics:
            curve_points[name].append(
                RdPoint(mean_bpp, float(np.mean([s[name] for s in scores])), name)
            )
    curves = {m: RdCurve(pts) for m, pts in curve_points.items()}
    return records, curves


def bd_quality(test: RdCurve, anchor: RdCurve) -> float:
    """Average quality difference (test - anchor) over the common rate range.

    Quality is fitted as a monotone piecewise-cubic function of log10(bpp)
    per curve; both fits are integrated exactly over the overlap.
    """
    for curve in (test, anchor):
        if len(curve.points) < 2:
            raise ValueError("BD computation needs at least 2 points per curve")
    lt = np.log10(test.rates)
    la = np.log10(anchor.rates)
    lo = max(lt.min(), la.min())
    hi = min(lt.max(), la.max())
    if hi <= lo:
        raise ValueError("curves have no overlapping rate range")
    f_test = PchipInterpolator(lt, test.qualities)
    f_anchor = PchipInterpolator(la, anchor.qualities)
    int_test = f_test.integrate(lo, hi)
    int_anchor = f_anchor.integrate(lo, hi)
    return float((int_test - int_anchor) / (hi - lo))


# ---------------------------------------------------------------------------
# Record I/O (CSV lines: image_id, lambda_l, bpp, bpp_side, metric, value)
# ---------------------------------------------------------------------------

_CSV_FIELDS = ("image_id", "lambda_l", "bpp", "bpp_side", "metric", "value")


def write_records(records: list[RdRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(_CSV_FIELDS)
    for r in records:
        writer.writerow([r.image_id, r.lambda_l, r.bpp, r.bpp_side, r.metric, r.value])
    return buf.getvalue()


def read_records(text: str) -> list[RdRecord]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != _CSV_FIELDS:
        raise ValueError("bad records header")
    out = []
    for row in reader:
        if not row:
            continue
        if len(row) != len(_CSV_FIELDS):
            raise ValueError(f"bad record row: {row}")
        out.append(
            RdRecord(row[0], float(row[1]), float(row[2]), float(row[3]), row[4], float(row[5]))
        )
    return out


def curve_from_records(records: list[RdRecord], metric: str) -> RdCurve:
    """Aggregate records into one RD point per lambda for the metric."""
    groups: dict[float, list[RdRecord]] = {}
    for r in records:
        if r.metric == metric:
            groups.setdefault(r.lambda_l, []).append(r)
    if not groups:
        raise ValueError(f"no records for metric {metric!r}")
    points = []
    for lam, rs in groups.items():
        points.append(
            RdPoint(
                float(np.mean([r.bpp for r in rs])),
                float(np.mean([r.value for r in rs])),
                metric,
                image_id=f"lambda={lam:g}",
            )
        )
    return RdCurve(points)
