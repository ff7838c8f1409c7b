"""Pose-estimation metrics: geodesic distance to reference rotations,
recall and the error-distribution histogram."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MissingReference
from .geometry import geodesic_distance

N_BINS = 20


@dataclass
class EvalReport:
    n_images: int
    n_accepted: int
    recall: float
    gd_accepted: float | None  # mean GD over accepted images; None when none are
    gd_all: float | None  # mean GD over all images, ignoring acceptance
    histogram: np.ndarray  # (N_BINS,) counts over [0, 1]
    histogram_accepted: np.ndarray
    per_image: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "n_images": self.n_images,
            "n_accepted": self.n_accepted,
            "recall": self.recall,
            "gd_accepted": self.gd_accepted,
            "gd_all": self.gd_all,
            "histogram_edges": [float(x) for x in bin_edges()],
            "histogram": [int(x) for x in self.histogram],
            "histogram_accepted": [int(x) for x in self.histogram_accepted],
        }


def bin_edges(n_bins: int = N_BINS):
    return np.linspace(0.0, 1.0, n_bins + 1)


def gd_histogram(values, n_bins: int = N_BINS):
    """Counts over equal bins partitioning [0, 1]; the last bin is closed."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    idx = np.minimum((v * n_bins).astype(np.int64), n_bins - 1)
    return np.bincount(idx, minlength=n_bins)


def evaluate(estimates, reference) -> EvalReport:
    """Compare estimates with reference poses keyed by image id.

    ``reference`` maps image id to an object with a quaternion ``q``.
    Raises ``MissingReference`` when an estimate has no reference pose.
    """
    estimates = sorted(estimates, key=lambda e: e.image_id)
    missing = [e.image_id for e in estimates if e.image_id not in reference]
    if missing:
        raise MissingReference(f"no reference pose for {len(missing)} image(s), e.g. {missing[0]!r}")
    n = len(estimates)
    if n == 0:
        empty = np.zeros(N_BINS, dtype=np.int64)
        return EvalReport(0, 0, 0.0, None, None, empty, empty.copy(), {})
    gd = np.array([float(geodesic_distance(e.q, reference[e.image_id].q)) for e in estimates])
    acc = np.array([bool(e.accepted) for e in estimates])
    n_acc = int(acc.sum())
    return EvalReport(
        n_images=n,
        n_accepted=n_acc,
        recall=n_acc / n,
        gd_accepted=float(gd[acc].mean()) if n_acc else None,
        gd_all=float(gd.mean()),
        histogram=gd_histogram(gd),
        histogram_accepted=gd_histogram(gd[acc]),
        per_image={e.image_id: float(g) for e, g in zip(estimates, gd)},
    )


def _num(x):
    return "null" if x is None else f"{x:.6f}"


def format_report(rep: EvalReport, title: str = "") -> str:
    """Structured text: ``key: value`` lines, then the histogram table."""
    lines = []
    if title:
        lines.append(f"# {title}")
    lines += [
        f"images: {rep.n_images}",
        f"accepted: {rep.n_accepted}",
        f"recall: {rep.recall:.6f}",
        f"gd_accepted: {_num(rep.gd_accepted)}",
        f"gd_all: {_num(rep.gd_all)}",
        "histogram:",
    ]
    edges = bin_edges()
    for k in range(N_BINS):
        lines.append(
            f"  [{edges[k]:.2f}, {edges[k + 1]:.2f}{']' if k == N_BINS - 1 else ')'}"
            f" all={int(rep.histogram[k])} accepted={int(rep.histogram_accepted[k])}"
        )
    return "\n".join(lines) + "\n"


def histogram_csv(rep: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_lo", "bin_hi", "count_all", "count_accepted"])
    edges = bin_edges()
    for k in range(N_BINS):
        w.writerow([f"{edges[k]:.2f}", f"{edges[k + 1]:.2f}", int(rep.histogram[k]), int(rep.histogram_accepted[k])])
    return buf.getvalue()


def per_image_csv(rep: EvalReport, estimates) -> str:
    by_id = {e.image_id: e for e in estimates}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["image_id", "gd", "accepted"])
    for iid in sorted(rep.per_image):
        w.writerow([iid, f"{rep.per_image[iid]:.9g}", int(bool(by_id[iid].accepted))])
    return buf.getvalue()


def write_report(rep: EvalReport, out_dir, estimates=(), title: str = "") -> list[Path]:
    """``report.txt``, ``report.json``, ``gd_histogram.csv`` and, when
    estimates are given, ``gd_per_image.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "report.txt", out / "report.json", out / "gd_histogram.csv"]
    paths[0].write_text(format_report(rep, title))
    paths[1].write_text(json.dumps(rep.to_dict(), indent=2, sort_keys=True) + "\n")
    paths[2].write_text(histogram_csv(rep))
    if estimates:
        paths.append(out / "gd_per_image.csv")
        paths[3].write_text(per_image_csv(rep, estimates))
    return paths


def read_report(path) -> dict:
    return json.loads(Path(path).read_text())


def histogram_png(rep_dict: dict, path, width: int = 400, height: int = 200) -> None:
    """Bar chart of the GD histogram (all images grey, accepted white)."""
    from PIL import Image, ImageDraw

    counts = np.asarray(rep_dict["histogram"], dtype=np.float64)
    acc = np.asarray(rep_dict["histogram_accepted"], dtype=np.float64)
    top = max(counts.max(), 1.0)
    img = Image.new("L", (width, height), 0)
    draw = ImageDraw.Draw(img)
    bw = width / len(counts)
    for k, (c, a) in enumerate(zip(counts, acc)):
        x0 = int(round(k * bw)) + 1
        x1 = int(round((k + 1) * bw)) - 1
        for val, shade in ((c, 110), (a, 255)):
            if val > 0:
                draw.rectangle([x0, height - 1 - int(round(val / top * (height - 1))), x1, height - 1], fill=shade)
    img.save(path)
