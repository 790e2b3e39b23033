"""Result emitters and post-hoc analyses over finished runs.

All outputs are byte-stable given equal inputs: floats are formatted with
a fixed precision, rows are sorted, and SVG files use a fixed canvas and
palette. Emitters compute everything first and only then write, so a
failure never leaves partial files.
"""

import csv
import io
import json
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import NotFoundError
from .metrics import pca_project
from .tasks import TaskKind


def _fmt(x, precision: int = 6) -> str:
    if x is None or x == "":
        return ""
    return f"{float(x):.{precision}f}"


def write_metrics_csv(path, history: list) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["epoch", "split", "loss", "auprc"])
    for row in history:
        writer.writerow([row["epoch"], row["split"], _fmt(row["loss"]),
                         _fmt(row.get("auprc"))])
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def write_manifest(path, manifest: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n",
                    encoding="utf-8")
    return path


# -------------------------------------------------------- feature importance

def feature_importance(model, predictor, data, ids, category: int | None = None,
                       batch_size: int = 64):
    """Rank descriptions by mean gradient magnitude of the task logit.

    For every event occurrence, the gradient of its stay's output logit
    with respect to the event's input representation is taken; L2
    magnitudes are averaged per unique description string. For the
    multi-label task, ``category`` selects which logit to explain.
    Returns (description, mean_magnitude, count) sorted descending.
    """
    sums: dict = {}
    counts: dict = {}
    for start in range(0, len(ids), batch_size):
        batch = list(ids[start:start + batch_size])
        flat, rows = model.encode_batch(data, batch, False, None)
        logits, _ = predictor.forward(flat, rows, train_flag=False)
        if logits.data.ndim == 2:
            if category is None:
                raise NotFoundError("multi-label model requires a category to explain")
            target = T.tensor_sum(logits[:, category])
        else:
            target = T.tensor_sum(logits)
        T.backward(target)
        magnitudes = np.linalg.norm(flat.grad, axis=1)
        texts = [t for i in batch for t in data.stay_texts[i]]
        for text, magnitude in zip(texts, magnitudes):
            sums[text] = sums.get(text, 0.0) + float(magnitude)
            counts[text] = counts.get(text, 0) + 1
    ranked = [(text, sums[text] / counts[text], counts[text]) for text in sums]
    ranked.sort(key=lambda r: (-r[1], r[0]))
    return ranked


def stay_representations(model, predictor, data, ids, batch_size: int = 64) -> np.ndarray:
    """Final predictor hidden state per stay (the PCA input)."""
    out = []
    with T.no_grad():
        for start in range(0, len(ids), batch_size):
            batch = list(ids[start:start + batch_size])
            flat, rows = model.encode_batch(data, batch, False, None)
            _, hidden = predictor.forward(flat, rows, train_flag=False)
            out.append(hidden.data.astype(np.float64).copy())
    return np.concatenate(out, axis=0)


# ----------------------------------------------------------------- SVG plots

CANVAS = (640, 480)
MARGIN = 56
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _scale(values, lo, hi, out_lo, out_hi):
    span = hi - lo if hi > lo else 1.0
    return [out_lo + (v - lo) / span * (out_hi - out_lo) for v in values]


def _svg_header():
    w, h = CANVAS
    return [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
            f'viewBox="0 0 {w} {h}">',
            f'<rect width="{w}" height="{h}" fill="white"/>']


def _axes(x_label, y_label, x_range, y_range):
    w, h = CANVAS
    parts = [f'<line x1="{MARGIN}" y1="{h - MARGIN}" x2="{w - MARGIN}" '
             f'y2="{h - MARGIN}" stroke="black"/>',
             f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{h - MARGIN}" '
             f'stroke="black"/>',
             f'<text x="{w / 2:.1f}" y="{h - 12}" font-size="13" '
             f'text-anchor="middle">{x_label}</text>',
             f'<text x="14" y="{h / 2:.1f}" font-size="13" text-anchor="middle" '
             f'transform="rotate(-90 14 {h / 2:.1f})">{y_label}</text>']
    for frac in (0.0, 0.5, 1.0):
        xv = x_range[0] + frac * (x_range[1] - x_range[0])
        yv = y_range[0] + frac * (y_range[1] - y_range[0])
        xp = MARGIN + frac * (w - 2 * MARGIN)
        yp = h - MARGIN - frac * (h - 2 * MARGIN)
        parts.append(f'<text x="{xp:.1f}" y="{h - MARGIN + 16}" font-size="11" '
                     f'text-anchor="middle">{xv:.3g}</text>')
        parts.append(f'<text x="{MARGIN - 6}" y="{yp:.1f}" font-size="11" '
                     f'text-anchor="end">{yv:.3g}</text>')
    return parts


def few_shot_curve_svg(curves: dict, x_label="target fraction", y_label="auprc") -> str:
    """Mean lines with +-std shading; curves maps name -> (ratios, means, stds)."""
    w, h = CANVAS
    all_x = [x for rs, _, _ in curves.values() for x in rs]
    all_y = [m + s for _, ms, ss in curves.values() for m, s in zip(ms, ss)]
    all_y += [m - s for _, ms, ss in curves.values() for m, s in zip(ms, ss)]
    x_range = (min(all_x), max(all_x))
    y_range = (min(all_y + [0.0]), max(all_y + [1e-6]))
    parts = _svg_header() + _axes(x_label, y_label, x_range, y_range)
    for color_i, name in enumerate(sorted(curves)):
        ratios, means, stds = curves[name]
        color = PALETTE[color_i % len(PALETTE)]
        xs = _scale(ratios, x_range[0], x_range[1], MARGIN, w - MARGIN)
        ys = _scale(means, y_range[0], y_range[1], h - MARGIN, MARGIN)
        hi = _scale([m + s for m, s in zip(means, stds)], y_range[0], y_range[1],
                    h - MARGIN, MARGIN)
        lo = _scale([m - s for m, s in zip(means, stds)], y_range[0], y_range[1],
                    h - MARGIN, MARGIN)
        band = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, hi))
        band += " " + " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(reversed(xs), reversed(lo)))
        parts.append(f'<polygon points="{band}" fill="{color}" fill-opacity="0.15" '
                     f'stroke="none"/>')
        line = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline points="{line}" fill="none" stroke="{color}" '
                     f'stroke-width="2"/>')
        parts.append(f'<text x="{w - MARGIN - 4}" y="{MARGIN + 16 * (color_i + 1)}" '
                     f'font-size="12" text-anchor="end" fill="{color}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def scatter_svg(coords: np.ndarray, groups, x_label="component 1",
                y_label="component 2") -> str:
    """2-d scatter with one colour per group label."""
    w, h = CANVAS
    x_range = (float(coords[:, 0].min()), float(coords[:, 0].max()))
    y_range = (float(coords[:, 1].min()), float(coords[:, 1].max()))
    parts = _svg_header() + _axes(x_label, y_label, x_range, y_range)
    names = sorted(set(groups))
    colors = {name: PALETTE[i % len(PALETTE)] for i, name in enumerate(names)}
    xs = _scale(coords[:, 0], x_range[0], x_range[1], MARGIN, w - MARGIN)
    ys = _scale(coords[:, 1], y_range[0], y_range[1], h - MARGIN, MARGIN)
    for x, y, g in zip(xs, ys, groups):
        parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="2.5" fill="{colors[g]}" '
                     f'fill-opacity="0.6"/>')
    for i, name in enumerate(names):
        parts.append(f'<text x="{w - MARGIN - 4}" y="{MARGIN + 16 * (i + 1)}" '
                     f'font-size="12" text-anchor="end" fill="{colors[name]}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# -------------------------------------------------------------- run reports

def collect_runs(runs_dir) -> list:
    runs_dir = Path(runs_dir)
    manifests = sorted(runs_dir.glob("*/manifest.json"))
    runs = []
    for manifest_path in manifests:
        run_dir = manifest_path.parent
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        metrics_path = run_dir / "metrics.csv"
        if manifest.get("kind") in ("train", "pool") and not metrics_path.exists():
            raise NotFoundError(f"run {run_dir.name}: missing metrics file {metrics_path}")
        runs.append({"dir": run_dir, "manifest": manifest})
    return runs


def emit_report(runs_dir, out_dir) -> list:
    """Aggregate finished runs into a results table, curves, and PCA scatters.

    Errors out (writing nothing) when no runs are found or a run is
    missing its metrics file.
    """
    runs = collect_runs(runs_dir)
    if not runs:
        raise NotFoundError(f"no run manifests under {runs_dir}")

    table_rows = []
    curves_by_task: dict = {}
    pca_jobs = []
    for run in runs:
        m = run["manifest"]
        key = (m["task"], m["encoder"], m["strategy"], m.get("regime", "single"))
        if m["kind"] in ("train", "pool"):
            results = m.get("per_hospital_auprc") or {"test": m.get("test_auprc")}
            for where, value in sorted(results.items()):
                table_rows.append(key + (where, m.get("seed", 0), value))
        elif m["kind"] == "transfer":
            points = m["transfer_points"]
            curves_by_task.setdefault(m["task"], {}).setdefault(
                m["encoder"], []).append([(p["ratio"], p["auprc"]) for p in points])
            for p in points:
                table_rows.append(key + (f"r={p['ratio']:g}", m.get("seed", 0),
                                         p["auprc"]))
        repr_path = run["dir"] / "representations.csv"
        if repr_path.exists():
            pca_jobs.append((run["dir"].name, m, repr_path))

    # aggregate (task, encoder, strategy, regime, where) over seeds
    grouped: dict = {}
    for row in table_rows:
        grouped.setdefault(row[:5], []).append(row[6])
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["task", "encoder", "strategy", "regime", "split",
                     "seeds", "auprc_mean", "auprc_std"])
    for key in sorted(grouped):
        values = [v for v in grouped[key] if v is not None]
        writer.writerow(list(key) + [len(values), _fmt(np.mean(values)),
                                     _fmt(np.std(values))])
    table_text = buf.getvalue()

    svg_files = {}
    for task, by_encoder in sorted(curves_by_task.items()):
        curves = {}
        for encoder, seed_curves in sorted(by_encoder.items()):
            ratios = sorted({r for curve in seed_curves for r, _ in curve})
            means, stds = [], []
            for r in ratios:
                vals = [dict(curve).get(r) for curve in seed_curves]
                vals = [v for v in vals if v is not None]
                means.append(float(np.mean(vals)))
                stds.append(float(np.std(vals)))
            curves[encoder] = (ratios, means, stds)
        svg_files[f"fewshot_{task}.svg"] = few_shot_curve_svg(curves)

    pca_files = {}
    for run_name, manifest, repr_path in pca_jobs:
        with open(repr_path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        groups = [r[1] for r in rows]
        matrix = np.array([[float(v) for v in r[2:]] for r in rows])
        if matrix.shape[0] < 3:
            continue
        coords, ratios = pca_project(matrix, 2)
        if coords.shape[1] < 2:
            continue
        name = f"pca_{manifest['task']}_{manifest['encoder']}_{manifest['strategy']}_" \
               f"{manifest.get('regime', 'single')}_{run_name}"
        pca_files[name + ".svg"] = scatter_svg(coords, groups)
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["stay_group", "pc1", "pc2"])
        for g, (x, y) in zip(groups, coords):
            writer.writerow([g, _fmt(x), _fmt(y)])
        pca_files[name + ".csv"] = buf.getvalue()

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    (out_dir / "results.csv").write_text(table_text, encoding="utf-8")
    written.append(out_dir / "results.csv")
    for fname, text in sorted({**svg_files, **pca_files}.items()):
        (out_dir / fname).write_text(text, encoding="utf-8")
        written.append(out_dir / fname)
    return written
