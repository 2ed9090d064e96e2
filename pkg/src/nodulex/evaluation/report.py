"""Report export: a metrics CSV and one ROC plot (SVG) per model."""
import csv
import io
from pathlib import Path

METRIC_COLUMNS = ("model", "design", "auc", "acc", "sens", "spc", "seed")

_SIZE = 360
_MARGIN = 50


def metrics_csv_text(report):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for r in report.rows:
        w.writerow([r.model, report.design, *(f"{v:.6f}" for v in (r.auc, r.acc, r.sens, r.spc)), report.seed])
    return buf.getvalue()


def roc_svg(row, design=""):
    """Deterministic SVG of one ROC curve with labelled axes."""
    s, m = _SIZE, _MARGIN
    total = s + 2 * m

    def px(fpr, tpr):
        return f"{m + fpr * s:.3f},{m + (1.0 - tpr) * s:.3f}"

    points = " ".join(px(f, t) for f, t in row.roc)
    ticks = []
    for i in range(6):
        v = i / 5
        ticks.append(f'<text x="{m + v * s:.1f}" y="{m + s + 18}" text-anchor="middle">{v:.1f}</text>')
        ticks.append(f'<text x="{m - 8}" y="{m + (1 - v) * s + 4:.1f}" text-anchor="end">{v:.1f}</text>')
    title = f"{row.model} {design} AUC={row.auc:.3f}".replace("  ", " ")
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}" '
        f'viewBox="0 0 {total} {total}" font-family="sans-serif" font-size="11">',
        f'<rect x="{m}" y="{m}" width="{s}" height="{s}" fill="white" stroke="black"/>',
        f'<line x1="{m}" y1="{m + s}" x2="{m + s}" y2="{m}" stroke="#999" stroke-dasharray="4,4"/>',
        f'<polyline points="{points}" fill="none" stroke="#c0392b" stroke-width="2"/>',
        *ticks,
        f'<text x="{m + s / 2:.1f}" y="{total - 10}" text-anchor="middle">False positive rate</text>',
        f'<text x="14" y="{m + s / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 14 {m + s / 2:.1f})">True positive rate</text>',
        f'<text x="{total / 2:.1f}" y="{m - 18}" text-anchor="middle" font-size="13">{title}</text>',
        "</svg>",
    ]
    return "\n".join(lines) + "\n"


def _slug(model):
    return model.lower().replace("+", "_")


def export_report(report, out_dir):
    """Write ``metrics.csv`` and ``roc_<model>.svg`` files; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "metrics.csv"]
    paths[0].write_text(metrics_csv_text(report))
    for row in report.rows:
        p = out / f"roc_{_slug(row.model)}.svg"
        p.write_text(roc_svg(row, report.design))
        paths.append(p)
    return paths


def reduced_csv_text(results):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("design", "model", "mode", "n_features", "mean_acc", "mean_auc", "trials", "seed"))
    for r in results:
        w.writerow([r.design, r.model, r.mode, r.n_features, f"{r.mean_acc:.6f}", f"{r.mean_auc:.6f}",
                    len(r.trials), r.seed])
    return buf.getvalue()


def trial_log_csv_text(result):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("trial", "acc", "auc", "n_train", "n_test"))
    for t in result.trials:
        w.writerow([t.trial, f"{t.acc:.6f}", f"{t.auc:.6f}", t.n_train, t.n_test])
    return buf.getvalue()
