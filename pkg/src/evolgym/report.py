"""Reward-vs-iteration outputs from run manifests: CSV, a text table and a PNG curve."""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Any, Mapping, Sequence

from .controller import EvalReport, score_table


def manifest_rows(manifest: Mapping[str, Any]) -> list[dict[str, Any]]:
    """One row for the BC baseline (iteration 0) and one per evolution iteration."""
    rows = []
    base = manifest.get("base_eval")
    envs = sorted(base["per_env"]) if base else []
    if base:
        rows.append(_row(0, "BC_base", base, {}))
    for it in manifest.get("iterations", []):
        rep = it["eval"]
        envs = envs or sorted(rep["per_env"])
        rows.append(_row(it["iteration"], f"iter{it['iteration']}", rep, it.get("train_split_success", {})))
    return rows


def _row(iteration: int, label: str, report: Mapping[str, Any], train: Mapping[str, float]) -> dict[str, Any]:
    row: dict[str, Any] = {"iteration": iteration, "label": label}
    for env, score in sorted(report["per_env"].items()):
        row[f"{env}_eval_success"] = score["success_rate"]
        row[f"{env}_train_success"] = train.get(env, "")
    row["overall_eval_success"] = report["overall"]["success_rate"]
    return row


def rows_to_csv(rows: Sequence[Mapping[str, Any]]) -> str:
    if not rows:
        return ""
    cols = list(rows[0])
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def manifest_table(manifest: Mapping[str, Any]) -> str:
    reports: dict[str, EvalReport] = {}
    if manifest.get("base_eval"):
        reports["BC_base"] = EvalReport.from_dict(manifest["base_eval"])
    for it in manifest.get("iterations", []):
        reports[f"AgentEvol iter{it['iteration']}"] = EvalReport.from_dict(it["eval"])
    return score_table(reports)


def plot_curves(runs: Mapping[str, Sequence[Mapping[str, Any]]], path: str | Path) -> None:
    """Eval success per environment against iteration, one line per (run, env)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for name, rows in runs.items():
        envs = sorted(k[: -len("_eval_success")] for k in rows[0] if k.endswith("_eval_success")
                      and not k.startswith("overall"))
        xs = [r["iteration"] for r in rows]
        for env in envs:
            ys = [100 * r[f"{env}_eval_success"] for r in rows]
            ax.plot(xs, ys, marker="o", label=f"{name}: {env}" if len(runs) > 1 else env)
    ax.set_xlabel("iteration (0 = BC base)")
    ax.set_ylabel("eval success (%)")
    ax.set_ylim(-2, 102)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    # no software/date metadata, so reruns produce identical bytes
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)


def write_report(manifests: Mapping[str, Mapping[str, Any]], out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}
    runs = {}
    text = []
    for name, m in manifests.items():
        rows = manifest_rows(m)
        runs[name] = rows
        stem = "report" if len(manifests) == 1 else f"report_{name}"
        p = out / f"{stem}.csv"
        p.write_text(rows_to_csv(rows), encoding="utf-8")
        written[f"{name}.csv"] = p
        text.append(f"== {name} ==\n{manifest_table(m)}")
    t = out / "report.txt"
    t.write_text("\n\n".join(text) + "\n", encoding="utf-8")
    written["table"] = t
    if any(runs.values()):
        png = out / "report.png"
        plot_curves({k: v for k, v in runs.items() if v}, png)
        written["figure"] = png
    return written
