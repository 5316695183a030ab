"""Run reporting: delimited event log, key=value summary, and figures.

The training CLI writes one TSV row per fly-in event, a flat metrics file
echoing the effective configuration (ablations included), and PNG charts
rendered headlessly next to the TSV.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

EVENT_COLUMNS = (
    "event",
    "image_id",
    "candidates",
    "inserted",
    "field_before",
    "field_after",
    "psnr_before",
    "psnr_after",
    "loss_first",
    "loss_last",
    "seconds",
)


def write_events_tsv(events, path) -> None:
    """One header line plus one row per EventReport."""
    lines = ["\t".join(EVENT_COLUMNS)]
    for k, ev in enumerate(events, start=1):
        lines.append(
            "\t".join(
                [
                    str(k),
                    str(ev.image_id),
                    str(ev.n_candidates),
                    str(ev.n_inserted),
                    str(ev.field_before),
                    str(ev.field_after),
                    f"{ev.psnr_before:.6g}",
                    f"{ev.psnr_after:.6g}",
                    f"{ev.loss_first:.6g}",
                    f"{ev.loss_last:.6g}",
                    f"{ev.seconds:.6g}",
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_metrics(path, cfg, ablations, effective_weights, extras=None) -> None:
    """Flat key=value summary of the run.

    ``effective_weights`` is what training actually used, so an ablated
    load weight shows up here as 0.
    """
    rows = {
        "n0": cfg.n0,
        "initial_iters": cfg.initial_iters,
        "t_i": cfg.t_i,
        "n_m": cfg.n_m,
        "final_iters": cfg.final_iters,
        "eta0": cfg.lr.eta0,
        "etaf": cfg.lr.etaf,
        "t_a": cfg.lr.t_a,
        "lambda_l1": effective_weights.l1,
        "lambda_ssim": effective_weights.ssim,
        "lambda_load": effective_weights.load,
        "grad_threshold": cfg.densify.grad_threshold,
        "percent_dense": cfg.densify.percent_dense,
        "prune_opacity": cfg.densify.prune_opacity,
        "split_scale_shrink": cfg.densify.split_scale_shrink,
        "densify_interval": cfg.densify_interval,
        "densify_stop_fraction": cfg.densify_stop_fraction,
        "novelty_threshold": cfg.novelty_threshold,
        "novelty_refresh": cfg.novelty_refresh,
        "sh_degree": cfg.sh_degree,
        "init_opacity": cfg.init_opacity,
        "workers": cfg.workers,
        "seed": cfg.seed,
        "ablations": ",".join(sorted(ablations)) if ablations else "none",
    }
    rows.update(extras or {})
    text = "\n".join(f"{k} = {v}" for k, v in rows.items())
    Path(path).write_text(text + "\n", encoding="utf-8")


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_figures(events, figures_dir) -> list:
    """PNG charts of the event log; returns the written paths."""
    out = Path(figures_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not events:
        return []
    idx = list(range(1, len(events) + 1))
    written = []

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(idx, [e.psnr_before for e in events], "o-", label="before event")
    ax.plot(idx, [e.psnr_after for e in events], "o-", label="after event")
    ax.set_xlabel("fly-in event")
    ax.set_ylabel("own-view PSNR (dB)")
    ax.legend()
    ax.grid(True, alpha=0.3)
    path = out / "own_view_psnr.png"
    _save(fig, path)
    written.append(path)

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(idx, [e.field_after for e in events], "o-", color="tab:green")
    ax.set_xlabel("fly-in event")
    ax.set_ylabel("Gaussians after event")
    ax.grid(True, alpha=0.3)
    path = out / "field_size.png"
    _save(fig, path)
    written.append(path)

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(idx, [e.loss_first for e in events], "o-", label="first iteration")
    ax.plot(idx, [e.loss_last for e in events], "o-", label="last iteration")
    ax.set_xlabel("fly-in event")
    ax.set_ylabel("total loss")
    ax.legend()
    ax.grid(True, alpha=0.3)
    path = out / "event_loss.png"
    _save(fig, path)
    written.append(path)
    return written
