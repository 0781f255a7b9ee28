"""Static SVG figures of a run (Agg backend, no display needed)."""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["plot_run"]


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def _mark_violation(ax, trace, y):
    bad = ~trace.feasible
    if bad.any():
        ax.plot(trace.t[bad], y[bad], "m*", ms=12, label="violation")


def plot_variables(trace, scenario, path):
    fig, ax = plt.subplots(figsize=(7, 3.5))
    t = trace.t
    for i in range(trace.n_v):
        ax.plot(t, trace.v[:, i], label=f"v[{i}]")
        ax.plot(t, trace.v_star[:, i], "--", label=f"v*[{i}]")
    ub = getattr(scenario, "upper_bound", None)
    if ub is not None and trace.n_v == 1 and len(t):
        tt = np.linspace(t[0], t[-1], 2000)
        top = np.array([ub(s) for s in tt])
        lo, hi = ax.get_ylim()
        ax.fill_between(tt, top, max(hi, top.max()) + 1.0, color="0.85", label="infeasible")
        ax.set_ylim(lo, hi)
    _mark_violation(ax, trace, trace.v[:, 0])
    ax.set_xlabel("t [s]")
    ax.set_ylabel("v")
    ax.legend(loc="best", fontsize=8)
    return _save(fig, path)


def plot_gradient(trace, path, rho=None):
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ok = trace.feasible
    ax.semilogy(trace.t[ok], np.maximum(trace.grad_norm[ok], 1e-16), label="|grad_v Phi|")
    if rho is not None:
        ax.axhline(rho, color="r", ls=":", label="rho")
    ax.set_xlabel("t [s]")
    ax.legend(loc="best", fontsize=8)
    return _save(fig, path)


def plot_cost_gap(trace, path, rho=None, m_f=None):
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ok = trace.feasible
    ax.semilogy(trace.t[ok], np.maximum(trace.cost_gap[ok], 1e-16), label="Phi(v) - Phi(v*)")
    if rho is not None and m_f:
        ax.axhline(rho**2 / m_f, color="r", ls=":", label="rho^2 / m_f")
    ax.set_xlabel("t [s]")
    ax.legend(loc="best", fontsize=8)
    return _save(fig, path)


def plot_planar(trace, stream, params, path):
    fig, ax = plt.subplots(figsize=(6, 6))
    t = trace.t
    target = np.array([params["target"](s) for s in t]) if len(t) else np.zeros((0, 2))
    ax.plot(target[:, 0], target[:, 1], "k:", lw=1, label="target")
    ax.plot(trace.v_star[:, 0], trace.v_star[:, 1], "--", label="v*")
    ax.plot(trace.v[:, 0], trace.v[:, 1], label="v")
    hist = getattr(stream, "history", None)
    if hist:
        xc = np.array([h[1] for h in hist])
        ax.plot(xc[:, 0], xc[:, 1], lw=2, label="robot")
    for (cx, cy), r in params.get("obstacles", []):
        ax.add_patch(plt.Circle((cx, cy), r, color="0.6"))
    bad = ~trace.feasible
    if bad.any():
        ax.plot(trace.v[bad, 0], trace.v[bad, 1], "m*", ms=12, label="violation")
    ax.set_aspect("equal")
    ax.legend(loc="best", fontsize=8)
    return _save(fig, path)


def plot_run(result, scenario, out_dir, rho=None):
    """Write every applicable figure for ``result``; returns the paths."""
    out = Path(out_dir)
    tr = result.trace
    paths = [
        plot_variables(tr, scenario, out / "variables.svg"),
        plot_gradient(tr, out / "grad_norm.svg", rho),
        plot_cost_gap(tr, out / "cost_gap.svg", rho, scenario.m_f),
    ]
    if tr.n_v == 2 and "target" in scenario.params:
        paths.append(plot_planar(tr, result.stream, scenario.params, out / "trajectory.svg"))
    return paths
