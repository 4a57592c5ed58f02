"""Minimal SVG figures for the CLI outputs.

Figures are written with a fixed hash salt and no date metadata so repeated
runs produce byte-identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .units import to_mhz, to_us  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "ioncavity"
matplotlib.rcParams["svg.fonttype"] = "none"


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def standing_wave(scan, path, fit=None, title=None):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(scan.position_ctrl, scan.emission, yerr=scan.stderr, fmt="o", ms=3, label="scan")
    if fit is not None:
        x = np.linspace(scan.position_ctrl.min(), scan.position_ctrl.max(), 400)
        ax.plot(x, fit.model(x), label="fit")
        ax.legend()
    ax.set_xlabel("position (nm)")
    ax.set_ylabel("normalised emission" if scan.normalised else "photons per probe")
    if title:
        ax.set_title(title)
    _save(fig, path)


def raman_scan(scan, path, fit=None):
    fig, ax = plt.subplots(figsize=(6, 4))
    x = to_mhz(scan.cavity_detuning)
    ax.errorbar(x, scan.emission, yerr=scan.stderr, fmt="o", ms=3, label="scan")
    if fit is not None:
        xx = np.linspace(scan.cavity_detuning[0], scan.cavity_detuning[-1], 400)
        ax.plot(to_mhz(xx), fit(xx), label="Lorentzian")
        ax.axvline(to_mhz(fit.center), ls=":", c="k")
        ax.legend()
    ax.set_xlabel("cavity detuning (MHz)")
    ax.set_ylabel("photons per probe")
    ax.set_title(f"probe detuning {to_mhz(scan.probe_detuning):.2f} MHz")
    _save(fig, path)


def delta_map(dmap, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    for g, row in zip(dmap.g0_grid, dmap.delta):
        ax.plot(to_mhz(dmap.probe_grid), to_mhz(row), label=f"{to_mhz(g):.1f}")
    ax.set_xlabel("probe detuning (MHz)")
    ax.set_ylabel("Raman shift (MHz)")
    ax.legend(title="g0 (MHz)", fontsize="x-small", ncol=2)
    _save(fig, path)


def g0_fit(points, dmap, fit, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    dp = np.array([p.probe_detuning for p in points])
    ax.errorbar(to_mhz(dp), [to_mhz(p.shift) for p in points],
                yerr=[to_mhz(p.stderr) for p in points], fmt="o", ms=3, label="data")
    xx = np.linspace(dp.min(), dp.max(), 200)
    ax.plot(to_mhz(xx), to_mhz(dmap.at(fit.g0, xx)), label=f"g0 = {to_mhz(fit.g0):.2f} MHz")
    ax.set_xlabel("probe detuning (MHz)")
    ax.set_ylabel("Raman shift (MHz)")
    ax.legend()
    _save(fig, path)


def waveform(wf, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(to_us(wf.time), wf.upper, label="upper")
    ax.plot(to_us(wf.time), wf.lower, label="lower")
    ax.set_xlabel("time (us)")
    ax.set_ylabel("voltage (V)")
    ax.legend()
    _save(fig, path)
