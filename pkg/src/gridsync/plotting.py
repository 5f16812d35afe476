"""Static SVG figures of recorded channels (one file per channel)."""

from __future__ import annotations

from pathlib import Path
from typing import Callable, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .results import Trajectory  # noqa: E402

_Series = tuple[str, str, Callable[[Trajectory], tuple[list[str], np.ndarray]]]


def _frequency(traj: Trajectory) -> tuple[list[str], np.ndarray]:
    bank = traj.machines
    data = np.array([np.where(s.state.online, s.state.machines.omega, np.nan) for s in traj.samples])
    return list(bank.names), data / (2.0 * np.pi)


def _pg(traj: Trajectory) -> tuple[list[str], np.ndarray]:
    base = traj.networks[0].base_power
    data = np.array([np.where(s.state.online, s.state.machines.Pg, np.nan) for s in traj.samples])
    return list(traj.machines.names), data * base


def _voltage(traj: Trajectory) -> tuple[list[str], np.ndarray]:
    labels = [f"bus {bus.id}" for bus in traj.networks[0].buses]
    return labels, np.array([s.state.algebraic.v for s in traj.samples])


def _controller_labels(traj: Trajectory) -> list[str]:
    return [traj.machines.names[k] for k in traj.plant.controllers]


def _mu(traj: Trajectory) -> tuple[list[str], np.ndarray]:
    return _controller_labels(traj), -np.array([s.state.controller.mu for s in traj.samples])


def _z(traj: Trajectory) -> tuple[list[str], np.ndarray]:
    net = traj.networks[0]
    labels = [f"{net.buses[e.i].id}-{net.buses[e.j].id}" for e in net.comm_edges]
    data = np.array([s.state.controller.z for s in traj.samples]).reshape(len(traj.samples), len(labels))
    return labels, data


CHANNELS: dict[str, _Series] = {
    "frequency": ("Frequency deviation", "Δf (Hz)", _frequency),
    "pg": ("Mechanical power", "P^g (MW)", _pg),
    "voltage": ("Bus voltage", "V (p.u.)", _voltage),
    "mu": ("Marginal-cost estimate", "−μ (p.u.)", _mu),
    "z": ("Edge integrators", "z (p.u.)", _z),
}


def plot_channel(trajectory: Trajectory, channel: str, path: str | Path) -> Path:
    """Write one channel of `trajectory` as an SVG file."""
    if channel not in CHANNELS:
        raise ValueError(f"Unsupported plot channel: {channel}")
    title, ylabel, extract = CHANNELS[channel]
    labels, data = extract(trajectory)
    t = trajectory.times

    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    for k, label in enumerate(labels):
        ax.plot(t, data[:, k], linewidth=1.2, label=label)
    for event in trajectory.events:
        ax.axvline(event.at, color="0.6", linewidth=0.8, linestyle=":")
    ax.set_title(title)
    ax.set_xlabel("Time (s)")
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    if 0 < len(labels) <= 12:
        ax.legend(fontsize=7, ncol=2 if len(labels) > 6 else 1)
    fig.tight_layout()

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def plot_trajectory(trajectory: Trajectory, directory: str | Path, channels: Sequence[str]) -> list[Path]:
    """Write `<channel>.svg` into `directory` for every requested channel."""
    directory = Path(directory)
    return [plot_channel(trajectory, ch, directory / f"{ch}.svg") for ch in channels]
