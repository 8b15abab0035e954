"""Evaluation metrics and frequency-domain stability lobes for turning."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "support_accuracy",
    "steady_state_error",
    "material_removal_rate",
    "LobeDiagram",
    "stability_lobes",
    "critical_depth",
]


def support_accuracy(gamma_hat, gamma_truth):
    """Number of equations whose identified support matches the truth exactly."""
    gamma_hat = np.asarray(gamma_hat, dtype=bool)
    gamma_truth = np.asarray(gamma_truth, dtype=bool)
    if gamma_hat.shape != gamma_truth.shape:
        raise ValueError(
            f"shape mismatch: {gamma_hat.shape} vs {gamma_truth.shape}")
    if gamma_hat.ndim == 1:
        gamma_hat = gamma_hat[:, None]
        gamma_truth = gamma_truth[:, None]
    return int(np.sum(np.all(gamma_hat == gamma_truth, axis=0)))


def steady_state_error(traj, reference, n0, nf, dims=None):
    """Mean squared tracking error over the steady-state window.

    Averages ||x_k - r_k||^2 over samples n0+1 .. n0+nf restricted to the
    tracked state indices, normalized by nf * len(dims).
    """
    X = traj.X
    times = traj.times
    n = X.shape[0]
    if dims is None:
        dims = list(range(X.shape[1]))
    dims = list(dims)
    if not dims:
        raise ValueError("dims must be nonempty")
    if n0 + nf >= n or nf < 1:
        raise ValueError(
            f"window n0={n0}, nf={nf} does not fit a trajectory of {n} samples")
    idx = np.arange(n0 + 1, n0 + nf + 1)
    if callable(reference):
        R = np.array([np.asarray(reference(t), dtype=float) for t in times[idx]])
    else:
        R = np.broadcast_to(np.asarray(reference, dtype=float), (idx.size, X.shape[1]))
    err = X[idx][:, dims] - R[:, dims]
    return float(np.sum(err ** 2) / (nf * len(dims)))


def material_removal_rate(hm, omega, b):
    """MRR = hm * omega * b, reported in mm^2-rps (hm and b given in meters)."""
    if hm <= 0 or omega <= 0 or b <= 0:
        raise ValueError("hm, omega and b must be > 0")
    return hm * 1e3 * omega * b * 1e3


# ---------------------------------------------------------------------------
# Stability lobes of the single-DOF regenerative cutting model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LobeDiagram:
    """Stability lobe curves b_lim(Omega) per lobe index.

    Each lobe holds an (n, 3) array of (omega_rps, blim_m, chatter_rad_s)
    with omega_rps strictly increasing along the curve.
    """

    lobes: tuple                  # ((lobe_index, points array), ...)
    modal: tuple                  # (m, c, k)
    force: tuple                  # (ks, beta_force); oriented product if beta=0

    @property
    def ks_cosbeta(self):
        ks, beta = self.force
        return ks * math.cos(beta)

    def blim_at(self, omega_rps):
        """Limiting depth at a spindle speed: the minimum over all lobes
        covering that speed (inf where no lobe covers it)."""
        omega_rps = np.asarray(omega_rps, dtype=float)
        out = np.full(omega_rps.shape, np.inf)
        for _, pts in self.lobes:
            om, bl = pts[:, 0], pts[:, 1]
            inside = (omega_rps >= om[0]) & (omega_rps <= om[-1])
            vals = np.interp(omega_rps, om, bl)
            out = np.where(inside, np.minimum(out, vals), out)
        return out if out.ndim else float(out)

    def classify(self, omega_rps, b_m):
        """True where the cut lies strictly below the lobe envelope."""
        return np.asarray(b_m, dtype=float) < self.blim_at(omega_rps)

    def critical_depth(self):
        """Minimum of the lobe envelope over the stored points."""
        return float(min(pts[:, 1].min() for _, pts in self.lobes))

    def characteristic_residuals(self):
        """|1 + kcb*b*(1 - exp(-i w tau)) * G(i w)| at every stored point."""
        m, c, k = self.modal
        kcb = self.ks_cosbeta
        res = []
        for _, pts in self.lobes:
            om, bl, w = pts[:, 0], pts[:, 1], pts[:, 2]
            tau = 1.0 / om
            G = 1.0 / (k - m * w ** 2 + 1j * c * w)
            res.append(np.abs(1.0 + kcb * bl * (1.0 - np.exp(-1j * w * tau)) * G))
        return np.concatenate(res)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lobe_index", "omega_rps", "blim_mm"])
            for idx, pts in self.lobes:
                for row in pts:
                    w.writerow([idx, repr(float(row[0])), repr(float(row[1] * 1e3))])


def critical_depth(m, c, k, ks, beta_force):
    """Closed-form minimum of the lobe envelope: 2*k*zeta*(1+zeta)/(Ks*cos(beta))."""
    zeta = c / (2.0 * math.sqrt(k * m))
    return 2.0 * k * zeta * (1.0 + zeta) / (ks * math.cos(beta_force))


def stability_lobes(m, c, k, ks, beta_force=0.0, lobe_indices=range(0, 5),
                    chatter_freq_grid=None):
    """Stability lobe diagram of the single-DOF regenerative cutting model.

    At a chatter frequency w with Re[G(iw)] < 0 (above resonance), the
    marginal chip width is blim = -1/(2*Ks*cos(beta)*Re[G]) and the delay
    phase theta = w*tau solves tan(theta/2) = -Re[G]/Im[G]; lobe N takes the
    branch with theta in (2*pi*N, 2*pi*(N+1)), giving the spindle speed
    Omega = w/theta in rev/s.

    Parameters
    ----------
    ks, beta_force : specific force and force angle; pass the identified
        oriented product as ks with beta_force = 0 when only the product
        Ks*cos(beta) is known.
    chatter_freq_grid : chatter frequencies in rad/s; defaults to a grid
        clustered just above the natural frequency.  Grid points at or
        below resonance (Re[G] >= 0) are skipped.
    """
    if min(m, c, k, ks) <= 0:
        raise ValueError("modal and force parameters must be > 0")
    wn = math.sqrt(k / m)
    if chatter_freq_grid is None:
        chatter_freq_grid = wn * (1.0 + np.geomspace(1e-6, 14.0, 2400))
    w = np.asarray(chatter_freq_grid, dtype=float)
    kcb = ks * math.cos(beta_force)

    den = (k - m * w ** 2) ** 2 + (c * w) ** 2
    re_g = (k - m * w ** 2) / den
    keep = re_g < 0.0
    w = w[keep]
    re_g = re_g[keep]
    blim = -1.0 / (2.0 * kcb * re_g)
    theta0 = 2.0 * np.pi + 2.0 * np.arctan((k - m * w ** 2) / (c * w))

    lobes = []
    for n_lobe in lobe_indices:
        theta = theta0 + 2.0 * np.pi * n_lobe
        omega = w / theta
        pts = np.column_stack([omega, blim, w])
        pts = pts[np.argsort(pts[:, 0])]
        lobes.append((int(n_lobe), pts))
    return LobeDiagram(lobes=tuple(lobes), modal=(m, c, k), force=(ks, beta_force))
