"""256-entry colormap tables matching MATLAB's built-in maps.

Each table is rebuilt from the generating rule MATLAB documents for it
(piecewise-linear ramps, repeated colour cycles, or the colour-cube grid).
Parula has no closed form and ships as embedded data.
"""
from __future__ import annotations

import colorsys
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

N_ENTRIES = 256


@dataclass(frozen=True)
class ColormapTable:
    name: str
    entries: np.ndarray  # (256, 3) in [0, 1]

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=np.float64)
        if e.shape != (N_ENTRIES, 3):
            raise ValueError(f"{self.name}: expected ({N_ENTRIES}, 3) entries, got {e.shape}")
        if e.min() < 0 or e.max() > 1:
            raise ValueError(f"{self.name}: entries outside [0, 1]")
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    def quantized(self) -> np.ndarray:
        """Entries as stored in an 8-bit image."""
        return np.round(self.entries * 255).astype(np.uint8)

    def duplicate_count(self) -> int:
        """Number of entries whose 8-bit colour repeats an earlier entry."""
        q = self.quantized()
        return N_ENTRIES - len(np.unique(q, axis=0))


def _ramp(m=N_ENTRIES):
    return np.arange(m) / (m - 1)


def _gray(m=N_ENTRIES):
    r = _ramp(m)
    return np.stack([r, r, r], axis=1)


def _hot(m=N_ENTRIES):
    n = int(3 / 8 * m)
    r = np.concatenate([np.arange(1, n + 1) / n, np.ones(m - n)])
    g = np.concatenate([np.zeros(n), np.arange(1, n + 1) / n, np.ones(m - 2 * n)])
    b = np.concatenate([np.zeros(2 * n), np.arange(1, m - 2 * n + 1) / (m - 2 * n)])
    return np.stack([r, g, b], axis=1)


def _jet(m=N_ENTRIES):
    n = int(np.ceil(m / 4))
    u = np.concatenate([np.arange(1, n + 1) / n, np.ones(n - 1), np.arange(n, 0, -1) / n])
    g = int(np.ceil(n / 2)) - (m % 4 == 1) + np.arange(1, len(u) + 1)
    r = g + n
    b = g - n
    g = g[g <= m]
    r = r[r <= m]
    b = b[b >= 1]
    out = np.zeros((m, 3))
    out[r - 1, 0] = u[: len(r)]
    out[g - 1, 1] = u[: len(g)]
    out[b - 1, 2] = u[len(u) - len(b):]
    return out


def _hsv(m=N_ENTRIES):
    h = np.arange(m) / m
    return np.array([colorsys.hsv_to_rgb(v, 1.0, 1.0) for v in h])


def _cycle(colors, m=N_ENTRIES):
    colors = np.asarray(colors, dtype=np.float64)
    reps = int(np.ceil(m / len(colors)))
    return np.tile(colors, (reps, 1))[:m]


def _colorcube(m=N_ENTRIES):
    nrg = int(m ** (1 / 3) + 1e-12)
    extra = m - nrg ** 3
    nb = nrg - 1 if extra == 0 and nrg > 2 else nrg
    rg = np.linspace(0, 1, nrg)
    bl = np.linspace(0, 1, nb)
    # column-major order of meshgrid(rg, rg, bl): green fastest, then red, then blue
    b, r, g = np.meshgrid(bl, rg, rg, indexing="ij")
    grid = np.stack([r.ravel(), g.ravel(), b.ravel()], axis=1)
    grid = grid[np.abs(np.diff(grid, axis=1)).sum(axis=1) != 0]
    n_extra = m - len(grid)
    n_rgb = n_extra // 4
    n_k = n_extra - 3 * n_rgb
    ramp = np.arange(1, n_rgb + 1) / n_rgb
    zero = np.zeros(n_rgb)
    kramp = np.arange(1, n_k + 1) / n_k
    return np.vstack([
        grid,
        np.stack([ramp, zero, zero], axis=1),
        np.stack([zero, ramp, zero], axis=1),
        np.stack([zero, zero, ramp], axis=1),
        np.stack([kramp, kramp, kramp], axis=1),
    ])


def _parula(m=N_ENTRIES):
    text = resources.files("chroma_se").joinpath("data/parula.csv").read_text()
    return np.loadtxt(text.splitlines(), delimiter=",")


_LINES_ORDER = [
    [0.0, 0.4470, 0.7410],
    [0.8500, 0.3250, 0.0980],
    [0.9290, 0.6940, 0.1250],
    [0.4940, 0.1840, 0.5560],
    [0.4660, 0.6740, 0.1880],
    [0.3010, 0.7450, 0.9330],
    [0.6350, 0.0780, 0.1840],
]

_BUILDERS = {
    "parula": _parula,
    "autumn": lambda: np.stack([np.ones(N_ENTRIES), _ramp(), np.zeros(N_ENTRIES)], axis=1),
    "bone": lambda: (7 * _gray() + _hot()[:, ::-1]) / 8,
    "colorcube": _colorcube,
    "cool": lambda: np.stack([_ramp(), 1 - _ramp(), np.ones(N_ENTRIES)], axis=1),
    "copper": lambda: np.minimum(1.0, _gray() * np.array([1.25, 0.7812, 0.4975])),
    "flag": lambda: _cycle([[1, 0, 0], [1, 1, 1], [0, 0, 1], [0, 0, 0]]),
    "gray": _gray,
    "hot": _hot,
    "hsv": _hsv,
    "jet": _jet,
    "lines": lambda: _cycle(_LINES_ORDER),
    "pink": lambda: np.sqrt((2 * _gray() + _hot()) / 3),
    "prism": lambda: _cycle([[1, 0, 0], [1, 0.5, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [2 / 3, 0, 1]]),
    "spring": lambda: np.stack([np.ones(N_ENTRIES), _ramp(), 1 - _ramp()], axis=1),
    "summer": lambda: np.stack([_ramp(), 0.5 + _ramp() / 2, np.full(N_ENTRIES, 0.4)], axis=1),
    "winter": lambda: np.stack([np.zeros(N_ENTRIES), _ramp(), 0.5 + (1 - _ramp()) / 2], axis=1),
}

NAMES = tuple(_BUILDERS)


class UnknownColormapError(KeyError):
    def __str__(self):
        return self.args[0]


@lru_cache(maxsize=None)
def _build(name: str) -> ColormapTable:
    entries = np.clip(_BUILDERS[name](), 0.0, 1.0)
    return ColormapTable(name, entries)


def colormap(name: str) -> ColormapTable:
    """Look up a registered table by (case-insensitive) name."""
    key = name.strip().lower().replace("-", "").replace("_", "")
    if key not in _BUILDERS:
        raise UnknownColormapError(
            f"unknown colormap {name!r}; valid names: {', '.join(NAMES)}")
    return _build(key)


def duplicate_census() -> dict[str, int]:
    return {name: colormap(name).duplicate_count() for name in NAMES}
