"""Full-order reticle-heating plant.

A 2-D finite-difference heat equation on the reticle with lumped losses,
regime-dependent clamp conductance, an image-area heat input and a linear
thermo-elastic map from temperature to in-plane displacement.

Units: K, s, mm, nm.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .kernels import displacement_matrix
from .layout import MarkLayout, SampledLayout
from .systems import StateSpaceModel

logger = logging.getLogger(__name__)

NOMINAL = 0
UNCLAMPED = 1
RECLAMPED = 2
PELLICLE = 3


@dataclass(frozen=True)
class PlantConfig:
    grid_nx: int = 31
    grid_ny: int = 31
    reticle_side: float = 152.0
    diffusivity: float = 16.0
    loss_ambient: float = 0.002
    clamp_conductance: float = 0.08
    cooling_flow: float = 0.002
    absorption: float = 0.02
    pellicle_factor: float = 1.5
    expansion_coeff: float = 0.5
    poisson_ratio: float = 0.17

    def __post_init__(self):
        if self.grid_nx < 3 or self.grid_ny < 3:
            raise ValueError(f"grid must be at least 3x3, got {self.grid_nx}x{self.grid_ny}")
        if not self.reticle_side > 0:
            raise ValueError("reticle_side must be positive")
        for name in (
            "diffusivity",
            "loss_ambient",
            "clamp_conductance",
            "cooling_flow",
            "absorption",
            "expansion_coeff",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.pellicle_factor < 1:
            raise ValueError("pellicle_factor must be >= 1 (a pellicle only insulates)")
        if not -1.0 < self.poisson_ratio < 0.5:
            raise ValueError("poisson_ratio must lie in (-1, 0.5)")

    @property
    def pitch_x(self) -> float:
        return self.reticle_side / (self.grid_nx - 1)

    @property
    def pitch_y(self) -> float:
        return self.reticle_side / (self.grid_ny - 1)

    @classmethod
    def from_dict(cls, data: dict) -> "PlantConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown plant config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "PlantConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ImageArea:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    exposure_power: float = 1.0

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate image area {self}")
        if self.exposure_power < 0:
            raise ValueError("exposure_power must be >= 0")

    @classmethod
    def centered(cls, width: float, height: float, side: float = 152.0, power: float = 1.0):
        c = side / 2
        return cls(c - width / 2, c + width / 2, c - height / 2, c + height / 2, power)

    def contains(self, x, y, tol: float = 1e-9):
        x = np.asarray(x)
        y = np.asarray(y)
        return (
            (x >= self.x_min - tol)
            & (x <= self.x_max + tol)
            & (y >= self.y_min - tol)
            & (y <= self.y_max + tol)
        )


def full_field_area(side: float = 152.0, power: float = 1.0) -> ImageArea:
    """Large image area (104 x 132 mm), as in a full-field exposure."""
    return ImageArea.centered(104.0, 132.0, side, power)


def small_field_area(side: float = 152.0, power: float = 1.0) -> ImageArea:
    """Small image area (26 x 33 mm) in the reticle centre."""
    return ImageArea.centered(26.0, 33.0, side, power)


@dataclass(frozen=True)
class RegimeSpec:
    """Boundary and loading condition of one plant regime."""

    clamped: bool = True
    clamp_factor: float = 1.0
    pellicle: bool = False
    exposing: bool = True

    def __post_init__(self):
        if self.clamp_factor < 0:
            raise ValueError("clamp_factor must be >= 0")


def default_regimes(reclamp_factor: float = 0.5, reclamp_pellicle: bool = False) -> dict[int, RegimeSpec]:
    return {
        NOMINAL: RegimeSpec(clamped=True),
        UNCLAMPED: RegimeSpec(clamped=False, exposing=False),
        RECLAMPED: RegimeSpec(clamped=True, clamp_factor=reclamp_factor, pellicle=reclamp_pellicle),
        PELLICLE: RegimeSpec(clamped=True, pellicle=True),
    }


@dataclass(frozen=True, eq=False)
class FullOrderPlant:
    config: PlantConfig
    image_area: ImageArea
    regimes: dict[int, RegimeSpec]
    A_by_regime: dict[int, sp.csc_matrix]
    B_by_regime: dict[int, np.ndarray]
    C_z: np.ndarray
    x_nodes: np.ndarray
    y_nodes: np.ndarray
    _factor_cache: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.x_nodes.size * self.y_nodes.size

    @property
    def B_e(self) -> np.ndarray:
        return self.B_by_regime[NOMINAL if NOMINAL in self.B_by_regime else min(self.B_by_regime)]

    @property
    def node_xy(self) -> tuple[np.ndarray, np.ndarray]:
        X, Y = np.meshgrid(self.x_nodes, self.y_nodes, indexing="ij")
        return X.ravel(), Y.ravel()

    @property
    def eval_xy(self) -> tuple[np.ndarray, np.ndarray]:
        """Dense evaluation points; the node grid itself."""
        return self.node_xy

    @property
    def n_eval(self) -> int:
        return self.n

    def image_mask(self) -> np.ndarray:
        """Boolean mask over the stacked (x then y) output vector, inside the image area."""
        inside = self.image_area.contains(*self.eval_xy)
        return np.concatenate([inside, inside])

    def interpolation_weights(self, points: np.ndarray) -> np.ndarray:
        """Bilinear weights (n_points x n_eval) from the evaluation grid to ``points``."""
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        side = self.config.reticle_side
        if np.any(points < -1e-9) or np.any(points > side + 1e-9):
            raise ValueError("mark positions must lie inside the reticle")
        nx, ny = self.x_nodes.size, self.y_nodes.size
        hx, hy = self.config.pitch_x, self.config.pitch_y
        W = np.zeros((points.shape[0], nx * ny))
        for k, (px, py) in enumerate(points):
            fx, fy = px / hx, py / hy
            i = min(max(int(np.floor(fx)), 0), nx - 2)
            j = min(max(int(np.floor(fy)), 0), ny - 2)
            tx, ty = fx - i, fy - j
            for di, dj, w in (
                (0, 0, (1 - tx) * (1 - ty)),
                (1, 0, tx * (1 - ty)),
                (0, 1, (1 - tx) * ty),
                (1, 1, tx * ty),
            ):
                if w != 0.0:
                    W[k, (i + di) * ny + (j + dj)] += w
        return W

    def sampling_matrix(self, layout: MarkLayout) -> np.ndarray:
        """Map from the dense output vector to the active-mark measurement vector."""
        if layout.n_active == 0:
            return np.zeros((0, 2 * self.n_eval))
        W = self.interpolation_weights(layout.positions())
        Z = np.zeros_like(W)
        return np.block([[W, Z], [Z, W]])

    def sampled(self, layout: MarkLayout) -> SampledLayout:
        return SampledLayout(layout, self.sampling_matrix(layout))

    def C_y(self, layout: MarkLayout) -> np.ndarray:
        return self.sampling_matrix(layout) @ self.C_z

    def state_space(self, regime: int) -> StateSpaceModel:
        """Dense realization of one regime with the dense displacement output."""
        self._check_regime(regime)
        return StateSpaceModel(
            A=self.A_by_regime[regime].toarray(),
            B_e=self.B_by_regime[regime],
            C=self.C_z,
        )

    def _check_regime(self, regime: int) -> None:
        if regime not in self.A_by_regime:
            raise KeyError(f"regime {regime} not in plant (have {sorted(self.A_by_regime)})")

    def step_factor(self, regime: int, dt: float):
        key = (regime, float(dt))
        lu = self._factor_cache.get(key)
        if lu is None:
            n = self.n
            M = (sp.identity(n, format="csc") - dt * self.A_by_regime[regime]).tocsc()
            try:
                lu = spla.splu(M)
            except RuntimeError as exc:
                raise np.linalg.LinAlgError(
                    f"factorization of (I - dt*A) failed for regime {regime}, dt={dt}"
                ) from exc
            self._factor_cache[key] = lu
        return lu


def _graph_laplacian(nx: int, ny: int, hx: float, hy: float) -> sp.csr_matrix:
    """5-point Laplacian with insulated (zero-flux) edges."""
    idx = np.arange(nx * ny).reshape(nx, ny)
    rows, cols, vals = [], [], []
    for a, b, h in ((idx[:-1, :], idx[1:, :], hx), (idx[:, :-1], idx[:, 1:], hy)):
        w = 1.0 / (h * h)
        rows += [a.ravel(), b.ravel()]
        cols += [b.ravel(), a.ravel()]
        vals += [np.full(a.size, w), np.full(a.size, w)]
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    v = np.concatenate(vals)
    W = sp.csr_matrix((v, (r, c)), shape=(nx * ny, nx * ny))
    return W - sp.diags(np.asarray(W.sum(axis=1)).ravel())


def build_plant(
    config: PlantConfig,
    image_area: ImageArea,
    regimes=(NOMINAL, UNCLAMPED, RECLAMPED),
    regime_specs: dict[int, RegimeSpec] | None = None,
) -> FullOrderPlant:
    """Assemble the per-regime state matrices, exposure input and output maps."""
    side = config.reticle_side
    if not (
        0 <= image_area.x_min
        and image_area.x_max <= side
        and 0 <= image_area.y_min
        and image_area.y_max <= side
    ):
        raise ValueError(f"image area {image_area} lies outside the {side} mm reticle")
    specs = regime_specs if regime_specs is not None else default_regimes()
    if isinstance(regimes, dict):
        specs = dict(regimes)
        regimes = list(regimes)
    regimes = list(regimes)
    if not regimes:
        raise ValueError("at least one regime is required")
    missing = [r for r in regimes if r not in specs]
    if missing:
        raise ValueError(f"no regime specification for {missing}")

    nx, ny = config.grid_nx, config.grid_ny
    hx, hy = config.pitch_x, config.pitch_y
    x_nodes = np.linspace(0.0, side, nx)
    y_nodes = np.linspace(0.0, side, ny)
    X, Y = np.meshgrid(x_nodes, y_nodes, indexing="ij")

    lap = config.diffusivity * _graph_laplacian(nx, ny, hx, hy)
    clamp_nodes = np.zeros((nx, ny), dtype=bool)
    clamp_nodes[0, :] = True
    clamp_nodes[-1, :] = True
    clamp_nodes = clamp_nodes.ravel().astype(float)
    base_loss = config.loss_ambient + config.cooling_flow

    footprint = image_area.contains(X.ravel(), Y.ravel()).astype(float)
    if not footprint.any():
        raise ValueError("image area contains no grid nodes; refine the grid")
    heat = config.absorption * image_area.exposure_power * footprint

    A_by_regime: dict[int, sp.csc_matrix] = {}
    B_by_regime: dict[int, np.ndarray] = {}
    for r in regimes:
        spec = specs[r]
        loss = base_loss + (config.clamp_conductance * spec.clamp_factor * clamp_nodes if spec.clamped else 0.0)
        A_by_regime[r] = (lap - sp.diags(np.broadcast_to(loss, (nx * ny,)))).tocsc()
        if spec.exposing:
            B_by_regime[r] = heat * (config.pellicle_factor if spec.pellicle else 1.0)
        else:
            B_by_regime[r] = np.zeros(nx * ny)

    core = 2.0 * max(hx, hy)
    weight = config.expansion_coeff * (1.0 + config.poisson_ratio) / (2.0 * np.pi) * hx * hy
    px, py = X.ravel(), Y.ravel()
    C_z = displacement_matrix(px, py, px, py, core, weight)

    return FullOrderPlant(
        config=config,
        image_area=image_area,
        regimes={r: specs[r] for r in regimes},
        A_by_regime=A_by_regime,
        B_by_regime=B_by_regime,
        C_z=C_z,
        x_nodes=x_nodes,
        y_nodes=y_nodes,
    )


def plant_step(plant: FullOrderPlant, state: np.ndarray, u_e: float, regime: int, dt: float) -> np.ndarray:
    """One implicit-Euler step ``x+ = (I - dt A)^-1 (x + dt B u_e)``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    plant._check_regime(regime)
    lu = plant.step_factor(regime, dt)
    rhs = np.asarray(state, dtype=float) + dt * plant.B_by_regime[regime] * float(u_e)
    return lu.solve(rhs)


def plant_outputs(
    plant: FullOrderPlant,
    state: np.ndarray,
    layout: MarkLayout,
    noise_std: float = 0.0,
    rng: np.random.Generator | int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Dense displacement field ``z`` and noisy active-mark measurements ``y``.

    Noise is added to ``y`` only.
    """
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    z = plant.C_z @ state
    y = plant.sampling_matrix(layout) @ z
    if noise_std > 0:
        gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        y = y + gen.normal(0.0, noise_std, size=y.shape)
    return z, y
