"""Structured P1 meshes on the unit interval and the unit square."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

#: Facet tag for the inflow-flux boundary; every other facet is Robin.
FLUX = 1
ROBIN = 0

_SIDES_1D = ("left", "right")
_SIDES_2D = ("bottom", "right", "top", "left")


@dataclass(frozen=True, eq=False)
class Mesh:
    """Simplicial mesh with tagged boundary facets.

    ``elements`` holds ``dim + 1`` node indices per simplex, ``facets`` holds
    ``dim`` node indices per boundary facet and ``facet_tags`` marks each
    facet as :data:`FLUX` or :data:`ROBIN`.
    """

    dim: int
    nodes: np.ndarray
    elements: np.ndarray
    facets: np.ndarray
    facet_tags: np.ndarray

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("only 1D and 2D meshes are supported")
        if self.nodes.shape[0] < 2:
            raise ValueError("a mesh needs at least two nodes")
        if len(self.facets) != len(self.facet_tags):
            raise ValueError("every boundary facet needs exactly one tag")

    @property
    def num_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def num_elements(self) -> int:
        return self.elements.shape[0]

    @cached_property
    def volumes(self) -> np.ndarray:
        """Element lengths (1D) or areas (2D)."""
        x = self.nodes[self.elements]
        if self.dim == 1:
            return np.abs(x[:, 1, 0] - x[:, 0, 0])
        e1 = x[:, 1] - x[:, 0]
        e2 = x[:, 2] - x[:, 0]
        return 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @cached_property
    def gradients(self) -> np.ndarray:
        """Constant basis-function gradients, shape (ne, dim+1, dim)."""
        x = self.nodes[self.elements]
        if self.dim == 1:
            h = x[:, 1, 0] - x[:, 0, 0]
            return np.stack([-1.0 / h, 1.0 / h], axis=1)[:, :, None]
        # rows of inv([[1, x, y]]) give the barycentric coefficients
        ones = np.ones(x.shape[:2] + (1,))
        T = np.concatenate([ones, x], axis=2)
        return np.linalg.inv(T)[:, 1:, :].transpose(0, 2, 1)

    @cached_property
    def element_stiffness(self) -> np.ndarray:
        """Unweighted element stiffness blocks, shape (ne, dim+1, dim+1)."""
        G = self.gradients
        return np.einsum("eid,ejd->eij", G, G) * self.volumes[:, None, None]

    @cached_property
    def element_mass(self) -> np.ndarray:
        k = self.dim + 1
        ref = (np.ones((k, k)) + np.eye(k)) / ((k + 1) * k)
        return self.volumes[:, None, None] * ref

    @cached_property
    def facet_measures(self) -> np.ndarray:
        if self.dim == 1:
            return np.ones(len(self.facets))
        x = self.nodes[self.facets]
        return np.linalg.norm(x[:, 1] - x[:, 0], axis=1)

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        return np.unique(self.facets)

    def element_pattern(self):
        """Row and column indices for scattering element blocks into COO form."""
        k = self.dim + 1
        rows = np.repeat(self.elements, k, axis=1).ravel()
        cols = np.tile(self.elements, (1, k)).ravel()
        return rows, cols

    def to_csv(self, directory) -> None:
        """Write ``nodes.csv``, ``elements.csv`` and ``facets.csv``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        axes = ["x", "y"][: self.dim]
        _write_rows(directory / "nodes.csv", axes, self.nodes)
        _write_rows(directory / "elements.csv", [f"v{i}" for i in range(self.dim + 1)], self.elements)
        _write_rows(
            directory / "facets.csv",
            [f"v{i}" for i in range(self.dim)] + ["tag"],
            np.column_stack([self.facets, self.facet_tags]),
        )

    @classmethod
    def from_csv(cls, directory) -> "Mesh":
        directory = Path(directory)
        nodes = _read_rows(directory / "nodes.csv", float)
        elements = _read_rows(directory / "elements.csv", int)
        ft = _read_rows(directory / "facets.csv", int)
        return cls(nodes.shape[1], nodes, elements, ft[:, :-1], ft[:, -1])


def _write_rows(path, header, rows, comment=None):
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in np.atleast_2d(rows):
            w.writerow([repr(v.item()) for v in row])


def _read_rows(path, dtype):
    with open(path, newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        next(reader)
        return np.array([[dtype(v) for v in row] for row in reader])


def interval_mesh(num_elements: int, flux_side: str = "left") -> Mesh:
    """Uniform mesh of (0, 1); the flux boundary is one endpoint."""
    if num_elements < 1:
        raise ValueError("need at least one element")
    if flux_side not in _SIDES_1D:
        raise ValueError(f"flux side must be one of {_SIDES_1D}")
    nodes = np.linspace(0.0, 1.0, num_elements + 1)[:, None]
    i = np.arange(num_elements)
    elements = np.column_stack([i, i + 1])
    facets = np.array([[0], [num_elements]])
    tags = np.array([FLUX, ROBIN]) if flux_side == "left" else np.array([ROBIN, FLUX])
    return Mesh(1, nodes, elements, facets, tags)


def unit_square_mesh(nx: int, ny: int | None = None, flux_side: str = "bottom") -> Mesh:
    """Right-diagonal triangulation of the unit square with ``nx * ny`` cells."""
    ny = nx if ny is None else ny
    if nx < 1 or ny < 1:
        raise ValueError("need at least one cell per direction")
    if flux_side not in _SIDES_2D:
        raise ValueError(f"flux side must be one of {_SIDES_2D}")
    xs, ys = np.linspace(0, 1, nx + 1), np.linspace(0, 1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def idx(i, j):
        return j * (nx + 1) + i

    I, J = np.meshgrid(np.arange(nx), np.arange(ny))
    I, J = I.ravel(), J.ravel()
    a, b, c, d = idx(I, J), idx(I + 1, J), idx(I + 1, J + 1), idx(I, J + 1)
    elements = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])

    sides = {
        "bottom": [(idx(i, 0), idx(i + 1, 0)) for i in range(nx)],
        "right": [(idx(nx, j), idx(nx, j + 1)) for j in range(ny)],
        "top": [(idx(i + 1, ny), idx(i, ny)) for i in range(nx)],
        "left": [(idx(0, j + 1), idx(0, j)) for j in range(ny)],
    }
    facets, tags = [], []
    for side in _SIDES_2D:
        facets += sides[side]
        tags += [FLUX if side == flux_side else ROBIN] * len(sides[side])
    return Mesh(2, nodes, elements, np.array(facets), np.array(tags))


@dataclass(frozen=True, eq=False)
class Field:
    """Nodal P1 coefficients on a mesh."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.mesh.num_nodes,):
            raise ValueError(f"field has {values.shape} values for {self.mesh.num_nodes} nodes")
        object.__setattr__(self, "values", values)

    def to_csv(self, path, name: str = "value", comment: str | None = None) -> None:
        """Write ``x[,y],name`` rows, optionally preceded by a ``#`` comment line."""
        axes = ["x", "y"][: self.mesh.dim]
        _write_rows(path, axes + [name], np.column_stack([self.mesh.nodes, self.values]), comment)

    @classmethod
    def from_csv(cls, mesh: Mesh, path) -> "Field":
        rows = _read_rows(path, float)
        if rows.shape[0] != mesh.num_nodes or not np.allclose(rows[:, :-1], mesh.nodes):
            raise ValueError(f"{path} does not match the mesh nodes")
        return cls(mesh, rows[:, -1])
