"""Lattice blow-ups of continuum shapes and their graph structure.

A domain is ``D_N = (N * D) ∩ Z^d`` for an open shape ``D``.  Sites are stored
in lexicographic order of their coordinates, which makes every downstream
computation independent of construction details.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import Disconnected, EmptyDomain, EmptyTarget, MarginViolation, ValidationError

KINDS = ("ball", "box", "annulus")


@dataclass(frozen=True)
class ShapeSpec:
    """An open set in R^d: a ball, an axis-aligned box or a centred annulus."""

    kind: str
    d: int
    center: tuple = ()
    radius: float = 0.0
    lo: tuple = ()
    hi: tuple = ()
    r_in: float = 0.0
    r_out: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown shape kind {self.kind!r}")
        if self.d < 1:
            raise ValidationError("dimension must be >= 1")
        if self.kind == "ball":
            if len(self.center) != self.d:
                raise ValidationError("ball center has wrong dimension")
            if not self.radius > 0:
                raise ValidationError("ball radius must be positive")
        elif self.kind == "box":
            if len(self.lo) != self.d or len(self.hi) != self.d:
                raise ValidationError("box corners have wrong dimension")
            if not all(a < b for a, b in zip(self.lo, self.hi)):
                raise ValidationError("box requires lo < hi componentwise")
        elif not 0 < self.r_in < self.r_out:
            raise ValidationError("annulus requires 0 < r_in < r_out")

    @classmethod
    def ball(cls, d=3, radius=1.0, center=None):
        center = tuple(float(c) for c in (center if center is not None else [0.0] * d))
        return cls("ball", d, center=center, radius=float(radius))

    @classmethod
    def box(cls, lo, hi):
        lo = tuple(float(v) for v in lo)
        hi = tuple(float(v) for v in hi)
        return cls("box", len(lo), lo=lo, hi=hi)

    @classmethod
    def annulus(cls, d, r_in, r_out):
        return cls("annulus", d, r_in=float(r_in), r_out=float(r_out))

    @classmethod
    def parse(cls, text, d=3):
        """Parse ``ball:R``, ``ball:R@c1,c2,c3``, ``box:lo1,..;hi1,..`` or ``annulus:a,b``."""
        kind, _, rest = text.partition(":")
        kind = kind.strip()
        try:
            if kind == "ball":
                if "@" in rest:
                    r, c = rest.split("@")
                    return cls.ball(d, float(r), [float(v) for v in c.split(",")])
                return cls.ball(d, float(rest) if rest else 1.0)
            if kind == "box":
                lo, hi = rest.split(";")
                return cls.box([float(v) for v in lo.split(",")], [float(v) for v in hi.split(",")])
            if kind == "annulus":
                a, b = rest.split(",")
                return cls.annulus(d, float(a), float(b))
        except ValueError as exc:
            raise ValidationError(f"cannot parse shape {text!r}: {exc}") from None
        raise ValidationError(f"unknown shape kind {kind!r}")

    @property
    def params(self):
        if self.kind == "ball":
            return list(self.center) + [self.radius]
        if self.kind == "box":
            return list(self.lo) + list(self.hi)
        return [self.r_in, self.r_out]

    def contains(self, points):
        """Strict membership test for an ``(m, d)`` array of points."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == "ball":
            return np.sum((p - np.asarray(self.center)) ** 2, axis=1) < self.radius**2
        if self.kind == "box":
            return np.all((p > np.asarray(self.lo)) & (p < np.asarray(self.hi)), axis=1)
        r2 = np.sum(p**2, axis=1)
        return (r2 > self.r_in**2) & (r2 < self.r_out**2)

    def signed_distance(self, points):
        """Euclidean signed distance to the boundary, negative inside."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == "ball":
            return np.linalg.norm(p - np.asarray(self.center), axis=1) - self.radius
        if self.kind == "box":
            c = (np.asarray(self.lo) + np.asarray(self.hi)) / 2
            h = (np.asarray(self.hi) - np.asarray(self.lo)) / 2
            q = np.abs(p - c) - h
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
            inside = np.minimum(q.max(axis=1), 0.0)
            return outside + inside
        r = np.linalg.norm(p, axis=1)
        return np.maximum(self.r_in - r, r - self.r_out)

    def bounds(self):
        """Axis-aligned bounding box ``(lo, hi)`` of the closure."""
        if self.kind == "ball":
            c = np.asarray(self.center)
            return c - self.radius, c + self.radius
        if self.kind == "box":
            return np.asarray(self.lo), np.asarray(self.hi)
        return np.full(self.d, -self.r_out), np.full(self.d, self.r_out)

    def boundary_samples(self, n=4000, seed=0):
        """Points on the boundary, used by the margin check for general pairs."""
        rng = np.random.default_rng(seed)
        if self.kind in ("ball", "annulus"):
            g = rng.standard_normal((n, self.d))
            g /= np.linalg.norm(g, axis=1, keepdims=True)
            if self.kind == "ball":
                return np.asarray(self.center) + self.radius * g
            return np.vstack([self.r_in * g, self.r_out * g])
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        pts = lo + (hi - lo) * rng.random((n, self.d))
        axis = rng.integers(0, self.d, n)
        side = rng.integers(0, 2, n)
        pts[np.arange(n), axis] = np.where(side == 1, hi[axis], lo[axis])
        return pts


@dataclass(frozen=True, eq=False)
class Domain:
    """``D_N`` with adjacency, outer boundary and a dense coordinate lookup."""

    shape: ShapeSpec
    N: int
    sites: np.ndarray
    neighbors: np.ndarray
    degree: np.ndarray
    boundary: np.ndarray
    origin: np.ndarray
    grid_index: np.ndarray = field(repr=False)

    @property
    def d(self):
        return self.shape.d

    @property
    def size(self):
        return len(self.sites)

    def __len__(self):
        return len(self.sites)

    def index_of(self, points):
        """Dense index of each point, ``-1`` for points outside ``D_N``."""
        p = np.atleast_2d(np.asarray(points, dtype=np.int64)) - self.origin
        ok = np.all((p >= 0) & (p < np.asarray(self.grid_index.shape)), axis=1)
        out = np.full(len(p), -1, dtype=np.int64)
        if ok.any():
            out[ok] = self.grid_index[tuple(p[ok].T)]
        return out

    @cached_property
    def adjacency(self):
        """Symmetric 0/1 adjacency matrix in CSR form."""
        n = self.size
        rows = np.repeat(np.arange(n), self.neighbors.shape[1])
        cols = self.neighbors.ravel()
        keep = cols >= 0
        a = coo_matrix((np.ones(keep.sum()), (rows[keep], cols[keep])), shape=(n, n))
        return a.tocsr()

    def rescaled(self):
        return self.sites / self.N

    def distance_to_boundary(self):
        """Euclidean lattice distance from each site to the outer boundary."""
        from scipy.spatial import cKDTree

        tree = cKDTree(self.boundary)
        dist, _ = tree.query(self.sites)
        return dist


def _lattice_box(shape, N):
    lo, hi = shape.bounds()
    lo = np.floor(lo * N).astype(np.int64) - 1
    hi = np.ceil(hi * N).astype(np.int64) + 1
    return lo, hi


def build_domain(shape: ShapeSpec, N: int) -> Domain:
    """Lattice points of ``N * shape`` with nearest-neighbour structure.

    Raises :class:`EmptyDomain` when no lattice point is inside and
    :class:`Disconnected` when the induced graph has several components.
    """
    if N < 1:
        raise ValidationError("N must be >= 1")
    d = shape.d
    lo, hi = _lattice_box(shape, N)
    dims = tuple(int(v) for v in hi - lo + 1)
    grid = np.indices(dims).reshape(d, -1).T + lo
    inside = shape.contains(grid / N)
    if not inside.any():
        raise EmptyDomain(f"no lattice point inside N*D for N={N}")
    sites = grid[inside]
    grid_index = np.full(dims, -1, dtype=np.int64)
    grid_index[tuple((sites - lo).T)] = np.arange(len(sites))

    offsets = _unit_offsets(d)
    local = sites - lo
    neighbors = np.full((len(sites), 2 * d), -1, dtype=np.int64)
    outside = []
    for j, e in enumerate(offsets):
        q = local + e
        # lattice box carries a one-site margin, so q never leaves it
        idx = grid_index[tuple(q.T)]
        neighbors[:, j] = idx
        outside.append(q[idx < 0] + lo)
    degree = (neighbors >= 0).sum(axis=1)
    boundary = np.unique(np.vstack(outside), axis=0) if outside else np.empty((0, d), np.int64)

    dom = Domain(shape, int(N), sites, neighbors, degree, boundary, lo, grid_index)
    if len(sites) > 1:
        ncomp, _ = connected_components(dom.adjacency, directed=False)
        if ncomp != 1:
            raise Disconnected(f"D_N has {ncomp} connected components")
    return dom


def _unit_offsets(d):
    """Directions ordered +e_0, -e_0, +e_1, -e_1, ..."""
    out = np.zeros((2 * d, d), dtype=np.int64)
    for k in range(d):
        out[2 * k, k] = 1
        out[2 * k + 1, k] = -1
    return out


def margin(domain_shape: ShapeSpec, lambda_shape: ShapeSpec) -> float:
    """Continuum distance from ``Lambda`` to the boundary of ``D`` (negative if not inside)."""
    if domain_shape.kind == "ball" and lambda_shape.kind == "ball":
        gap = np.linalg.norm(np.subtract(domain_shape.center, lambda_shape.center))
        return domain_shape.radius - gap - lambda_shape.radius
    pts = lambda_shape.boundary_samples()
    if domain_shape.kind == "box" and lambda_shape.kind == "box":
        # corners attain the extreme depth for nested boxes
        corners = np.array(np.meshgrid(*zip(lambda_shape.lo, lambda_shape.hi))).reshape(
            lambda_shape.d, -1
        ).T
        pts = np.vstack([pts, corners])
    return float(np.min(-domain_shape.signed_distance(pts)))


@dataclass(frozen=True, eq=False)
class TargetSet:
    """Inner target ``Lambda_N`` and its ``eps*N`` enlargement, as site indices."""

    lambda_shape: ShapeSpec
    sites: np.ndarray
    eps: float
    enlarged: np.ndarray
    domain: Domain = field(repr=False)

    @property
    def size(self):
        return len(self.sites)

    def coords(self):
        return self.domain.sites[self.sites]


def build_target(domain: Domain, lambda_shape: ShapeSpec, eps: float) -> TargetSet:
    """``Lambda_N = (N Lambda) ∩ D_N`` and ``{x in D_N : d(x, Lambda_N) <= eps N}``."""
    if lambda_shape.d != domain.d:
        raise ValidationError("target and domain dimensions differ")
    if eps <= 0:
        raise ValidationError("eps must be positive")
    m = margin(domain.shape, lambda_shape)
    if m < 2 * eps - 1e-12:
        raise MarginViolation(f"d(Lambda, dD) = {m:.6g} < 2*eps = {2 * eps:.6g}")
    N = domain.N
    inside = lambda_shape.contains(domain.sites / N)
    sites = np.flatnonzero(inside)
    if len(sites) == 0:
        raise EmptyTarget("Lambda_N is empty")

    # distance transform on the domain's bounding grid: zeros at Lambda_N
    mask = np.ones(domain.grid_index.shape, dtype=bool)
    mask[tuple((domain.sites[sites] - domain.origin).T)] = False
    dist = ndimage.distance_transform_edt(mask)
    d_sites = dist[tuple((domain.sites - domain.origin).T)]
    enlarged = np.flatnonzero(d_sites <= eps * N + 1e-9)
    return TargetSet(lambda_shape, sites, float(eps), enlarged, domain)


def dump_domain(domain: Domain, path) -> None:
    """Write ``d N kind params`` followed by one site per line."""
    s = domain.shape
    header = " ".join([str(s.d), str(domain.N), s.kind] + [repr(float(v)) for v in s.params])
    lines = [header] + [" ".join(str(int(c)) for c in row) for row in domain.sites]
    Path(path).write_text("\n".join(lines) + "\n")


def load_domain(path) -> Domain:
    """Rebuild a domain from its text dump and check the stored sites agree."""
    text = Path(path).read_text().split("\n")
    head = text[0].split()
    d, N, kind = int(head[0]), int(head[1]), head[2]
    params = [float(v) for v in head[3:]]
    if kind == "ball":
        shape = ShapeSpec.ball(d, params[-1], params[:-1])
    elif kind == "box":
        shape = ShapeSpec.box(params[:d], params[d:])
    else:
        shape = ShapeSpec.annulus(d, *params)
    dom = build_domain(shape, N)
    stored = np.array([[int(v) for v in line.split()] for line in text[1:] if line.strip()])
    if stored.shape != dom.sites.shape or not np.array_equal(stored, dom.sites):
        raise ValidationError("stored sites do not match the rebuilt domain")
    return dom
