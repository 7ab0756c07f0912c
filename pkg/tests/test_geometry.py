import numpy as np
import pytest
from scipy.spatial import cKDTree

from dideeponet import fem, geometry as geo
from dideeponet.errors import ConfigurationError, FormatError, ValidationError


@pytest.fixture(scope="module")
def catalog():
    return geo.build_catalog(0)


# ---------------------------------------------------------------- catalog

def test_catalog_counts_and_order(catalog):
    assert len(catalog) == 100
    for kind in geo.KINDS:
        assert sum(s.kind == kind for s in catalog) == 25
    first_box = next(s for s in catalog if s.kind == "box")
    assert first_box.dims == (1.0, 1.0, 1.0)
    assert np.array_equal(first_box.rotation, np.eye(3))
    assert catalog[0].kind == "cylinder" and catalog[0].dims == (0.5, 1.0)


def test_catalog_variant_dimensions(catalog):
    cyl = [s.dims[0] for s in catalog if s.kind == "cylinder"][1:]
    assert sorted(set(cyl)) == [0.35, 0.4, 0.45] and all(cyl.count(r) == 8 for r in set(cyl))
    boxes = [s.dims for s in catalog if s.kind == "box"][1:]
    assert {d[1] for d in boxes} == {0.7, 0.8, 0.9} and all(d[1] == d[2] for d in boxes)
    rings = [s.dims[1] for s in catalog if s.kind == "ring"][1:]
    assert sorted(set(rings)) == [0.65, 0.75, 0.85]
    ell = [s.dims for s in catalog if s.kind == "ellipsoid"][1:]
    assert {d[1] for d in ell} == {0.65, 0.75, 0.85}


def test_major_dimension_is_one(catalog):
    assert all(abs(s.major_dimension - 1.0) < 1e-12 for s in catalog)


def test_catalog_deterministic(catalog):
    assert geo.catalog_bytes(geo.build_catalog(0)) == geo.catalog_bytes(catalog)
    assert geo.catalog_bytes(geo.build_catalog(1)) != geo.catalog_bytes(catalog)


def test_shape_spec_validation():
    with pytest.raises(ConfigurationError):
        geo.ShapeSpec("pyramid", (1, 1, 1))
    with pytest.raises(ConfigurationError):
        geo.ShapeSpec("box", (1, 1))
    with pytest.raises(ConfigurationError):
        geo.ShapeSpec("box", (1, 1, 1), np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ConfigurationError):
        geo.ShapeSpec("ring", (1.0, 1.2))


def test_shape_spec_dict_round_trip(catalog):
    for s in catalog[::7]:
        assert geo.ShapeSpec.from_dict(s.to_dict()) == s


# ---------------------------------------------------------------- rotations

def test_rotations_orthonormal(rng):
    for _ in range(1000):
        R = geo.random_rotation(rng)
        assert np.abs(R.T @ R - np.eye(3)).max() < 1e-12
        assert abs(np.linalg.det(R) - 1.0) < 1e-12


class ConstantRng:
    def __init__(self, value):
        self.value = value

    def random(self, n):
        return np.full(n, self.value)


@pytest.mark.parametrize("value", [0.0, 0.5, 1.0 - 1e-16])
def test_degenerate_rng_gives_valid_rotation(value):
    R = geo.random_rotation(ConstantRng(value))
    assert np.abs(R.T @ R - np.eye(3)).max() < 1e-12
    assert abs(np.linalg.det(R) - 1.0) < 1e-12


def test_rotation_uniformity():
    rng = np.random.default_rng(7)
    mean = np.zeros(3)
    n = 100_000
    for _ in range(n):
        mean += geo.random_rotation(rng)[:, 2]
    assert np.linalg.norm(mean / n) < 0.02


# ---------------------------------------------------------------- meshes

def test_unit_box_corners_present():
    for sub in (2, 16, 64):
        mesh = geo.triangulate(geo.ShapeSpec("box", (1, 1, 1)), sub)
        corners = 1.0 + 0.5 * (2 * fem.CORNER_OFFSETS - 1)
        for c in corners:
            assert np.min(np.linalg.norm(mesh.vertices - c, axis=1)) < 1e-14


def test_sphere_vertices_on_surface():
    mesh = geo.triangulate(geo.ShapeSpec("ellipsoid", (1, 1, 1)), 32)
    r = np.linalg.norm(mesh.vertices - 1.0, axis=1)
    assert np.abs(r - 0.5).max() < 1e-9


def test_meshes_watertight_and_outward(catalog):
    for spec in catalog[::5]:
        mesh = geo.triangulate(spec, 16)
        geo.validate_mesh(mesh)
        assert mesh.signed_volume() > 0


@pytest.mark.parametrize("idx", [0, 30, 55, 80])
def test_vertex_deviation_bound(catalog, idx):
    spec = catalog[idx]
    sub = 32
    mesh = geo.triangulate(spec, sub)
    bound = np.pi * spec.major_dimension / sub**2
    if geo.has_analytic_sdf(spec):
        dev = np.abs(geo.analytic_sdf(spec, mesh.vertices))
    else:
        semi = 0.5 * np.asarray(spec.dims)
        dev = np.abs(np.linalg.norm(spec.to_body(mesh.vertices) / semi, axis=1) - 1.0)
    assert dev.max() < bound


def test_torus_surface_samples_near_zero_level():
    spec = geo.ShapeSpec("ring", (1.0, 0.75))
    mesh = geo.triangulate(spec, 128)
    tri = mesh.triangle_array()
    rng = np.random.default_rng(3)
    bary = rng.dirichlet([1, 1, 1], size=len(tri))
    samples = np.einsum("tk,tki->ti", bary, tri)
    assert np.abs(geo.analytic_sdf(spec, samples)).max() < 1e-3


def test_triangulate_errors():
    with pytest.raises(ConfigurationError):
        geo.triangulate(geo.ShapeSpec("box", (1, 1, 1)), 1)


def test_open_mesh_rejected_with_edges():
    mesh = geo.triangulate(geo.ShapeSpec("box", (1, 1, 1)), 2)
    holed = geo.TriMesh(mesh.vertices, mesh.triangles[1:])
    with pytest.raises(ValidationError, match="open or non-manifold edges"):
        geo.validate_mesh(holed)
    with pytest.raises(ValidationError):
        geo.mesh_sdf(holed, 8)


def test_inconsistent_orientation_rejected():
    mesh = geo.triangulate(geo.ShapeSpec("box", (1, 1, 1)), 2)
    tris = mesh.triangles.copy()
    tris[0] = tris[0, ::-1]
    with pytest.raises(ValidationError, match="oriented"):
        geo.validate_mesh(geo.TriMesh(mesh.vertices, tris))


# ---------------------------------------------------------------- analytic SDFs

def test_analytic_examples():
    assert geo.analytic_sdf(geo.ShapeSpec("box", (1, 1, 1)), [1, 1, 1]) == -0.5
    torus = geo.ShapeSpec("ring", (1.25, 0.75))  # R = 0.5, r = 0.125
    assert torus.torus_radii == (0.5, 0.125)
    assert abs(geo.analytic_sdf(torus, [1.5, 1.0, 1.0]) + 0.125) < 1e-15
    sphere = geo.ShapeSpec("ellipsoid", (1, 1, 1))
    assert abs(geo.analytic_sdf(sphere, [2.0, 1.0, 1.0]) - 0.5) < 1e-15


def test_non_spherical_ellipsoid_unsupported():
    with pytest.raises(geo.UnsupportedShapeError):
        geo.analytic_sdf(geo.ShapeSpec("ellipsoid", (1, 0.7, 0.7)), [1, 1, 1])


def _box_surface_samples(n):
    t = (np.arange(n) + 0.5) / n - 0.5
    A, B = (a.ravel() for a in np.meshgrid(t, t, indexing="ij"))
    faces = []
    for axis in range(3):
        for side in (-0.5, 0.5):
            P = np.empty((len(A), 3))
            others = [k for k in range(3) if k != axis]
            P[:, axis] = side
            P[:, others[0]], P[:, others[1]] = A, B
            faces.append(P)
    # edges too, so corner regions are not underresolved
    s = np.linspace(-0.5, 0.5, 4 * n + 1)
    for axis in range(3):
        for a in (-0.5, 0.5):
            for b in (-0.5, 0.5):
                P = np.empty((len(s), 3))
                others = [k for k in range(3) if k != axis]
                P[:, axis], P[:, others[0]], P[:, others[1]] = s, a, b
                faces.append(P)
    return np.concatenate(faces)


def test_box_sdf_matches_surface_sampling_oracle():
    R = geo.random_rotation(np.random.default_rng(11))
    spec = geo.ShapeSpec("box", (1.0, 0.8, 0.8), R)
    body = _box_surface_samples(400) * np.asarray(spec.dims)
    tree = cKDTree(spec.to_world(body))
    pts = np.random.default_rng(12).uniform(0, 2, size=(2000, 3))
    dist, _ = tree.query(pts)
    inside = np.all(np.abs(spec.to_body(pts)) < 0.5 * np.asarray(spec.dims), axis=1)
    oracle = np.where(inside, -dist, dist)
    assert np.abs(geo.analytic_sdf(spec, pts) - oracle).max() < 2e-3


@pytest.mark.parametrize("idx", [0, 10, 30, 60, 75])
def test_analytic_gradient_matches_finite_differences(catalog, idx):
    spec = catalog[idx]
    pts = np.random.default_rng(idx).uniform(0.1, 1.9, size=(200, 3))
    d, g = geo.level_function(spec, pts)
    eps = 1e-6
    fd = np.stack([(geo.level_function(spec, pts + eps * e)[0] - geo.level_function(spec, pts - eps * e)[0])
                   / (2 * eps) for e in np.eye(3)], axis=1)
    ok = np.abs(np.linalg.norm(fd, axis=1) - np.linalg.norm(g, axis=1)) < 1e-3  # skip kinks
    assert ok.mean() > 0.9
    assert np.abs(fd[ok] - g[ok]).max() < 1e-5


def test_level_function_bounds_ellipsoid_distance():
    spec = geo.ShapeSpec("ellipsoid", (1.0, 0.65, 0.65), geo.random_rotation(np.random.default_rng(2)))
    mesh = geo.triangulate(spec, 64)
    pts = np.random.default_rng(4).uniform(0, 2, size=(500, 3))
    lf, _ = geo.level_function(spec, pts)
    md = geo.mesh_sdf_points(mesh, pts)
    assert np.all(np.sign(lf) == np.sign(md))
    assert np.all(np.abs(lf) <= np.abs(md) + 2e-3)


# ---------------------------------------------------------------- voxelized SDFs

def _lipschitz_excess(grid, h):
    return max(np.abs(np.diff(grid, axis=a)).max() for a in range(3)) - h


def test_mesh_sdf_unit_box_center():
    G = 32
    sdf = geo.mesh_sdf(geo.triangulate(geo.ShapeSpec("box", (1, 1, 1)), 16), G)
    i = G // 2
    assert abs(sdf.grid[i, i, i] + 0.5) <= sdf.h
    assert sdf.grid[0, 0, 0] > 0


def test_sphere_mesh_sdf_matches_analytic():
    spec = geo.ShapeSpec("ellipsoid", (1, 1, 1))
    sdf = geo.mesh_sdf(geo.triangulate(spec, 128), 24)
    exact = np.linalg.norm(fem.node_coordinates(24) - 1.0, axis=1) - 0.5
    assert np.abs(sdf.grid.ravel() - exact).max() < 2e-3


def test_flipped_winding_keeps_sign():
    mesh = geo.triangulate(geo.ShapeSpec("ring", (1.0, 0.65)), 32)
    a = geo.mesh_sdf(mesh, 16).grid
    b = geo.mesh_sdf(mesh.flipped(), 16).grid
    assert np.array_equal(np.sign(a), np.sign(b))
    assert np.abs(a - b).max() < 1e-14  # vertex order only changes rounding


def test_mesh_sdf_resolution_check():
    with pytest.raises(ConfigurationError):
        geo.mesh_sdf(geo.triangulate(geo.ShapeSpec("box", (1, 1, 1)), 2), 7)
    with pytest.raises(ConfigurationError):
        geo.voxelize(geo.ShapeSpec("box", (1, 1, 1)), 4)


def test_voxelized_field_invariants(catalog):
    G = 16
    for spec in (catalog[0], catalog[30], catalog[55], catalog[80]):
        sdf = geo.voxelize(spec, G, subdivisions=64)
        assert _lipschitz_excess(sdf.grid, sdf.h) <= 1e-9
        assert np.abs(sdf.grid).max() <= 2 * np.sqrt(3)
        assert (sdf.grid < 0).any() and (sdf.grid > 0).any()


def test_zero_level_within_one_voxel_of_mesh():
    from scipy.interpolate import RegularGridInterpolator

    spec = geo.ShapeSpec("ellipsoid", (1.0, 0.75, 0.75), geo.random_rotation(np.random.default_rng(5)))
    G = 20
    sdf = geo.voxelize(spec, G, subdivisions=64)
    axis = np.linspace(0, 2, G)
    interp = RegularGridInterpolator((axis, axis, axis), sdf.grid)
    verts = geo.triangulate(spec, 64).vertices
    assert np.abs(interp(verts)).max() <= sdf.h


def test_mesh_sdf_points_matches_grid():
    mesh = geo.triangulate(geo.ShapeSpec("cylinder", (0.4, 1.0)), 32)
    grid = geo.mesh_sdf(mesh, 10).grid.ravel()
    pts = geo.mesh_sdf_points(mesh, fem.node_coordinates(10))
    assert np.array_equal(grid, pts)


# ---------------------------------------------------------------- STL

def test_stl_round_trip(tmp_path):
    mesh = geo.triangulate(geo.ShapeSpec("box", (1, 1, 1)), 8)
    path = tmp_path / "box.stl"
    geo.write_stl(mesh, path)
    data = path.read_bytes()
    assert len(data) == 84 + 50 * len(mesh.triangles)
    back = geo.read_stl(path)
    geo.validate_mesh(back)
    assert np.array_equal(back.triangle_array(), mesh.triangle_array().astype(np.float32).astype(np.float64))


def test_stl_truncated(tmp_path):
    mesh = geo.triangulate(geo.ShapeSpec("box", (1, 1, 1)), 2)
    path = tmp_path / "box.stl"
    geo.write_stl(mesh, path)
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(FormatError) as exc:
        geo.read_stl(path)
    assert exc.value.offset == 84
    path.write_bytes(b"short")
    with pytest.raises(FormatError):
        geo.read_stl(path)
