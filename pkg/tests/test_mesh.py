import numpy as np
import pytest

from phaseplug.mesh import (FacetTag, GeometryParams, MeshError, Region, build_benchmark_mesh,
                            build_duct_mesh, export_mesh, facet_adjacency, read_mesh)


def test_benchmark_mesh_is_valid(mesh, geom):
    mesh.validate()
    assert np.all(mesh.cell_areas > 0)
    assert mesh.cell_areas.sum() == pytest.approx(geom.area(), rel=1e-12)


def test_region_areas(mesh, geom):
    x0, x1 = geom.x_design
    design = mesh.cell_areas[mesh.cell_region == Region.DESIGN_REGION].sum()
    assert design == pytest.approx((x1 - x0) * geom.height, rel=1e-12)


def test_boundary_tags(mesh, geom):
    mid = mesh.points[mesh.facets].mean(axis=1)
    dia = mesh.facets_with_tag(FacetTag.DIAPHRAGM)
    out = mesh.facets_with_tag(FacetTag.OUTLET)
    assert np.allclose(mid[dia, 0], 0.0)
    assert np.allclose(mid[out, 0], geom.x_outlet)
    assert mesh.facet_lengths[dia].sum() == pytest.approx(geom.chamber_length)
    assert mesh.facet_lengths[out].sum() == pytest.approx(geom.waveguide_width)
    dir_ = mesh.facets_with_tag(FacetTag.DESIGN_INTERFACE_DIRICHLET)
    assert np.allclose(mid[dir_, 0], geom.chamber_depth)
    assert np.all((mid[dir_, 1] > geom.slit_top) | (mid[dir_, 1] < geom.slit_start))
    # every boundary facet carries a boundary tag, every interior one does not
    bnd = mesh.boundary_facets
    assert np.all(mesh.facet_tag[bnd] != FacetTag.INTERIOR)


def test_compression_ratio(geom):
    assert geom.compression_ratio == pytest.approx(28 / 13)


def test_outward_normals_point_out(mesh):
    f = mesh.facets_with_tag(FacetTag.OUTLET)
    n = mesh.outward_normals(f)
    np.testing.assert_allclose(n, np.tile([1.0, 0.0], (len(f), 1)), atol=1e-14)


def test_cell_facets_are_opposite(mesh):
    for c in range(0, mesh.n_cells, 97):
        for i in range(3):
            f = mesh.cell_facets[c, i]
            assert mesh.cells[c, i] not in mesh.facets[f]
            assert c in mesh.facet_cells[f]


def test_facet_adjacency_pairs():
    m = build_duct_mesh(0.002, 0.001, 1e-3)
    adj = facet_adjacency(m)
    assert len(adj) == m.n_facets


def test_export_read_round_trip(tmp_path):
    m = build_benchmark_mesh(GeometryParams(chamber_depth=2e-3), 1.5e-3)
    path = tmp_path / "mesh.txt"
    export_mesh(m, path)
    back = read_mesh(path)
    assert np.array_equal(back.points, m.points)
    assert np.array_equal(back.cells, m.cells)
    assert np.array_equal(back.facet_tag, m.facet_tag)
    assert np.array_equal(back.cell_region, m.cell_region)


@pytest.mark.parametrize("kwargs", [dict(chamber_depth=-0.5e-3), dict(slit_width=20e-3),
                                    dict(design_height=5e-3), dict(slit_start=-1e-3)])
def test_invalid_geometry(kwargs):
    with pytest.raises(MeshError):
        GeometryParams(**kwargs).validate()


def test_bad_duct():
    with pytest.raises(MeshError):
        build_duct_mesh(0.0, 1.0, 0.1)
