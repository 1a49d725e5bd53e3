#!/usr/bin/env python3
"""
Tests for the discrete boundary, hole bridging, decomposition and the quad mesh
"""

import math
import os
import sys

import numpy as np
import pytest
import shapely
from numpy.testing import assert_allclose
from shapely.geometry import Polygon

# Add project root to path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from app.models.pipeline_config import PipelineConfig
from app.services.bernstein import line_curve
from app.services.decomposition import approx_convex_decompose, concavity, interior_angles, quadrangulate
from app.services.document_store import DocumentStore
from app.services.errors import BoundaryError, DomainError, TopologyError
from app.services.pipeline_service import build_quad_mesh, loops_from_document, refine_chains
from app.services.splines import preprocess_boundary
from app.services.topology import (
    QuadMesh, bridge_holes, bridge_vertex_count, build_discrete_boundary, corner_turns, domain_polygon,
    laplacian_smooth,
)
from test_splines import circle_loop, polygon_loop

SQUARE = [(0, 0), (1, 0), (1, 1), (0, 1)]
LSHAPE = [(0, 0), (2, 0), (2, 1), (1, 1), (1, 2), (0, 2)]
BOUNDARY_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'data', 'boundaries')


def chains_for(*loops):
    return preprocess_boundary(list(loops), PipelineConfig())


def grid_mesh(shift=(0.0, 0.0)) -> QuadMesh:
    """3x3 vertex grid over [0, 2]^2 with the centre vertex moved by `shift`."""
    vertices = np.array([(x, y) for y in range(3) for x in range(3)], dtype=float)
    vertices[4] += shift
    quads = [(y * 3 + x, y * 3 + x + 1, (y + 1) * 3 + x + 1, (y + 1) * 3 + x) for y in range(2) for x in range(2)]
    ring = [0, 1, 2, 5, 8, 7, 6, 3]
    curves = {(a, b): line_curve(vertices[a], vertices[b], 4) for a, b in zip(ring, ring[1:] + ring[:1])}
    return QuadMesh(vertices, quads, curves)


def test_square_boundary():
    boundary = build_discrete_boundary(chains_for(polygon_loop(SQUARE)))
    assert boundary.loops == [[0, 1, 2, 3]]
    assert boundary.is_bridged
    assert bridge_holes(boundary) is boundary
    assert boundary.edge_sources[(3, 0)] == (0, 3)


def test_self_intersection_reports_edges():
    bowtie = polygon_loop([(0, 0), (2, 2), (2, 0), (0, 1)])
    with pytest.raises(BoundaryError) as excinfo:
        build_discrete_boundary(chains_for(bowtie))
    assert excinfo.value.edges is not None


def test_hole_outside_outer_loop():
    chains = chains_for(polygon_loop(SQUARE), polygon_loop([(3, 3), (4, 3), (4, 4), (3, 4)], is_hole=True))
    with pytest.raises(BoundaryError):
        build_discrete_boundary(chains)


def test_bridging_annulus():
    chains = chains_for(circle_loop(0, 0, 2.0), circle_loop(0, 0, 0.8, is_hole=True))
    boundary = bridge_holes(build_discrete_boundary(chains))
    assert len(boundary.loops) == 1
    assert len(boundary.bridges) == 1
    assert boundary.twins
    for copy, original in boundary.twins.items():
        assert_allclose(boundary.points[copy], boundary.points[original])
    # every chain segment still labels exactly one directed edge
    labelled = [source for source in boundary.edge_sources.values() if source is not None]
    assert len(labelled) == len(set(labelled)) == sum(len(chain) for chain in boundary.chains)


def test_bridge_vertex_count():
    outer = np.array([(-5, -5), (5, -5), (5, 5), (-5, 5)], dtype=float)
    hole = np.array([(-1, -1), (1, -1), (1, 1), (-1, 1)], dtype=float)
    assert bridge_vertex_count(outer, hole, 4.0 * math.sqrt(2.0)) == 2


def test_angles_and_concavity():
    square = np.array(SQUARE, dtype=float)
    assert_allclose(interior_angles(square), math.pi / 2)
    assert_allclose(concavity(square), 0.0, atol=1e-12)
    lshape = np.array(LSHAPE, dtype=float)
    assert concavity(lshape).max() > 0.1
    assert interior_angles(lshape)[3] == pytest.approx(1.5 * math.pi)


def test_decomposition_of_lshape():
    boundary = bridge_holes(build_discrete_boundary(chains_for(polygon_loop(LSHAPE))))
    pieces = approx_convex_decompose(boundary, 0.1)
    assert len(pieces) >= 2
    assert all(piece.max_concavity <= 0.1 for piece in pieces)


def test_decomposition_needs_bridged_boundary():
    chains = chains_for(circle_loop(0, 0, 2.0), circle_loop(0, 0, 0.8, is_hole=True))
    with pytest.raises(TopologyError):
        approx_convex_decompose(build_discrete_boundary(chains), 0.1)


def test_square_mesh_is_valid_disk():
    mesh = build_quad_mesh(chains_for(polygon_loop(SQUARE)), PipelineConfig())
    mesh.validate()
    assert mesh.euler_characteristic() == 1
    assert not mesh.inverted_quads()
    assert all(len(set(quad)) == 4 for quad in mesh.quads)


def test_lshape_mesh_conforms():
    cfg = PipelineConfig()
    boundary = bridge_holes(build_discrete_boundary(chains_for(polygon_loop(LSHAPE))))
    mesh = quadrangulate(approx_convex_decompose(boundary, cfg.epsilon), boundary)
    mesh.validate()
    assert mesh.euler_characteristic() == 1
    smoothed = laplacian_smooth(mesh, cfg.delta)
    assert not smoothed.inverted_quads()
    assert_allclose(smoothed.vertices[smoothed.boundary_vertex_mask()], mesh.vertices[mesh.boundary_vertex_mask()])


def test_annulus_mesh_keeps_slit():
    chains = chains_for(circle_loop(0, 0, 2.0), circle_loop(0, 0, 0.8, is_hole=True))
    mesh = build_quad_mesh(chains, PipelineConfig())
    mesh.validate()
    assert mesh.euler_characteristic() == 1
    assert any(curve is None for curve in mesh.boundary_curves.values())


def test_smoothing_recentres_interior_vertex():
    mesh = laplacian_smooth(grid_mesh((0.3, -0.2)), 0.001)
    assert_allclose(mesh.vertices[4], (1.0, 1.0), atol=1e-12)
    assert mesh.smoothing_history[-1] < 0.001
    assert_allclose(mesh.vertices[[0, 2, 6, 8]], [(0, 0), (2, 0), (0, 2), (2, 2)])


def test_smoothing_rejects_bad_tolerance():
    with pytest.raises(DomainError):
        laplacian_smooth(grid_mesh(), 1.5)


def test_audit_counts_valences():
    audit = grid_mesh().audit()
    assert audit == {'elements': 4, 'irregular_vertices': 0, 'valence_histogram': {'4': 1}}


def test_validate_rejects_repeated_vertices():
    mesh = grid_mesh()
    mesh.quads[0] = (0, 1, 1, 3)
    with pytest.raises(TopologyError):
        mesh.validate()


def test_obj_export():
    text = grid_mesh().to_obj()
    lines = text.strip().splitlines()
    assert sum(line.startswith('v ') for line in lines) == 9
    assert 'f 1 2 5 4' in lines


def notch_mesh() -> QuadMesh:
    """3x3 grid with the top-middle boundary vertex pulled down to (1, 0.6); the centre vertex sits at (1, 0.3)."""
    vertices = np.array([(x, y) for y in range(3) for x in range(3)], dtype=float)
    vertices[7] = (1.0, 0.6)
    vertices[4] = (1.0, 0.3)
    quads = [(y * 3 + x, y * 3 + x + 1, (y + 1) * 3 + x + 1, (y + 1) * 3 + x) for y in range(2) for x in range(2)]
    ring = [0, 1, 2, 5, 8, 7, 6, 3]
    curves = {(a, b): line_curve(vertices[a], vertices[b], 4) for a, b in zip(ring, ring[1:] + ring[:1])}
    return QuadMesh(vertices, quads, curves)


def test_smoothing_keeps_quads_convex():
    mesh = notch_mesh()
    # the neighbour centroid (1, 0.65) lies above the notch tip
    smoothed = laplacian_smooth(mesh, 0.001)
    assert np.all(corner_turns(smoothed.vertices, np.array(smoothed.quads)) > 0.0)
    assert 0.3 < smoothed.vertices[4][1] < 0.6
    assert smoothed.vertices[4][0] == pytest.approx(1.0)


@pytest.mark.parametrize('name', ['annulus', 'two_holes'])
def test_hole_meshes_stay_in_domain(name):
    document = DocumentStore(BOUNDARY_DIR).load_boundary_document(name)
    chains = preprocess_boundary(loops_from_document(document), PipelineConfig())
    mesh = build_quad_mesh(chains, PipelineConfig())
    mesh.validate()
    assert not mesh.inverted_quads()
    domain = domain_polygon(mesh.chains)
    interior = mesh.vertices[mesh.interior_vertices()]
    assert np.all(shapely.contains_xy(domain, interior[:, 0], interior[:, 1]))
    for chain in mesh.chains:
        if chain.is_hole:
            hole = Polygon(np.vstack([segment.control_points[:1] for segment in chain.segments]))
            assert not np.any(shapely.contains_xy(hole, interior[:, 0], interior[:, 1]))


def test_refined_chains_keep_geometry():
    chains = chains_for(circle_loop(0, 0, 2.0), circle_loop(0, 0, 0.8, is_hole=True))
    refined = refine_chains(chains)
    for chain, finer in zip(chains, refined):
        assert len(finer) == 2 * len(chain)
        assert finer.is_hole == chain.is_hole
        assert_allclose(finer.segments[1].end, chain.segments[0].end, atol=1e-12)
        assert_allclose(finer.segments[0].evaluate([1.0]), chain.segments[0].evaluate([0.5]), atol=1e-12)
