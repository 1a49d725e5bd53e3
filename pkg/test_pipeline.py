#!/usr/bin/env python3
"""
End-to-end tests: shipped domains through every stage, rendering and the command line
"""

import asyncio
import os
import sys

import numpy as np
import pytest
from PIL import Image

# Add project root to path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from app.models.documents import LayoutDocument, PatchRecord
from app.models.pipeline_config import PipelineConfig
from app.services.document_store import DocumentStore
from app.services.errors import DocumentError, StageError
from app.services.pipeline_service import PipelineService, layout_from_document, run_pipeline
from app.services.patchfit import BezierPatch, c1_residual
from app.services.render_service import count_paths, fill_colors, render_png, render_svg
from app.services.validity import jacobian_coeffs
from main import EXIT_CONFIG_ERROR, main
from test_patchfit import identity_net

BOUNDARY_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'data', 'boundaries')
DOMAINS = ['square', 'lshape', 'annulus', 'two_holes']

store = DocumentStore(BOUNDARY_DIR)
_runs = {}


def run_domain(name: str) -> LayoutDocument:
    if name not in _runs:
        _runs[name] = run_pipeline(store.load_boundary_document(name), PipelineConfig())
    return _runs[name]


@pytest.mark.parametrize('name', DOMAINS)
def test_pipeline_on_shipped_domain(name):
    doc = run_domain(name)
    report = doc.report
    assert doc.stage == 'report'
    assert report.patch_count == len(doc.patches) == len(doc.mesh.quads)
    assert all(len(quad) == 4 for quad in doc.mesh.quads)
    assert all(record.valid for record in doc.patches)
    assert report.all_valid
    assert report.scaled_jacobian.min > 0.0
    assert report.scaled_jacobian.average >= 0.8
    assert report.condition_number.min >= 2.0 - 1e-9
    assert doc.provenance.residuals['c1'] <= 1e-12
    assert doc.provenance.residuals['g1'] < 1e-10
    assert doc.provenance.residuals['objective_final'] <= doc.provenance.residuals['objective_initial']
    if report.fallback_pieces == 0:
        assert set(report.valence_histogram) <= {'3', '4', '5'}
    assert report.global_seconds is not None and report.local_seconds is not None


def test_square_is_nearly_uniform():
    report = run_domain('square').report
    assert report.scaled_jacobian.min > 0.9
    assert report.scaled_jacobian.average > 0.99


def test_repaired_patches_keep_continuity():
    doc = run_domain('two_holes')
    layout = layout_from_document(doc)
    patches = [BezierPatch(np.array(record.net), index) for index, record in enumerate(doc.patches)]
    assert c1_residual(layout, patches) <= 1e-12


def test_pipeline_is_deterministic():
    boundary = store.load_boundary_document('lshape')
    first = run_pipeline(boundary, PipelineConfig(seed=3))
    second = run_pipeline(boundary, PipelineConfig(seed=3))
    assert first.without_timings() == second.without_timings()
    assert first.provenance.config_hash == PipelineConfig(seed=3).config_hash()


def test_stages_one_at_a_time(tmp_path):
    service = PipelineService(store)
    doc = service.preprocess(store.load_boundary_document('square'), PipelineConfig())
    with pytest.raises(DocumentError):
        service.segment(doc)
    doc = service.mesh(doc, str(tmp_path / 'mesh.obj'))
    assert doc.stage == 'mesh'
    assert 'f ' in (tmp_path / 'mesh.obj').read_text(encoding='utf-8')
    path = str(tmp_path / 'square.layout.json')
    store.save_layout(path, doc)
    doc = service.segment(store.load_layout(path), str(tmp_path / 'trace.csv'))
    assert (tmp_path / 'trace.csv').read_text(encoding='utf-8').startswith('iteration,value')
    doc = asyncio.run(service.fit(doc))
    assert doc.report is None
    doc = asyncio.run(service.check(doc))
    doc = asyncio.run(service.report(doc))
    assert doc.report.patch_count == len(doc.patches)
    assert set(doc.provenance.timings) == {'preprocess', 'mesh', 'segment', 'fit', 'check', 'report'}


def test_stage_errors_name_the_stage():
    service = PipelineService(store)
    doc = service.preprocess(store.load_boundary_document('square'), PipelineConfig())
    segments = doc.chains[0].segments
    # swapping two segments turns the square into a bowtie
    segments[2], segments[3] = segments[3], segments[2]
    with pytest.raises(StageError) as excinfo:
        service.mesh(doc)
    assert excinfo.value.stage == 'mesh'


def test_isocurve_drawing_counts_paths():
    doc = run_domain('lshape')
    patches = len(doc.patches)
    assert count_paths(render_svg(doc, 'isocurves', iso_count=3)) == patches * (2 * 3 + 4)
    assert count_paths(render_svg(doc, 'isocurves', iso_count=0)) == patches * 4
    partition = render_svg(doc, 'partition')
    assert count_paths(partition) == len(doc.curves)
    assert partition.startswith('<?xml')
    with pytest.raises(DocumentError):
        render_svg(doc, 'wireframe')


def test_identity_colormap_is_single_color():
    doc = LayoutDocument(name="unit", patches=[PatchRecord(net=identity_net(4).tolist())])
    svg = render_svg(doc, 'jacobian_colormap', grid=6)
    assert fill_colors(svg) == {'#ff0000'}
    assert svg.count('<polygon ') == 36


def test_png_colormap(tmp_path):
    path = str(tmp_path / 'annulus.png')
    image = render_png(run_domain('annulus'), path, size=200, grid=8)
    assert image.size == (200, 200)
    with Image.open(path) as saved:
        assert saved.format == 'PNG'
        assert saved.getpixel((0, 0)) == (255, 255, 255)


def test_cli_pipeline_and_render(tmp_path, capsys):
    layout = str(tmp_path / 'square.layout.json')
    boundary = os.path.join(BOUNDARY_DIR, 'square.json')
    assert asyncio.run(main(['pipeline', boundary, '-o', layout, '--grid', '10'])) == 0
    assert 'square' in capsys.readouterr().out
    loaded = store.load_layout(layout)
    assert loaded.config.grid == 10
    assert all(jacobian_coeffs(BezierPatch(np.array(record.net))).valid for record in loaded.patches)
    svg = str(tmp_path / 'square.svg')
    assert asyncio.run(main(['render', layout, '-o', svg, '--mode', 'partition'])) == 0
    assert os.path.getsize(svg) > 0
    assert asyncio.run(main(['info', layout])) == 0
    assert 'stage: report' in capsys.readouterr().out


def test_cli_stage_by_stage(tmp_path):
    layout = str(tmp_path / 'lshape.layout.json')
    boundary = os.path.join(BOUNDARY_DIR, 'lshape.json')
    assert asyncio.run(main(['preprocess', boundary, '-o', layout])) == 0
    for stage in ('mesh', 'segment', 'fit', 'check', 'report'):
        assert asyncio.run(main([stage, layout])) == 0
    assert store.load_layout(layout).stage == 'report'


def test_cli_exit_codes(tmp_path):
    boundary = os.path.join(BOUNDARY_DIR, 'square.json')
    output = str(tmp_path / 'out.json')
    assert asyncio.run(main(['pipeline', boundary, '-o', output, '--epsilon', '2.0'])) == EXIT_CONFIG_ERROR
    assert asyncio.run(main(['pipeline', str(tmp_path / 'missing.json'), '-o', output])) == EXIT_CONFIG_ERROR
    assert asyncio.run(main(['fit', str(tmp_path / 'missing.json')])) == EXIT_CONFIG_ERROR
    bowtie = tmp_path / 'bowtie.json'
    bowtie.write_text(
        '{"loops": [{"pieces": ['
        '{"degree": 1, "knots": [0, 0, 1, 1], "control_points": [[0, 0], [2, 2]]},'
        '{"degree": 1, "knots": [0, 0, 1, 1], "control_points": [[2, 2], [2, 0]]},'
        '{"degree": 1, "knots": [0, 0, 1, 1], "control_points": [[2, 0], [0, 1]]},'
        '{"degree": 1, "knots": [0, 0, 1, 1], "control_points": [[0, 1], [0, 0]]}]}]}',
        encoding='utf-8')
    assert asyncio.run(main(['pipeline', str(bowtie), '-o', output])) == 1
    with pytest.raises(SystemExit):
        asyncio.run(main(['nonsense']))
