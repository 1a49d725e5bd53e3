"""
Pipeline Service
Runs the parameterization stages on layout documents: boundary preprocessing, quad
mesh, segmentation curves, patch fitting, validity repair and the quality report.
Every stage reads and writes a LayoutDocument so stages can run one at a time.
"""

import asyncio
import logging
import time
from contextlib import contextmanager
from typing import List, Optional, Tuple

import numpy as np

from config import MESH_REFINEMENT_ATTEMPTS
from app.models.documents import (
    BoundaryDocument, BoundaryEdgeRecord, ChainRecord, CurveRecord, LayoutDocument, MeshRecord,
    PatchRecord, Provenance, QuadRecord, SegmentSourceRecord,
)
from app.models.pipeline_config import PipelineConfig
from app.services.bernstein import BezierCurve
from app.services.decomposition import approx_convex_decompose, quadrangulate
from app.services.document_store import DocumentStore
from app.services.errors import DocumentError, StageError, TopologyError
from app.services.patchfit import (
    BezierPatch, assemble_energy_system, build_patch, init_second_layer, solve_inner_points,
    tie_second_layers,
)
from app.services.quality import quality_report
from app.services.render_service import write_obj, write_trace_csv
from app.services.segmentation import (
    GlobalObjectiveConfig, PatchLayout, SegmentationCurve, assemble_layout, init_segmentation_curves,
    optimize_segmentation, validate_layout,
)
from app.services.splines import BoundaryLoop, BSplineCurve, SegmentChain, SegmentSource, preprocess_boundary
from app.services.topology import QuadMesh, bridge_holes, build_discrete_boundary, laplacian_smooth
from app.services.validity import RepairConfig, jacobian_coeffs, repair_patch

logger = logging.getLogger(__name__)

GLOBAL_STAGES = ('preprocess', 'mesh', 'segment')
LOCAL_STAGES = ('fit', 'check')


# -- Document conversions ----------------------------------------------------------


def loops_from_document(doc: BoundaryDocument) -> List[BoundaryLoop]:
    """Validated, orientation-normalized loops; the outer loop first."""
    loops = []
    for index, loop_model in enumerate(doc.loops):
        pieces = [BSplineCurve(piece.degree, np.array(piece.knots, dtype=float),
                               np.array(piece.control_points, dtype=float))
                  for piece in loop_model.pieces]
        loop = BoundaryLoop(pieces, is_hole=loop_model.orientation == 'hole')
        loop.validate(loop=index)
        loops.append(loop.normalized())
    return loops


def chains_to_records(chains: List[SegmentChain]) -> List[ChainRecord]:
    return [ChainRecord(is_hole=chain.is_hole,
                        segments=[segment.control_points.tolist() for segment in chain.segments],
                        sources=[SegmentSourceRecord(piece=source.piece, span=list(source.span))
                                 for source in chain.sources])
            for chain in chains]


def chains_from_records(records: List[ChainRecord]) -> List[SegmentChain]:
    return [SegmentChain([BezierCurve(np.array(points, dtype=float)) for points in record.segments],
                         [SegmentSource(source.piece, tuple(source.span)) for source in record.sources],
                         record.is_hole)
            for record in records]


def mesh_to_record(mesh: QuadMesh) -> MeshRecord:
    edges = [BoundaryEdgeRecord(start=a, end=b, control_points=None if curve is None else curve.control_points.tolist())
             for (a, b), curve in sorted(mesh.boundary_curves.items())]
    return MeshRecord(vertices=mesh.vertices.tolist(), quads=[list(quad) for quad in mesh.quads],
                      boundary_edges=edges, fallback_pieces=mesh.fallback_pieces,
                      smoothing_history=list(mesh.smoothing_history))


def mesh_from_record(record: MeshRecord, chains: Optional[List[SegmentChain]] = None) -> QuadMesh:
    curves = {(edge.start, edge.end): None if edge.control_points is None
              else BezierCurve(np.array(edge.control_points, dtype=float))
              for edge in record.boundary_edges}
    return QuadMesh(np.array(record.vertices, dtype=float), [tuple(quad) for quad in record.quads],
                    curves, chains or [], record.fallback_pieces, list(record.smoothing_history))


def layout_from_document(doc: LayoutDocument) -> PatchLayout:
    if doc.mesh is None or not doc.curves:
        raise DocumentError("layout document has no segmentation curves; run the segment stage first")
    mesh = mesh_from_record(doc.mesh, chains_from_records(doc.chains))
    curves = [SegmentationCurve(BezierCurve(np.array(record.control_points, dtype=float)),
                                record.start, record.end, record.boundary)
              for record in doc.curves]
    layout = assemble_layout(mesh, curves)
    stored = [tuple(record.curves) for record in doc.quads]
    if stored and stored != [tuple(item) for item in layout.quad_curves]:
        raise DocumentError("quad-to-curve incidence does not match the mesh")
    return layout


def patches_from_document(doc: LayoutDocument) -> List[BezierPatch]:
    if not doc.patches:
        raise DocumentError("layout document has no patches; run the fit stage first")
    return [BezierPatch(np.array(record.net, dtype=float), index) for index, record in enumerate(doc.patches)]


# -- Stages ------------------------------------------------------------------------


def refine_chains(chains: List[SegmentChain]) -> List[SegmentChain]:
    """Every segment of every chain split in two at its parameter midpoint."""
    refined = []
    for chain in chains:
        for index in reversed(range(len(chain))):
            chain = chain.split_segment(index, 2)
        refined.append(chain)
    return refined


def build_quad_mesh(chains: List[SegmentChain], cfg: PipelineConfig,
                    attempts: int = MESH_REFINEMENT_ATTEMPTS) -> QuadMesh:
    """
    Discrete boundary, hole bridges, quasi-convex pieces, templates, smoothing.

    A mesh with inverted quads or with interior vertices outside the curved domain
    is rebuilt on a boundary with every segment halved, up to `attempts` times.
    Inverted quads left after that raise TopologyError.
    """
    for attempt in range(attempts + 1):
        boundary = bridge_holes(build_discrete_boundary(chains))
        pieces = approx_convex_decompose(boundary, cfg.epsilon)
        mesh = laplacian_smooth(quadrangulate(pieces, boundary), cfg.delta, cfg.smoothing_max_iterations)
        inverted = mesh.inverted_quads()
        outside = mesh.outside_vertices()
        if not inverted and not outside:
            return mesh
        if attempt == attempts:
            break
        logger.warning(f"Mesh attempt {attempt + 1}: {len(inverted)} inverted quad(s), "
                       f"{len(outside)} vertex(es) outside the domain; refining the boundary")
        chains = refine_chains(chains)
    if inverted:
        raise TopologyError(f"quad mesh still has {len(inverted)} inverted quad(s) "
                            f"after {attempts} boundary refinement(s)")
    logger.warning(f"Interior vertices {outside[:10]} remain outside the curved domain")
    return mesh


class PipelineService:
    """Stage runner; each stage returns an updated copy of the layout document."""

    def __init__(self, store: Optional[DocumentStore] = None):
        self.store = store or DocumentStore()

    @contextmanager
    def _stage(self, doc: LayoutDocument, name: str):
        started = time.perf_counter()
        logger.info(f"Stage '{name}' started")
        try:
            yield
        except StageError:
            raise
        except Exception as e:
            logger.error(f"Stage '{name}' failed: {e}")
            raise StageError(name, e) from e
        elapsed = time.perf_counter() - started
        doc.provenance.timings[name] = elapsed
        doc.stage = name
        logger.info(f"Stage '{name}' finished in {elapsed:.3f} s")

    def preprocess(self, boundary: BoundaryDocument, cfg: PipelineConfig) -> LayoutDocument:
        doc = LayoutDocument(name=boundary.name, config=cfg,
                             provenance=Provenance(config_hash=cfg.config_hash(), seed=cfg.seed))
        with self._stage(doc, 'preprocess'):
            chains = preprocess_boundary(loops_from_document(boundary), cfg)
            doc.chains = chains_to_records(chains)
            doc.degree = chains[0].degree
        return doc

    def mesh(self, doc: LayoutDocument, dump_path: Optional[str] = None) -> LayoutDocument:
        if not doc.chains:
            raise DocumentError("layout document has no boundary chains; run the preprocess stage first")
        doc = doc.model_copy(deep=True)
        with self._stage(doc, 'mesh'):
            mesh = build_quad_mesh(chains_from_records(doc.chains), doc.config)
            doc.chains = chains_to_records(mesh.chains)
            doc.mesh = mesh_to_record(mesh)
            if mesh.fallback_pieces:
                doc.provenance.warnings.append(f"fallback quadrangulation used for {mesh.fallback_pieces} piece(s)")
            if dump_path:
                write_obj(mesh, dump_path)
        return doc

    def segment(self, doc: LayoutDocument, trace_path: Optional[str] = None) -> LayoutDocument:
        if doc.mesh is None:
            raise DocumentError("layout document has no quad mesh; run the mesh stage first")
        doc = doc.model_copy(deep=True)
        with self._stage(doc, 'segment'):
            mesh = mesh_from_record(doc.mesh, chains_from_records(doc.chains))
            layout = init_segmentation_curves(mesh, doc.degree)
            layout = optimize_segmentation(layout, GlobalObjectiveConfig.from_pipeline(doc.config))
            validate_layout(layout)
            doc.curves = [CurveRecord(start=item.start, end=item.end, boundary=item.boundary,
                                      control_points=item.curve.control_points.tolist())
                          for item in layout.curves]
            doc.quads = [QuadRecord(curves=list(curves), reversed=list(flags))
                         for curves, flags in zip(layout.quad_curves, layout.quad_reversed)]
            doc.provenance.residuals['objective_initial'] = float(layout.objective_initial)
            doc.provenance.residuals['objective_final'] = float(layout.objective_final)
            if trace_path:
                write_trace_csv(layout.trace, trace_path)
        return doc

    async def fit(self, doc: LayoutDocument) -> LayoutDocument:
        layout = layout_from_document(doc)
        doc = doc.model_copy(deep=True)
        cfg = doc.config
        with self._stage(doc, 'fit'):
            patches = await asyncio.gather(*(
                asyncio.to_thread(lambda q=q: init_second_layer(build_patch(layout, q)))
                for q in range(len(layout.quad_curves))))
            tied = tie_second_layers(layout, list(patches))
            system = assemble_energy_system(layout.degree, float(cfg.tau1), float(cfg.tau2))
            solved = await asyncio.gather(*(asyncio.to_thread(solve_inner_points, patch, system)
                                            for patch in tied.patches))
            doc.patches = [PatchRecord(net=patch.net.tolist(), valid=jacobian_coeffs(patch).valid)
                           for patch in solved]
            doc.provenance.residuals['c1'] = tied.c1_residual
            doc.provenance.residuals['g1'] = tied.g1_residual
            doc.report = None
        return doc

    async def check(self, doc: LayoutDocument) -> LayoutDocument:
        patches = patches_from_document(doc)
        doc = doc.model_copy(deep=True)
        cfg = doc.config
        repair_cfg = RepairConfig.from_pipeline(cfg)
        with self._stage(doc, 'check'):
            outcomes = await asyncio.gather(*(
                asyncio.to_thread(repair_patch, patch, repair_cfg, float(cfg.tau1), float(cfg.tau2))
                for patch in patches))
            records = []
            for index, outcome in enumerate(outcomes):
                records.append(PatchRecord(net=outcome.patch.net.tolist(), valid=outcome.success,
                                           repaired=outcome.invoked and outcome.success,
                                           repair_failed=outcome.invoked and not outcome.success))
                if outcome.invoked and not outcome.success:
                    doc.provenance.warnings.append(f"repair failed for patch {index}")
            doc.patches = records
            failed = sum(record.repair_failed for record in records)
            logger.info(f"Validity: {sum(record.valid for record in records)}/{len(records)} valid, "
                        f"{sum(record.repaired for record in records)} repaired, {failed} failed")
        return doc

    async def report(self, doc: LayoutDocument) -> LayoutDocument:
        patches = patches_from_document(doc)
        doc = doc.model_copy(deep=True)
        with self._stage(doc, 'report'):
            audit = mesh_from_record(doc.mesh).audit() if doc.mesh is not None else {}
            report = await asyncio.to_thread(
                quality_report, patches, doc.config.grid, doc.name,
                [i for i, record in enumerate(doc.patches) if record.repaired],
                [i for i, record in enumerate(doc.patches) if record.repair_failed],
                doc.mesh.fallback_pieces if doc.mesh is not None else 0, audit)
            timings = doc.provenance.timings
            if all(stage in timings for stage in GLOBAL_STAGES + LOCAL_STAGES):
                report.global_seconds = sum(timings[stage] for stage in GLOBAL_STAGES)
                report.local_seconds = sum(timings[stage] for stage in LOCAL_STAGES)
            doc.report = report
        return doc

    async def run(self, boundary: BoundaryDocument, cfg: PipelineConfig,
                  dump_path: Optional[str] = None, trace_path: Optional[str] = None) -> LayoutDocument:
        """All stages in order."""
        doc = self.preprocess(boundary, cfg)
        doc = self.mesh(doc, dump_path)
        doc = self.segment(doc, trace_path)
        doc = await self.fit(doc)
        doc = await self.check(doc)
        return await self.report(doc)


def load_boundary(path: str, store: Optional[DocumentStore] = None) -> List[BoundaryLoop]:
    """Parsed, schema-validated and orientation-normalized loops of a boundary file."""
    document = (store or DocumentStore()).load_boundary_document(path)
    return loops_from_document(document)


def run_pipeline(doc: BoundaryDocument, cfg: Optional[PipelineConfig] = None) -> LayoutDocument:
    """Synchronous entry point; must not be called from a running event loop."""
    return asyncio.run(PipelineService().run(doc, cfg or PipelineConfig()))


def save_layout(path: str, doc: LayoutDocument, store: Optional[DocumentStore] = None):
    (store or DocumentStore()).save_layout(path, doc)


def load_layout(path: str, store: Optional[DocumentStore] = None) -> LayoutDocument:
    return (store or DocumentStore()).load_layout(path)


def layout_summary(doc: LayoutDocument) -> Tuple[str, ...]:
    """Short human-readable lines about a document's content."""
    lines = [f"name: {doc.name or '-'}", f"stage: {doc.stage}", f"degree: {doc.degree}",
             f"chains: {len(doc.chains)} ({sum(len(chain.segments) for chain in doc.chains)} segments)"]
    if doc.mesh is not None:
        lines.append(f"quads: {len(doc.mesh.quads)}, vertices: {len(doc.mesh.vertices)}")
    if doc.curves:
        lines.append(f"curves: {len(doc.curves)} ({sum(not c.boundary for c in doc.curves)} interior)")
    if doc.patches:
        lines.append(f"patches: {len(doc.patches)} ({sum(p.valid for p in doc.patches)} valid)")
    for key, value in sorted(doc.provenance.residuals.items()):
        lines.append(f"{key}: {value:.3e}")
    return tuple(lines)
