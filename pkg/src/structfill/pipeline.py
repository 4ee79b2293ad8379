"""End-to-end object removal: contours, structure curves, patch propagation, then exemplar fill."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from . import propagation as prop
from .config import JobConfig
from .contours import ContourHierarchy, EdgeSignal, GpbParams, build_hierarchy, gpb
from .fill import FillResult, fill_remaining
from .imagery import MaskRegion, RasterImage, load_image, load_mask, mask_from_array, save_image, to_channels
from .structure import EdgePair, EdgeTerminal, StructureCurve, collect_terminals, generate_curve, match_pairs

log = logging.getLogger(__name__)


class StageError(Exception):
    """A stage failed; carries the stage name and the partial report."""

    def __init__(self, stage: str, message: str, report: "JobReport"):
        super().__init__(f"{stage}: {message}")
        self.stage = stage
        self.report = report


@dataclass
class JobReport:
    stage_seconds: dict[str, float] = field(default_factory=dict)
    terminals: int = 0
    pairs: int = 0
    curves: int = 0
    anchors: int = 0
    energy: Optional[float] = None
    fill_iterations: int = 0
    warnings: list[str] = field(default_factory=list)
    seed: int = 0
    structure: bool = True
    failed_stage: Optional[str] = None
    error: Optional[str] = None

    def to_json(self) -> str:
        d = asdict(self)
        d["stage_seconds"] = {k: round(v, 4) for k, v in self.stage_seconds.items()}
        return json.dumps(d, sort_keys=False)


@dataclass
class PipelineTrace:
    """Intermediate products kept for debugging and inspection."""

    signal: Optional[EdgeSignal] = None
    hierarchy: Optional[ContourHierarchy] = None
    terminals: list[EdgeTerminal] = field(default_factory=list)
    pairs: list[EdgePair] = field(default_factory=list)
    curves: list[StructureCurve] = field(default_factory=list)
    anchors: list[list[prop.AnchorPoint]] = field(default_factory=list)
    candidates: list[prop.CandidatePatch] = field(default_factory=list)
    graph: Optional[prop.StructureGraph] = None
    assignments: list[prop.PatchAssignment] = field(default_factory=list)
    propagated: Optional[np.ndarray] = None  # image after propagation, before fill
    remaining: Optional[np.ndarray] = None  # hole pixels left for the fill
    fill: Optional[FillResult] = None
    energy_rows: list[tuple[int, int, float]] = field(default_factory=list)  # (curve or -1, iteration, energy)


def prefill_nearest(img, hole: np.ndarray) -> np.ndarray:
    """Copy of the image with every hole pixel replaced by its nearest known pixel.

    Keeps the hole from reading as a flat patch with edges along its rim.
    """
    data = np.asarray(img)
    _, (iy, ix) = ndimage.distance_transform_edt(hole, return_indices=True)
    return data[iy, ix]


class _Stage:
    def __init__(self, name: str, report: JobReport):
        self.name = name
        self.report = report

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.report.stage_seconds[self.name] = time.perf_counter() - self.t0
        if exc is not None and not isinstance(exc, StageError):
            self.report.failed_stage = self.name
            self.report.error = f"{type(exc).__name__}: {exc}"
            raise StageError(self.name, str(exc), self.report) from exc
        return False


def complete(img: RasterImage, mask: MaskRegion, config: JobConfig, on_fill_step=None) -> tuple[RasterImage, JobReport, PipelineTrace]:
    """Run every stage in memory. Raises StageError naming the stage that failed."""
    report = JobReport(seed=config.seed, structure=config.structure)
    trace = PipelineTrace()
    data = np.asarray(img)[:, :, :3]
    hole = np.asarray(mask, dtype=bool)
    source = ~hole
    l = config.patch_size
    state = prop.PropagationState.from_inputs(data, hole)

    if config.structure:
        with _Stage("contours", report):
            stack = to_channels(prefill_nearest(data, hole))
            params = GpbParams(config.sigma, config.beta, config.gamma, config.orientations, config.radius)
            trace.signal = gpb(stack, params, known=source)
            trace.hierarchy = build_hierarchy(trace.signal, hole)

        with _Stage("structure", report):
            trace.terminals = collect_terminals(trace.hierarchy, hole, dt=config.dt, delta_T=config.delta_T)
            trace.pairs = match_pairs(
                trace.terminals, data, config.eps_L, config.delta_H, config.effective_kappa_u, math.radians(config.max_turn)
            )
            dist_out = ndimage.distance_transform_edt(source)
            for pair in trace.pairs:
                curve = generate_curve(pair, hole, dist_out=dist_out)
                if curve is None:
                    report.warnings.append(f"curve dropped between {pair.source.hit_point} and {pair.target.hit_point}")
                    continue
                curve.id = len(trace.curves)
                trace.curves.append(curve)
            report.terminals = len(trace.terminals)
            report.pairs = len(trace.pairs)
            report.curves = len(trace.curves)

        if trace.curves:
            with _Stage("propagation", report):
                _propagate(data, hole, state, config, report, trace)

    trace.propagated = np.clip(np.rint(state.image), 0, 255).astype(np.uint8)
    with _Stage("fill", report):
        remaining = ~state.known
        trace.remaining = remaining.copy()
        if remaining.any():
            result = fill_remaining(
                state.image, remaining, state.confidence, l, config.search, source=source, on_step=on_fill_step
            )
        else:
            result = FillResult(RasterImage(trace.propagated), state.confidence, [])
        trace.fill = result
        report.fill_iterations = result.iterations
    out = np.asarray(result.image).copy()
    # the known region is never touched; assert it rather than trust it
    if not np.array_equal(out[source], data[source]):
        raise StageError("fill", "source pixels changed", report)
    return RasterImage(out), report, trace


def _propagate(data, hole, state, config: JobConfig, report: JobReport, trace: PipelineTrace) -> None:
    l = config.patch_size
    trace.candidates = prop.collect_candidates(data, hole, l, config.effective_band, config.m_max, config.seed)
    trace.anchors = [prop.place_anchors(c, l, c.id) for c in trace.curves]
    report.anchors = sum(len(a) for a in trace.anchors)
    graph = prop.build_graph(trace.anchors, l)
    trace.graph = graph
    energy = 0.0
    if graph.merged == 0:
        # every chain is scored against the untouched input, then all are pasted
        for cid, anchors in enumerate(trace.anchors):
            res = prop.optimize_chain(anchors, trace.candidates, state, literal=config.literal_energy)
            trace.assignments.append(res)
            energy += res.total_energy
            trace.energy_rows.append((cid, 0, res.total_energy))
        for anchors, res in zip(trace.anchors, trace.assignments):
            prop.paste_assignment(state, anchors, res, trace.candidates)
    else:
        res = prop.optimize_graph(
            graph, trace.candidates, state, config.delta, config.max_iter, config.damping, literal=config.literal_energy
        )
        trace.assignments.append(res)
        energy = res.total_energy
        trace.energy_rows.extend((-1, k + 1, e) for k, e in enumerate(res.trace))
        if res.warning:
            report.warnings.append(res.warning)
        prop.paste_assignment(state, graph.vertices, res, trace.candidates)
    report.energy = energy


def run_pipeline(config: JobConfig) -> tuple[RasterImage, JobReport]:
    """Load inputs, complete the image, write the output and any debug artifacts.

    Loading or writing problems raise ImageError; stage failures raise StageError.
    """
    from .debug import FillSnapshots, emit_debug

    img = load_image(config.input)
    mask = load_mask(config.mask, (img.width, img.height))
    snaps = FillSnapshots(config.debug_dir, config.snapshot_every) if config.debug_dir else None
    out, report, trace = complete(img, mask, config, on_fill_step=snaps)
    save_image(out, config.output)
    if config.debug_dir:
        emit_debug(trace, img, mask, config.debug_dir)
    return out, report


def complete_arrays(img, hole, config: JobConfig | None = None) -> tuple[RasterImage, JobReport, PipelineTrace]:
    """Convenience wrapper for in-memory arrays."""
    config = config or JobConfig()
    raster = img if isinstance(img, RasterImage) else RasterImage(np.asarray(img))
    if raster.channels != 3:
        raster = RasterImage(np.repeat(raster.data[:, :, :1], 3, axis=2) if raster.channels == 1 else raster.data[:, :, :3])
    mask = mask_from_array(hole, (raster.width, raster.height))
    return complete(raster, mask, config)

