"""End-to-end scene encoding and decoding."""

from __future__ import annotations

import logging
import lzma
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, Optional, Sequence

import numpy as np

from ..core import OmgGaussianSet, SourceGaussianSet
from ..field import DistillConfig, FieldArch, distill_fit, export_decoded
from ..importance import ImportanceReport, TAU_PRESETS, importance_report, validate_tau
from ..rasterizer import render_with_stats
from ..svq import GROUP_DIMS, GROUPS, GroupConfig, SvqConfig, apply_groups, group_vectors, quantize_attributes
from .container import COMPONENTS, ContainerLayout, SceneParts, pack_payload, unpack
from .positions import dequantize_positions, morton_permutation, quantize_positions

log = logging.getLogger(__name__)

POSITION_BITS = 48


@dataclass(frozen=True)
class PipelineConfig:
    """Resolved encoder settings.

    ``tau=None`` disables pruning; ``svq=None`` stores the quantizable
    attributes as float32 instead of codebook indices.
    """

    tau: Optional[float] = TAU_PRESETS["xs"]
    lam: float = 0.5
    k: int = 8
    svq: Optional[SvqConfig] = field(default_factory=SvqConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    background: tuple = (0.0, 0.0, 0.0)
    threads: int = 1
    seed: int = 0

    def validate(self) -> "PipelineConfig":
        if self.tau is not None:
            validate_tau(self.tau)
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.k < 1:
            raise ValueError("K must be >= 1")
        if self.svq is not None:
            self.svq.validate()
        if self.distill.iterations < 0 or self.distill.batch_size < 1:
            raise ValueError("distillation iterations must be >= 0 and batch size >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["background"] = list(self.background)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        if d.get("svq") is not None:
            s = dict(d["svq"])
            for g in GROUPS:
                if g in s and isinstance(s[g], dict):
                    s[g] = GroupConfig(**s[g])
            d["svq"] = SvqConfig(**s)
        if "distill" in d:
            dd = dict(d["distill"])
            if "arch" in dd and isinstance(dd["arch"], dict):
                dd["arch"] = FieldArch(**dd["arch"])
            if "loss_weights" in dd:
                dd["loss_weights"] = tuple(dd["loss_weights"])
            d["distill"] = DistillConfig(**dd)
        if "background" in d:
            d["background"] = tuple(d["background"])
        return cls(**d)


@dataclass
class SizeReport:
    count: int
    bits_per_gaussian: Dict[str, int]
    component_bytes: Dict[str, int]
    component_lzma_bytes: Dict[str, int]
    header_bytes: int
    crc_bytes: int
    payload_bytes: int
    file_bytes: int

    @property
    def pre_entropy_bits(self) -> int:
        return sum(self.bits_per_gaussian.values())

    def table(self) -> str:
        lines = [f"Gaussians: {self.count}",
                 f"{'component':<11}{'bits/G':>8}{'raw bytes':>12}{'lzma bytes':>12}"]
        for c in COMPONENTS:
            bits = self.bits_per_gaussian.get(c)
            lines.append(f"{c:<11}{'' if bits is None else bits:>8}{self.component_bytes.get(c, 0):>12}"
                         f"{self.component_lzma_bytes.get(c, 0):>12}")
        lines.append(f"{'header':<11}{'':>8}{self.header_bytes + self.crc_bytes:>12}")
        lines.append(f"{'total':<11}{self.pre_entropy_bits:>8}{self.payload_bytes:>12}{self.file_bytes:>12}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "components": [
                {"name": c, "bits_per_gaussian": self.bits_per_gaussian.get(c),
                 "bytes": self.component_bytes.get(c, 0), "lzma_bytes": self.component_lzma_bytes.get(c, 0)}
                for c in COMPONENTS
            ],
            "pre_entropy_bits_per_gaussian": self.pre_entropy_bits,
            "header_bytes": self.header_bytes, "crc_bytes": self.crc_bytes,
            "payload_bytes": self.payload_bytes, "file_bytes": self.file_bytes,
        }


def stream_bits(svq: Optional[dict]) -> Dict[str, int]:
    """Fixed-width bits per Gaussian for each component before entropy coding."""
    bits = {"Position": POSITION_BITS}
    names = {"scale": "Scale", "rotation": "Rotation", "appearance": "Appearance"}
    for g in GROUPS:
        if svq is None:
            bits[names[g]] = 32 * GROUP_DIMS[g]
        else:
            gc = svq[g] if isinstance(svq[g], GroupConfig) else GroupConfig(**svq[g])
            bits[names[g]] = gc.partitions(GROUP_DIMS[g]) * gc.index_bits
    return bits


def size_report(payload: bytes, layout: ContainerLayout, count: int, svq_cfg) -> SizeReport:
    comp = layout.component_bytes()
    lz = {}
    off = layout.header_bytes
    chunks: Dict[str, list] = {c: [] for c in COMPONENTS}
    for s in layout.streams:
        chunks.setdefault(s.component, []).append(payload[off:off + s.length])
        off += s.length
    for c, parts in chunks.items():
        blob = b"".join(parts)
        lz[c] = len(lzma.compress(blob, format=lzma.FORMAT_XZ, preset=9)) if blob else 0
    return SizeReport(count, stream_bits(svq_cfg), comp, lz, layout.header_bytes, layout.crc_bytes,
                      layout.payload_bytes, layout.file_bytes)


@dataclass
class EncodeResult:
    data: bytes
    scene: OmgGaussianSet
    parts: SceneParts
    report: SizeReport
    importance: Optional[ImportanceReport] = None


def score_importance(omg: OmgGaussianSet, cameras: Sequence, config: PipelineConfig, tau=None) -> ImportanceReport:
    decoded = export_decoded(omg)
    _, stats = render_with_stats(decoded, cameras, config.background, threads=config.threads)
    return importance_report(stats, omg.positions, omg.static_features, omg.field.aabb,
                             lam=config.lam, k=config.k, tau=config.tau if tau is None else tau)


def _svq_dict(svq: Optional[SvqConfig]):
    if svq is None:
        return None
    return {g: asdict(svq.group(g)) for g in GROUPS}


def compress(omg: OmgGaussianSet, cameras: Sequence = (), config: PipelineConfig = PipelineConfig(),
             importance: Optional[ImportanceReport] = None) -> EncodeResult:
    """Prune, quantize and pack an already-fitted compact scene.

    A precomputed ``importance`` report may be passed to reuse render
    statistics across thresholds; its scores are re-thresholded at
    ``config.tau``.
    """
    config.validate()
    if omg.field is None:
        raise ValueError("scene has no field weights")
    aabb = np.asarray(omg.field.aabb, dtype=np.float64)
    report = None
    if config.tau is not None:
        if importance is None:
            if not cameras:
                raise ValueError("pruning needs at least one camera")
            report = score_importance(omg, cameras, config)
        else:
            from ..importance import prune_cdf
            report = replace(importance, tau=config.tau, keep_mask=prune_cdf(importance.importance, config.tau))
        omg = omg.subset(np.flatnonzero(report.keep_mask))
        log.info("pruned to %d Gaussians at tau=%s", omg.count, config.tau)

    qpos = quantize_positions(omg.positions, aabb)
    order = morton_permutation(qpos)
    qpos = qpos[order]
    omg = omg.subset(order)
    fw = omg.field.to_half()
    omg = replace(omg, positions=dequantize_positions(qpos, aabb), field=fw)

    codes = raw = None
    if config.svq is not None:
        omg, codes = quantize_attributes(omg, config.svq)
    else:
        raw = {k: v.astype(np.float32) for k, v in group_vectors(omg).items()}
        omg = _apply_raw(omg, raw)

    header_cfg = {"tau": config.tau, "lambda": config.lam, "K": config.k, "seed": config.seed,
                  "field_arch": asdict(fw.arch), "pipeline": config.to_dict()}
    parts = SceneParts(aabb, qpos, fw, codes, raw, header_cfg)
    payload, layout = pack_payload(parts)
    data = lzma.compress(payload, format=lzma.FORMAT_XZ, preset=9)
    layout.file_bytes = len(data)
    rep = size_report(payload, layout, omg.count, _svq_dict(config.svq))
    return EncodeResult(data, omg, parts, rep, report)


def _apply_raw(omg: OmgGaussianSet, raw: Dict[str, np.ndarray]) -> OmgGaussianSet:
    from ..core import normalize_quaternion_array
    app = raw["appearance"].astype(np.float64)
    return replace(omg, log_scales=raw["scale"].astype(np.float64),
                   rotations=normalize_quaternion_array(raw["rotation"].astype(np.float64)),
                   static_features=app[:, :3], view_features=app[:, 3:])


def encode_scene(source: SourceGaussianSet, cameras: Sequence = (),
                 config: PipelineConfig = PipelineConfig()) -> EncodeResult:
    """Distill ``source`` into the compact form, then prune, quantize and pack it."""
    config.validate()
    fit = distill_fit(source, config.distill)
    log.info("distillation loss %.4g (best at iteration %d)", fit.final_loss, fit.best_iteration)
    return compress(fit.scene, cameras, config)


def parts_to_scene(parts: SceneParts) -> OmgGaussianSet:
    positions = dequantize_positions(parts.qpos, parts.aabb)
    n = parts.count
    base = OmgGaussianSet(positions, np.zeros((n, 3)), np.tile([1.0, 0, 0, 0], (n, 1)),
                          np.zeros((n, 3)), np.zeros((n, 3)), parts.field)
    if parts.codes is not None:
        return apply_groups(base, parts.codes)
    return _apply_raw(base, parts.raw)


def decode_scene(data: bytes) -> OmgGaussianSet:
    parts, _ = unpack(data)
    return parts_to_scene(parts)


def inspect(data: bytes) -> SizeReport:
    """Size breakdown of an encoded file."""
    from .container import parse_payload, read_payload
    payload = read_payload(data)
    n, _, cfg, _, layout = parse_payload(payload)
    layout.file_bytes = len(data)
    return size_report(payload, layout, n, cfg.get("svq"))
