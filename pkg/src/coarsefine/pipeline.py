"""End-to-end coarse-to-fine registration and dataset evaluation."""

from __future__ import annotations

import dataclasses
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import coarse_match, fine_match, grouping, transport
from .descriptors import FeatureSet, compute_descriptors, load_features, standardize_pair
from .fine_match import PointCorrespondences
from .geometry import NeighborIndex, RigidTransform, as_points, voxel_downsample
from .io import read_points, read_pose
from .metrics import (TAU_1, TAU_3, PairEvaluation, gt_correspondences, inlier_ratio, rmse,
                      rte_rre, summarize)
from .registration import DegenerateError, RegistrationResult, ransac, ransac_points


class StageError(RuntimeError):
    """A pipeline stage failed; the message starts with the stage name."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


class ManifestError(ValueError):
    pass


@dataclass
class PipelineConfig:
    voxel_fine: float = 0.025
    voxel_coarse: float | None = None
    point_radius: float | None = None
    node_radius: float | None = None
    point_scales: tuple = (1.0, 1.5)
    node_scales: tuple = (0.4, 0.8, 1.2, 1.8)
    slack_z: float = 0.0
    score_scale: float = 10.0
    sinkhorn_iters: int = 100
    sinkhorn_tol: float = 1e-9
    tau_c: float = 0.2
    tau_m: int = 200
    patch_size: int = 64
    tau_f: float = 0.05
    tau_p: float | None = None
    ransac_iters: int = 50_000
    inlier_tau: float | None = None
    ransac_confidence: float = 0.9999
    n_samples: int = 5000
    seed: int = 0

    def __post_init__(self):
        v = self.voxel_fine
        if self.voxel_coarse is None:
            self.voxel_coarse = 4.0 * v
        if self.point_radius is None:
            self.point_radius = 5.0 * v
        if self.node_radius is None:
            self.node_radius = 2.5 * self.voxel_coarse
        if self.tau_p is None:
            self.tau_p = 2.0 * v
        if self.inlier_tau is None:
            self.inlier_tau = 2.0 * v
        self.point_scales = tuple(float(v) for v in np.atleast_1d(self.point_scales))
        self.node_scales = tuple(float(v) for v in np.atleast_1d(self.node_scales))
        self.validate()

    def validate(self):
        for name in ("voxel_fine", "voxel_coarse", "point_radius", "node_radius", "score_scale",
                     "tau_p", "inlier_tau"):
            if not getattr(self, name) > 0:
                raise ValueError(f"config: {name} must be positive")
        for name in ("point_scales", "node_scales"):
            scales = getattr(self, name)
            if not scales or min(scales) <= 0:
                raise ValueError(f"config: {name} must be a non-empty list of positive factors")
        if not self.voxel_coarse > self.voxel_fine:
            raise ValueError("config: voxel_coarse must exceed voxel_fine")
        if not 0 < self.tau_c < 1:
            raise ValueError("config: tau_c must lie in (0, 1)")
        for name in ("sinkhorn_iters", "patch_size", "ransac_iters"):
            if getattr(self, name) < 1:
                raise ValueError(f"config: {name} must be >= 1")
        if self.tau_m < 0 or self.n_samples < 0:
            raise ValueError("config: tau_m and n_samples must be non-negative")
        if not 0 < self.ransac_confidence < 1:
            raise ValueError("config: ransac_confidence must lie in (0, 1)")

    @property
    def point_radii(self) -> tuple:
        return tuple(self.point_radius * f for f in self.point_scales)

    @property
    def node_radii(self) -> tuple:
        return tuple(self.node_radius * f for f in self.node_scales)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ", ".join(repr(v) for v in value)
            else:
                value = repr(value)
            lines.append(f"{f.name} = {value}\n")
        return "".join(lines)

    @classmethod
    def from_text(cls, text: str, **overrides) -> "PipelineConfig":
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if not sep or key not in types:
                raise ValueError(f"config line {lineno}: unknown or malformed entry {line!r}")
            values[key] = _parse_value(raw, types[key])
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @classmethod
    def from_file(cls, path, **overrides) -> "PipelineConfig":
        return cls.from_text(Path(path).read_text(), **overrides)


def _parse_value(raw: str, typ: str):
    if raw == "None":
        return None
    if typ == "tuple":
        return tuple(float(v) for v in raw.split(",") if v.strip())
    if typ.startswith("int"):
        return int(raw)
    return float(raw)


@dataclass
class PairResult:
    """Everything ``register_pair`` produced; indices refer to the raw input clouds."""

    correspondences: PointCorrespondences
    sampled: PointCorrespondences
    registration: RegistrationResult
    coarse: coarse_match.CoarseCorrespondences
    node_indices: tuple
    stats: dict = field(default_factory=dict)


def _stage(name):
    def wrap(fn):
        def inner(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except StageError:
                raise
            except Exception as exc:  # noqa: BLE001 - re-raised with the stage tag
                raise StageError(name, str(exc)) from exc
        return inner
    return wrap


@_stage("downsample")
def _downsample(cfg, x, y):
    x, y = as_points(x, "source"), as_points(y, "target")
    if len(x) == 0 or len(y) == 0:
        raise StageError("downsample", "empty input")
    px, kx = voxel_downsample(x, cfg.voxel_fine, cfg.seed)
    py, ky = voxel_downsample(y, cfg.voxel_fine, cfg.seed + 1)
    _, nx = voxel_downsample(px, cfg.voxel_coarse, cfg.seed + 2)
    _, ny = voxel_downsample(py, cfg.voxel_coarse, cfg.seed + 3)
    return px, kx, nx, py, ky, ny


@_stage("descriptors")
def _describe(cfg, px, kx, nx, py, ky, ny, features):
    if features is not None:
        fx, fy = features
        if len(fx) <= kx.max(initial=-1) or len(fy) <= ky.max(initial=-1):
            raise ValueError("feature rows do not cover the input clouds")
        pfx, pfy = fx.take(kx), fy.take(ky)
        return pfx, pfy, pfx.take(nx), pfy.take(ny)
    ix, iy = NeighborIndex(px), NeighborIndex(py)
    pfx, pfy = standardize_pair(compute_descriptors(px, ix, cfg.point_radii),
                                compute_descriptors(py, iy, cfg.point_radii))
    nfx, nfy = standardize_pair(compute_descriptors(px[nx], ix, cfg.node_radii),
                                compute_descriptors(py[ny], iy, cfg.node_radii))
    return pfx, pfy, nfx, nfy


@_stage("coarse")
def _coarse(cfg, nfx: FeatureSet, nfy: FeatureSet):
    scores = transport.assemble_coarse_scores(nfx, nfy, cfg.slack_z, cfg.score_scale)
    conf = transport.sinkhorn(scores, cfg.sinkhorn_iters, transport.COARSE, cfg.sinkhorn_tol)
    return conf, coarse_match.propose(conf, cfg.tau_c, cfg.tau_m)


@_stage("refine")
def _refine(cfg, coarse, px, py, nx, ny, pfx, pfy):
    nodes_x, nodes_y = px[nx], py[ny]
    groups_x = grouping.assign_points(px, nodes_x, cfg.seed + 4).groups()
    groups_y = grouping.assign_points(py, nodes_y, cfg.seed + 5).groups()
    pairs = [
        grouping.build_patch_pair(c, groups_x, groups_y, (px, py), (pfx, pfy),
                                  (nodes_x, nodes_y), cfg.patch_size, cfg.seed)
        for c in coarse.pairs()
    ]
    per_patch, evaluated = fine_match.refine_patches(
        pairs, cfg.sinkhorn_iters, cfg.tau_f, cfg.slack_z, cfg.score_scale, cfg.sinkhorn_tol
    )
    return fine_match.pool(per_patch), evaluated, len(pairs)


def register_pair(cfg: PipelineConfig, cloud_x, cloud_y, features=None) -> PairResult:
    """Down-sample, describe, match coarse-to-fine, sample and run RANSAC.

    ``features`` optionally supplies ``(FeatureSet_x, FeatureSet_y)`` aligned
    with the raw clouds, replacing the built-in descriptors.
    """
    px, kx, nx, py, ky, ny = _downsample(cfg, cloud_x, cloud_y)
    pfx, pfy, nfx, nfy = _describe(cfg, px, kx, nx, py, ky, ny, features)
    conf, coarse = _coarse(cfg, nfx, nfy)
    pooled, fine_evaluated, n_patches = _refine(cfg, coarse, px, py, nx, ny, pfx, pfy)
    sampled = fine_match.sample(pooled, cfg.n_samples, cfg.seed + 6)
    try:
        reg = ransac(sampled, (px, py), cfg.ransac_iters, cfg.inlier_tau, cfg.seed + 7,
                     cfg.ransac_confidence)
    except DegenerateError as exc:
        raise StageError("ransac", str(exc)) from exc

    coarse_entries = (len(nx) + 1) * (len(ny) + 1)
    stats = {
        "n_points": (len(px), len(py)),
        "n_nodes": (len(nx), len(ny)),
        "n_coarse": len(coarse),
        "tau_c_used": coarse.tau_used,
        "n_patches": n_patches,
        "n_pooled": len(pooled),
        "n_sampled": len(sampled),
        "coarse_entries": coarse_entries,
        "fine_entries": fine_evaluated,
        "dense_entries": len(px) * len(py),
        "ransac_iterations": reg.iterations_used,
    }
    return PairResult(
        correspondences=pooled.remap(kx, ky),
        sampled=sampled.remap(kx, ky),
        registration=reg,
        coarse=coarse,
        node_indices=(kx[nx], ky[ny]),
        stats=stats,
    )


def register_coarse_only(cfg: PipelineConfig, cloud_x, cloud_y, features=None,
                         return_correspondences: bool = False):
    """Ablation: RANSAC straight on node correspondences, skipping refinement.

    With ``return_correspondences`` also returns the node pairs as
    :class:`PointCorrespondences` into the raw clouds (``c_fine`` set to 1).
    """
    px, kx, nx, py, ky, ny = _downsample(cfg, cloud_x, cloud_y)
    _, _, nfx, nfy = _describe(cfg, px, kx, nx, py, ky, ny, features)
    _, coarse = _coarse(cfg, nfx, nfy)
    try:
        reg = ransac_points(px[nx][coarse.src], py[ny][coarse.tgt], cfg.ransac_iters,
                            cfg.inlier_tau, cfg.seed + 7, cfg.ransac_confidence)
    except DegenerateError as exc:
        raise StageError("ransac", str(exc)) from exc
    if not return_correspondences:
        return reg
    c = PointCorrespondences(kx[nx][coarse.src], ky[ny][coarse.tgt],
                             np.ones(len(coarse)), coarse.confidence)
    return reg, c


def evaluate_pair(cfg: PipelineConfig, x, y, gt: RigidTransform, features=None,
                  tau1: float = TAU_1, tau3: float = TAU_3, coarse_only: bool = False):
    """Register one pair and score it; returns ``(PairEvaluation, result)``.

    ``result`` is a :class:`PairResult`, or with ``coarse_only`` the
    :class:`RegistrationResult` of RANSAC on node correspondences (whose
    inlier ratio is then measured on those node pairs).
    """
    x, y = as_points(x, "source"), as_points(y, "target")
    gi, gj = gt_correspondences(x, y, gt, tau1)
    if len(gi) == 0:
        raise StageError("evaluate", "ground-truth pose yields no correspondences")
    if coarse_only:
        res, c = register_coarse_only(cfg, x, y, features, return_correspondences=True)
        est = res.transform
    else:
        res = register_pair(cfg, x, y, features)
        c = res.sampled
        est = res.registration.transform
    ir = inlier_ratio(c, (x, y), gt, tau1)
    err = rmse(est, x[gi], y[gj])
    rte, rre = rte_rre(est, gt)
    return PairEvaluation(ir, err, rte, rre, bool(err < tau3), len(c)), res


def read_manifest(path):
    """Parse ``src tgt gt_pose [src_features tgt_features]`` lines.

    Relative paths resolve against the manifest's directory. Returns tuples of
    five paths, the last two ``None`` when a line has no feature files.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (3, 5):
            raise ManifestError(
                f"{path}:{lineno}: expected 'src tgt gt_pose [src_features tgt_features]'"
            )
        resolved = []
        for p in parts:
            q = Path(p)
            if not q.is_absolute():
                q = path.parent / q
            if not q.is_file():
                raise ManifestError(f"{path}:{lineno}: missing file {q}")
            resolved.append(q)
        entries.append(tuple(resolved) + (None,) * (5 - len(resolved)))
    if not entries:
        raise ManifestError(f"{path}: manifest lists no pairs")
    return entries


def load_pair(entry):
    """Clouds, ground truth and optional features for one manifest entry.

    Failures are raised as :class:`StageError` tagged ``load`` or ``features``.
    """
    src, tgt, pose, fsrc, ftgt = entry
    try:
        x, y, gt = read_points(src), read_points(tgt), read_pose(pose)
    except (OSError, ValueError) as exc:
        raise StageError("load", str(exc)) from exc
    features = None
    if fsrc is not None:
        try:
            features = (load_features(fsrc, len(x)), load_features(ftgt, len(y)))
        except (OSError, ValueError) as exc:
            raise StageError("features", str(exc)) from exc
    return x, y, gt, features


def _evaluate_entry(args):
    cfg, entry, coarse_only = args
    x, y, gt, features = load_pair(entry)
    ev, res = evaluate_pair(cfg, x, y, gt, features, coarse_only=coarse_only)
    return ev, (res.transform if coarse_only else res.registration.transform)


def evaluate(cfg: PipelineConfig, manifest, jobs: int = 1, coarse_only: bool = False):
    """Evaluate every manifest pair; returns ``(records, poses, summary, entries)``.

    Pairs are independent, so ``jobs > 1`` runs them in worker processes; the
    output order always follows the manifest.
    """
    entries = read_manifest(manifest)
    work = [(cfg, e, coarse_only) for e in entries]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            out = list(pool.map(_evaluate_entry, work))
    else:
        out = [_evaluate_entry(w) for w in work]
    records = [r for r, _ in out]
    poses = [t for _, t in out]
    return records, poses, summarize(records), entries


def report_lines(records, entries) -> str:
    return "".join(
        r.to_json(src=str(e[0]), tgt=str(e[1])) + "\n" for r, e in zip(records, entries)
    )


def summary_json(summary: dict) -> str:
    return json.dumps(summary, sort_keys=True) + "\n"


def loss_check(seed: int = 0, iters: int = 20, h: float = 1e-5, n_nodes: int = 4, k: int = 4,
               scale: float = 2.0) -> dict:
    """Losses and a finite-difference gradient check on a small synthetic instance.

    Nodes are drawn from a 200-point scene, features are random unit vectors,
    and the two best-overlapping node pairs are expanded into ``k``-slot
    patches. Returns ``lc``, ``lf``, ``l`` and ``grad_err``, the largest
    absolute gap between the unrolled gradient and central differences.
    """
    from . import supervision
    from .synth import generate_scene

    scene = generate_scene(seed, n_points=200, overlap=0.7)
    rng = np.random.default_rng(seed)
    clouds = (scene.source, scene.target)
    tau_p = 0.1
    nodes = [c[rng.choice(len(c), n_nodes, replace=False)] for c in clouds]
    groups = [grouping.assign_points(c, nd, seed).groups() for c, nd in zip(clouds, nodes)]
    w = supervision.build_weight_matrix(groups[0], groups[1], clouds, scene.gt, tau_p)

    def unit(n):
        v = rng.normal(size=(n, 8))
        return v / np.linalg.norm(v, axis=1, keepdims=True)

    coarse_scores = transport.assemble_coarse_scores(unit(n_nodes), unit(n_nodes), 0.0, scale)
    point_features = (unit(len(clouds[0])), unit(len(clouds[1])))
    best = np.argsort(-w[:-1, :-1], axis=None, kind="stable")[:2]
    pairs = [
        grouping.build_patch_pair((i, j, 1.0), groups[0], groups[1], clouds, point_features,
                                  nodes, k, seed)
        for i, j in zip(*np.unravel_index(best, (n_nodes, n_nodes)))
    ]
    fine_scores = [fine_match.fine_scores(p, 0.0, scale) for p in pairs]
    binaries = [supervision.fine_binary(p, scene.gt, tau_p) for p in pairs]

    lc, g_coarse = supervision.coarse_loss_and_grad(coarse_scores, w, iters)
    lf, g_fine = supervision.fine_loss_and_grad(fine_scores, binaries, iters)

    def coarse_at(values):
        s = transport.ScoreMatrix(values, coarse_scores.mute_mask)
        return supervision.coarse_loss(transport.sinkhorn(s, iters, transport.COARSE, 0.0), w)

    def fine_at(which, values):
        mats = list(fine_scores)
        mats[which] = transport.ScoreMatrix(values, fine_scores[which].mute_mask)
        confs = [transport.sinkhorn(s, iters, transport.FINE, 0.0) for s in mats]
        return supervision.fine_loss(confs, binaries)

    def numeric(fn, s):
        g = np.zeros_like(s.values)
        for idx in zip(*np.nonzero(~s.mute_mask)):
            up, down = s.values.copy(), s.values.copy()
            up[idx] += h
            down[idx] -= h
            g[idx] = (fn(up) - fn(down)) / (2 * h)
        return g

    err = float(np.abs(numeric(coarse_at, coarse_scores) - g_coarse).max())
    for which, (s, g) in enumerate(zip(fine_scores, g_fine)):
        fd = numeric(lambda v, which=which: fine_at(which, v), s)
        err = max(err, float(np.abs(fd - g).max()))
    return {"lc": lc, "lf": lf, "l": supervision.total_loss(lc, lf), "grad_err": err}
