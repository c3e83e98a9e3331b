"""Experiment configuration: YAML parsing, validation and run expansion.

A config file is a mapping with these keys (all but ``mode`` optional)::

    mode: inpaint            # inpaint | synthetic | ablate_groups | ablate_restart
    images: [builtin:camera] # file paths (relative to the config) or builtin:<name>
    size: 128                # downsample by an integer factor, then center-crop
    sr: 0.7
    seed: 0
    sigma_per_entry: 0.0     # data-ball radius is sigma_per_entry * sqrt(#observed)
    groups: [1, 2, 4]        # group counts swept by ablate_groups
    synthetic: {m: 60, n: 60, rank: 3, noise_sigma: 0.0}
    solver: {...}            # IralConfig fields; nested phi: and elam: blocks
    output: runs/out

A saved ``manifest.json`` is also accepted: its ``config`` entry is used,
with image paths resolved against the original config directory.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
import os
import re
from dataclasses import dataclass, field
from typing import Optional

import yaml

from .data import image_exists, resolve_image
from .elam import ElamConfig
from .errors import DomainError
from .iral import InitKind, IralConfig
from .regularizer import CappedPhi, PhiKind

MODES = ("inpaint", "synthetic", "ablate_groups", "ablate_restart")
TOP_KEYS = {"mode", "images", "size", "sr", "seed", "sigma_per_entry", "groups",
            "synthetic", "solver", "output"}
SYNTH_KEYS = {"m": 60, "n": 60, "rank": 3, "noise_sigma": 0.0}
SEED_MAX = 2 ** 64


class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads ``1e-6`` (no dot) as a float, as JSON does."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
                |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
                |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
                |[-+]?\.(?:inf|Inf|INF)
                |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."),
)


class ConfigError(ValueError):
    """Invalid configuration; ``diagnostics`` lists every problem found."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


@dataclass
class ExperimentConfig:
    mode: str
    images: list = field(default_factory=list)
    size: Optional[int] = None
    sr: float = 0.7
    seed: int = 0
    sigma_per_entry: float = 0.0
    groups: list = field(default_factory=list)
    synthetic: dict = field(default_factory=lambda: dict(SYNTH_KEYS))
    solver: IralConfig = field(default_factory=IralConfig)
    output: str = "runs"
    base_dir: str = "."

    def to_dict(self) -> dict:
        """Fully resolved, JSON-serialisable form (round-trips through the loader)."""
        solver = dataclasses.asdict(self.solver)
        solver["init"] = self.solver.init.value
        solver["phi"]["kind"] = self.solver.phi.kind.value
        return dict(mode=self.mode, images=list(self.images), size=self.size, sr=self.sr,
                    seed=self.seed, sigma_per_entry=self.sigma_per_entry,
                    groups=list(self.groups), synthetic=dict(self.synthetic),
                    solver=solver, output=self.output)


@dataclass(frozen=True)
class RunEntry:
    """One solver run: a data instance plus the solver settings that vary."""

    image: str
    mode: str
    groups: int
    restart: bool

    @property
    def data_key(self) -> str:
        return self.image

    @property
    def key(self) -> str:
        return f"{self.image}|{self.mode}|g{self.groups}|r{int(self.restart)}"


def stable_hash(key: str) -> int:
    """64-bit hash of ``key`` that does not depend on the interpreter session."""
    return int.from_bytes(hashlib.blake2b(key.encode(), digest_size=8).digest(), "little")


def entry_seed(seed: int, key: str) -> int:
    return (int(seed) ^ stable_hash(key)) % SEED_MAX


def read_raw(path) -> tuple[dict, str]:
    """Parse the file at ``path`` into a mapping plus the directory that
    relative image paths refer to (I/O errors propagate)."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        raw = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ConfigError([f"config: not valid YAML/JSON ({exc})"]) from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(["config: top level must be a mapping"])
    base_dir = os.path.dirname(os.path.abspath(path))
    if "config" in raw and "runs" in raw:
        # a manifest: image paths stay relative to the original config
        base_dir = raw.get("config_dir") or base_dir
        raw = raw["config"]
    return raw, base_dir


def _num(diags, name, value, *, positive=False, unit=False, integer=False, nonneg=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        diags.append(f"{name}: expected a number, got {value!r}")
        return None
    if integer and (not float(value).is_integer()):
        diags.append(f"{name}: expected an integer, got {value!r}")
        return None
    if not math.isfinite(value):
        diags.append(f"{name}: must be finite")
    elif positive and not value > 0:
        diags.append(f"{name}: must be positive, got {value}")
    elif nonneg and value < 0:
        diags.append(f"{name}: must be nonnegative, got {value}")
    elif unit and not 0 < value < 1:
        diags.append(f"{name}: must lie in (0, 1), got {value}")
    return value


def _check_solver(raw, diags) -> dict:
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        diags.append("solver: expected a mapping")
        return {}
    iral_fields = {f.name for f in dataclasses.fields(IralConfig)}
    for key in raw:
        if key not in iral_fields:
            diags.append(f"solver.{key}: unknown field")
    for name in ("rho1", "rho2", "rho3"):
        if name in raw:
            _num(diags, f"solver.{name}", raw[name], unit=True)
    for name in ("eta0", "eps0", "outer_tol", "reg_weight"):
        if name in raw:
            _num(diags, f"solver.{name}", raw[name], positive=True)
    for name in ("vartheta", "max_outer", "groups"):
        if name in raw:
            _num(diags, f"solver.{name}", raw[name], positive=True, integer=True)
    if "restart" in raw and not isinstance(raw["restart"], bool):
        diags.append(f"solver.restart: expected true/false, got {raw['restart']!r}")
    if "init" in raw and raw["init"] not in {k.value for k in InitKind}:
        diags.append(f"solver.init: expected one of {[k.value for k in InitKind]}, got {raw['init']!r}")
    phi = raw.get("phi")
    if phi is not None:
        if not isinstance(phi, dict):
            diags.append("solver.phi: expected a mapping")
        else:
            for key in phi:
                if key not in ("kind", "nu", "theta"):
                    diags.append(f"solver.phi.{key}: unknown field")
            if "kind" in phi and phi["kind"] not in {k.value for k in PhiKind}:
                diags.append(f"solver.phi.kind: expected CapL1 or CapLog, got {phi['kind']!r}")
            for name in ("nu", "theta"):
                if name in phi:
                    _num(diags, f"solver.phi.{name}", phi[name], positive=True)
    elam = raw.get("elam")
    if elam is not None:
        if not isinstance(elam, dict):
            diags.append("solver.elam: expected a mapping")
        else:
            elam_fields = {f.name for f in dataclasses.fields(ElamConfig)}
            for key in elam:
                if key not in elam_fields:
                    diags.append(f"solver.elam.{key}: unknown field")
            if "gamma" in elam:
                g = _num(diags, "solver.elam.gamma", elam["gamma"])
                if g is not None and not g > 1:
                    diags.append(f"solver.elam.gamma: must exceed 1, got {g}")
            if "delta" in elam:
                _num(diags, "solver.elam.delta", elam["delta"], unit=True)
            for name in ("eps_floor", "inner_tol"):
                if name in elam:
                    _num(diags, f"solver.elam.{name}", elam[name], positive=True)
            if "prune_tol" in elam:
                _num(diags, "solver.elam.prune_tol", elam["prune_tol"], nonneg=True)
            if "max_inner" in elam:
                _num(diags, "solver.elam.max_inner", elam["max_inner"], positive=True, integer=True)
    return raw


def build_solver(raw: Optional[dict]) -> IralConfig:
    raw = dict(raw or {})
    phi = CappedPhi(**raw.pop("phi", None) or {})
    elam_raw = raw.pop("elam", None) or {}
    elam = dataclasses.replace(IralConfig().elam, **elam_raw)
    return IralConfig(phi=phi, elam=elam, **raw)


def _image_shape(spec, size, base_dir):
    img = resolve_image(spec, base_dir)
    if size is None:
        return img.rows, img.cols
    return size, size


def check_config(raw: dict, base_dir: str = ".") -> list[str]:
    """Every problem with ``raw``; an empty list means the config is runnable."""
    diags = []
    for key in raw:
        if key not in TOP_KEYS:
            diags.append(f"{key}: unknown field")
    mode = raw.get("mode")
    if mode not in MODES:
        diags.append(f"mode: expected one of {list(MODES)}, got {mode!r}")
    if "sr" in raw:
        sr = _num(diags, "sr", raw["sr"])
        if sr is not None and not 0 < sr <= 1:
            diags.append(f"sr: must lie in (0, 1], got {sr}")
    if "seed" in raw:
        sd = _num(diags, "seed", raw["seed"], integer=True, nonneg=True)
        if sd is not None and sd >= SEED_MAX:
            diags.append("seed: must fit in 64 bits")
    if "sigma_per_entry" in raw:
        _num(diags, "sigma_per_entry", raw["sigma_per_entry"], nonneg=True)
    size = raw.get("size")
    if size is not None:
        size = _num(diags, "size", size, positive=True, integer=True)
        size = int(size) if size is not None and size > 0 else None
    solver = _check_solver(raw.get("solver"), diags)

    # column counts of every data instance, for the group-count checks
    widths = []
    if mode == "synthetic":
        syn = raw.get("synthetic") or {}
        if not isinstance(syn, dict):
            diags.append("synthetic: expected a mapping")
            syn = {}
        for key in syn:
            if key not in SYNTH_KEYS:
                diags.append(f"synthetic.{key}: unknown field")
        vals = {k: syn.get(k, v) for k, v in SYNTH_KEYS.items()}
        ok = True
        for k in ("m", "n", "rank"):
            if _num(diags, f"synthetic.{k}", vals[k], positive=True, integer=True) is None:
                ok = False
        _num(diags, "synthetic.noise_sigma", vals["noise_sigma"], nonneg=True)
        if ok and vals["rank"] > min(vals["m"], vals["n"]):
            diags.append(f"synthetic.rank: {vals['rank']} exceeds min(m, n)")
        if ok:
            widths.append(("synthetic", int(vals["n"])))
    elif mode in MODES:
        images = raw.get("images")
        if not images or not isinstance(images, list):
            diags.append("images: expected a non-empty list of paths or builtin:<name>")
            images = []
        for spec in images:
            if not isinstance(spec, str):
                diags.append(f"images: entry {spec!r} is not a string")
            elif not image_exists(spec, base_dir):
                diags.append(f"images: {spec} not found")
            else:
                try:
                    rows, cols = _image_shape(spec, None, base_dir)
                except (DomainError, OSError, ValueError) as exc:
                    diags.append(f"images: {spec} unreadable ({exc})")
                    continue
                if size is not None and size > min(rows, cols):
                    diags.append(f"size: {size} exceeds the {rows}x{cols} image {spec}")
                    continue
                widths.append((spec, size if size is not None else cols))

    counts = []
    if mode == "ablate_groups":
        g = raw.get("groups")
        if not g or not isinstance(g, list):
            diags.append("groups: ablate_groups needs a non-empty list of group counts")
        else:
            for v in g:
                if _num(diags, "groups", v, positive=True, integer=True) is not None and v > 0:
                    counts.append(("groups", int(v)))
    elif isinstance(solver.get("groups"), int) and solver["groups"] > 0:
        counts.append(("solver.groups", solver["groups"]))
    elif "groups" not in solver:
        counts.append(("solver.groups", IralConfig().groups))
    for label, s in counts:
        for spec, n in widths:
            if s > n:
                diags.append(f"{label}: {s} groups exceed the {n} columns of {spec}")
    return diags


def load_config(path) -> ExperimentConfig:
    """Parse and validate ``path``; raises :class:`ConfigError` listing all problems."""
    raw, base_dir = read_raw(path)
    diags = check_config(raw, base_dir)
    if diags:
        raise ConfigError(diags)
    try:
        solver = build_solver(raw.get("solver"))
    except (DomainError, TypeError, ValueError) as exc:
        raise ConfigError([f"solver: {exc}"]) from exc
    syn = dict(SYNTH_KEYS)
    syn.update(raw.get("synthetic") or {})
    return ExperimentConfig(
        mode=raw["mode"],
        images=list(raw.get("images") or []),
        size=None if raw.get("size") is None else int(raw["size"]),
        sr=float(raw.get("sr", 0.7)),
        seed=int(raw.get("seed", 0)),
        sigma_per_entry=float(raw.get("sigma_per_entry", 0.0)),
        groups=[int(g) for g in raw.get("groups") or []],
        synthetic=syn,
        solver=solver,
        output=str(raw.get("output", "runs")),
        base_dir=base_dir,
    )


def validate(path) -> list[str]:
    """Diagnostics for the config at ``path`` without running anything."""
    try:
        raw, base_dir = read_raw(path)
    except ConfigError as exc:
        return exc.diagnostics
    diags = check_config(raw, base_dir)
    if not diags:
        try:
            build_solver(raw.get("solver"))
        except (DomainError, TypeError, ValueError) as exc:
            diags.append(f"solver: {exc}")
    return diags


def expand_runs(cfg: ExperimentConfig) -> list[RunEntry]:
    """The runs a config asks for, in deterministic order."""
    s = cfg.solver
    if cfg.mode == "synthetic":
        return [RunEntry("synthetic", cfg.mode, s.groups, s.restart)]
    runs = []
    for image in cfg.images:
        if cfg.mode == "inpaint":
            runs.append(RunEntry(image, cfg.mode, s.groups, s.restart))
        elif cfg.mode == "ablate_groups":
            runs.extend(RunEntry(image, cfg.mode, g, s.restart) for g in cfg.groups)
        else:
            runs.extend(RunEntry(image, cfg.mode, s.groups, r) for r in (True, False))
    return runs
