"""Run configuration: an INI file with [model], [sampler], [parallel], [run]
and [synth] sections, overridable from the command line.

Every check runs before any compute and all failures are reported together.
"""
import configparser
import math
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from .dirmult import CatalogParams
from .errors import ConfigError
from .geo import check_geopoint, latlon_to_unit
from .parallel import EXECUTORS, MergePolicy
from .sampler import SamplerConfig
from .state import Hyperparams
from .synth import SynthConfig
from .vmf import VmfPrior


@dataclass
class ModelSection:
    alpha_phi0: float = 1.0
    alpha_pi0: float = 1.0
    alpha_omega: float = 1.0
    alpha_phi: float = 1.0
    alpha_pi: float = 1.0
    gamma: float = 0.1
    mu0_lat: float = 90.0
    mu0_lon: float = 0.0
    c0: float = 0.1
    m_c: float = math.log(20.0)
    sigma_c: float = 1.0
    n_items: Optional[int] = None


@dataclass
class SamplerSection:
    mh_step_sigma: float = 0.5
    sweeps_per_stick_resample: int = 1
    c_recompute_interval: int = 100
    strict_paper_mode: bool = False
    order_seed: Optional[int] = None
    init: str = "sequential"


@dataclass
class ParallelSection:
    workers: int = 1
    sync_interval: int = 1
    executor: str = "inline"


@dataclass
class RunSection:
    seed: int = 0
    sweeps: int = 100
    checkpoint_every: int = 10
    data: Optional[str] = None
    heldout: Optional[str] = None
    out: str = "run"


@dataclass
class SynthSection:
    n_customers: int = 200
    n_heldout: int = 0
    mean_views: float = 20.0
    fixed_views: bool = False
    truncation: int = 100
    mode: str = "stick"


@dataclass
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    parallel: ParallelSection = field(default_factory=ParallelSection)
    run: RunSection = field(default_factory=RunSection)
    synth: SynthSection = field(default_factory=SynthSection)

    SECTIONS = ("model", "sampler", "parallel", "run", "synth")

    # -- construction ----------------------------------------------------------
    @classmethod
    def from_file(cls, path):
        """Parse an INI file; unknown sections/keys and bad values are all reported."""
        cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        try:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        except configparser.Error as e:
            raise ConfigError(f"malformed config {path}: {e}") from None
        cfg = cls()
        problems = []
        for sec in cp.sections():
            if sec not in cls.SECTIONS:
                problems.append(f"unknown section [{sec}]")
                continue
            problems += cfg.update(sec, dict(cp.items(sec)))
        if problems:
            raise ConfigError(problems)
        return cfg

    def update(self, section, values):
        """Set string or typed values in one section; returns a list of problems."""
        target = getattr(self, section)
        types = {f.name: f.type for f in fields(target)}
        problems = []
        for key, raw in values.items():
            if key not in types:
                problems.append(f"unknown key {key!r} in [{section}]")
                continue
            try:
                setattr(target, key, _coerce(raw, types[key]))
            except ValueError:
                problems.append(f"[{section}] {key}: cannot parse {raw!r}")
        return problems

    def to_dict(self):
        return {sec: asdict(getattr(self, sec)) for sec in self.SECTIONS}

    @classmethod
    def from_dict(cls, d):
        cfg = cls()
        problems = []
        for sec, values in d.items():
            if sec not in cls.SECTIONS:
                problems.append(f"unknown section [{sec}]")
                continue
            problems += cfg.update(sec, values)
        if problems:
            raise ConfigError(problems)
        return cfg

    # -- validation --------------------------------------------------------------
    def problems(self, need_data=False, need_out=True):
        m, s, p, r, y = self.model, self.sampler, self.parallel, self.run, self.synth
        out = []
        for name in ("alpha_phi0", "alpha_pi0", "alpha_omega", "alpha_phi", "alpha_pi",
                     "gamma", "c0", "sigma_c"):
            v = getattr(m, name)
            if not (math.isfinite(v) and v > 0):
                out.append(f"[model] {name} must be positive, got {v}")
        if not math.isfinite(m.m_c):
            out.append("[model] m_c must be finite")
        try:
            check_geopoint(m.mu0_lat, m.mu0_lon)
        except ValueError as e:
            out.append(f"[model] mu0: {e}")
        if m.n_items is not None and m.n_items < 1:
            out.append("[model] n_items must be >= 1")
        out += ["[sampler] " + q for q in self.sampler_config().problems()]
        if s.init not in ("sequential", "single", "random"):
            out.append(f"[sampler] unknown init {s.init!r}")
        if p.workers < 1:
            out.append("[parallel] workers must be >= 1")
        out += ["[parallel] " + q for q in MergePolicy(p.sync_interval).problems()]
        if p.executor not in EXECUTORS:
            out.append(f"[parallel] executor must be one of {', '.join(EXECUTORS)}")
        if r.sweeps < 0:
            out.append("[run] sweeps must be >= 0")
        if r.checkpoint_every < 1:
            out.append("[run] checkpoint_every must be >= 1")
        if r.seed < 0:
            out.append("[run] seed must be >= 0")
        if need_data:
            if not r.data:
                out.append("[run] data: no data file given")
            elif not os.access(r.data, os.R_OK):
                out.append(f"[run] data: cannot read {r.data}")
        if r.heldout and not os.access(r.heldout, os.R_OK):
            out.append(f"[run] heldout: cannot read {r.heldout}")
        if need_out:
            out += _writable_dir_problems(r.out)
        if y.n_customers < 1:
            out.append("[synth] n_customers must be >= 1")
        if y.n_heldout < 0:
            out.append("[synth] n_heldout must be >= 0")
        out += ["[synth] " + q for q in self.synth_config().problems() if "n_customers" not in q]
        return out

    def validate(self, **kw):
        bad = self.problems(**kw)
        if bad:
            raise ConfigError(bad)
        return self

    # -- derived objects -----------------------------------------------------------
    def hyperparams(self, V):
        m = self.model
        prior = VmfPrior(latlon_to_unit((m.mu0_lat, m.mu0_lon)), m.c0, m.m_c, m.sigma_c)
        return Hyperparams(m.alpha_phi0, m.alpha_pi0, m.alpha_omega, m.alpha_phi, m.alpha_pi,
                           CatalogParams(int(V), np.full(int(V), m.gamma)), prior)

    def sampler_config(self):
        s = self.sampler
        return SamplerConfig(s.mh_step_sigma, s.sweeps_per_stick_resample, self.run.seed,
                             s.c_recompute_interval, s.strict_paper_mode, s.order_seed)

    def synth_config(self, seed=None):
        y = self.synth
        return SynthConfig(y.n_customers + y.n_heldout, y.mean_views, y.fixed_views,
                           y.truncation, y.mode if y.mode != "planted" else "stick",
                           self.run.seed if seed is None else seed)


def _writable_dir_problems(path):
    if not path:
        return ["[run] out: no output directory given"]
    p = os.path.abspath(path)
    while not os.path.exists(p):
        parent = os.path.dirname(p)
        if parent == p:
            break
        p = parent
    if not os.path.isdir(p):
        return [f"[run] out: {p} is not a directory"]
    if not os.access(p, os.W_OK):
        return [f"[run] out: {p} is not writable"]
    return []


def _coerce(raw, typ):
    if not isinstance(raw, str):
        if raw is None:
            return None
        base = _base_type(typ)
        if base is bool and not isinstance(raw, bool):
            raise ValueError(raw)
        return base(raw)
    text = raw.strip()
    optional = "Optional" in str(typ)
    if optional and text.lower() in ("", "none"):
        return None
    base = _base_type(typ)
    if base is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(text)
    if base is int:
        return int(text)
    if base is float:
        return float(text)
    return text


def _base_type(typ):
    s = str(typ)
    for name, t in (("bool", bool), ("int", int), ("float", float)):
        if s == name or t is typ or f"[{name}]" in s:
            return t
    return str
