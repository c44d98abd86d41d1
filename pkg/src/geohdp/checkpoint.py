"""Single-file JSON checkpoints.

A checkpoint holds the run configuration, the data file's path and digest,
the assignments, concentrations and global sticks, and the exact state of
every random stream. Floats are written with ``repr`` precision, so a
save/load/save cycle reproduces the file byte for byte.
"""
import json
import os
import tempfile

import numpy as np

from .config import RunConfig
from .errors import CheckpointError, ConfigError, StateCorruptionError
from .state import GlobalSticks, State

FORMAT = "geohdp-checkpoint"
VERSION = 1


def rng_state(rng: np.random.Generator):
    return rng.bit_generator.state


def rng_from_state(st):
    try:
        bg = getattr(np.random, st["bit_generator"])()
        bg.state = st
    except (KeyError, TypeError, ValueError, AttributeError) as e:
        raise CheckpointError(f"bad random stream state: {e}") from None
    return np.random.Generator(bg)


def hyper_record(hyper):
    p = hyper.vmf_prior
    return {
        "alpha_phi0": hyper.alpha_phi0, "alpha_pi0": hyper.alpha_pi0,
        "alpha_omega": hyper.alpha_omega, "alpha_phi": hyper.alpha_phi,
        "alpha_pi": hyper.alpha_pi, "V": hyper.catalog.V,
        "gamma": hyper.catalog.gamma.tolist(), "mu0": p.mu0.tolist(),
        "c0": p.c0, "m_c": p.m_c, "sigma_c": p.sigma_c,
    }


def state_record(state: State):
    return {
        "t": state.t.tolist(), "s": state.s.tolist(), "z": state.z.tolist(),
        "c": state.c.tolist(),
        "phi0": {"weights": state.phi0.weights.tolist(), "remainder": state.phi0.remainder},
        "pi0": {"weights": state.pi0.weights.tolist(), "remainder": state.pi0.remainder},
        "n_sweeps": int(state.n_sweeps),
    }


class Checkpoint:
    """Everything needed to continue a run exactly where it stopped."""

    def __init__(self, config: RunConfig, data_path, data_sha256, state: State,
                 global_rng, worker_rngs):
        self.config = config
        self.data_path = data_path
        self.data_sha256 = data_sha256
        self.state = state
        self.global_rng = global_rng
        self.worker_rngs = list(worker_rngs)

    @property
    def n_sweeps(self):
        return self.state.n_sweeps

    def to_json(self):
        return {
            "format": FORMAT,
            "version": VERSION,
            "config": self.config.to_dict(),
            "hyper": hyper_record(self.state.hyper),
            "data": {"path": self.data_path, "sha256": self.data_sha256},
            "state": state_record(self.state),
            "rng": {"global": rng_state(self.global_rng),
                    "workers": [rng_state(r) for r in self.worker_rngs]},
        }

    def dumps(self):
        return json.dumps(self.to_json(), sort_keys=True, indent=1, allow_nan=False) + "\n"

    def save(self, path):
        """Atomic write: a temporary file in the same directory is renamed over ``path``."""
        text = self.dumps()
        d = os.path.dirname(os.path.abspath(path))
        fd, tmp = tempfile.mkstemp(prefix=".ckpt-", dir=d)
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


def read_record(path):
    try:
        with open(path, encoding="utf-8") as fh:
            rec = json.load(fh)
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path} is not valid JSON ({e.msg})") from None
    if not isinstance(rec, dict) or rec.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a checkpoint file")
    if rec.get("version") != VERSION:
        raise CheckpointError(f"checkpoint version {rec.get('version')!r} is not supported "
                              f"(expected {VERSION})")
    for key in ("config", "hyper", "data", "state", "rng"):
        if key not in rec:
            raise CheckpointError(f"checkpoint has no {key!r} entry")
    return rec


def restore(rec, data):
    """Checkpoint from a parsed record and the already loaded dataset."""
    try:
        config = RunConfig.from_dict(rec["config"])
    except ConfigError as e:
        raise CheckpointError(f"checkpoint config: {e}") from None
    hyper = config.hyperparams(data.n_items)
    saved = rec["hyper"]
    if hyper_record(hyper) != saved:
        raise CheckpointError("checkpoint hyperparameters do not match its configuration")
    st = rec["state"]
    try:
        state = State.from_assignments(
            data, hyper, st["t"], st["s"], st["z"], st["c"],
            GlobalSticks(st["phi0"]["weights"], st["phi0"]["remainder"]),
            GlobalSticks(st["pi0"]["weights"], st["pi0"]["remainder"]),
            st["n_sweeps"])
        state.audit()
    except (KeyError, TypeError, ValueError, StateCorruptionError) as e:
        raise CheckpointError(f"checkpoint state is inconsistent with the data: {e}") from None
    g = rng_from_state(rec["rng"]["global"])
    workers = [rng_from_state(w) for w in rec["rng"]["workers"]]
    return Checkpoint(config, rec["data"]["path"], rec["data"]["sha256"], state, g, workers)
