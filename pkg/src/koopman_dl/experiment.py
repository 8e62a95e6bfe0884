"""Experiment configuration and the pipeline steps shared by the CLI and tests.

A config is one JSON document::

    {
      "version": 1,
      "system": {"name": "duffing", "n_ic": 200, "n_steps": 10, "box": [-2, 2], "params": {}},
      "dictionary": {"kind": "network"},
      "training": {...TrainingConfig fields...},
      "evaluation": {"n_trials": 50, "n_steps": 10, "efunc_samples": 10000,
                     "compare": {"sizes": [10, 15, 20, 25, 30], "methods": ["edmd-dl", "rbf"]}},
      "seeds": {"data": 42, "init": 0, "eval": 7}
    }

For ``"name": "ks"`` the system block holds ``n_param_samples`` and KS
parameters instead. Fixed dictionaries take their ridge from
``dictionary.lambda``.
"""

import copy
from dataclasses import dataclass, field

from .dictionary import (
    AffineDictionary,
    HermiteDictionary,
    KsFourierDictionary,
    KsStateDerivDictionary,
    RbfDictionary,
)
from .errors import InvalidInputError
from .koopman import DEFAULT_LAMBDA, fit_edmd
from .metrics import averaged_reconstruction_error
from .systems import (
    DuffingParams,
    DuffingSystem,
    KsParams,
    KsSystem,
    make_duffing_dataset,
    make_ks_dataset,
)
from .trainer import TrainingConfig, fit_edmd_dl

CONFIG_VERSION = 1
SEED_NAMES = ("data", "init", "eval")
FIXED_KINDS = ("affine", "hermite", "rbf", "ks-fourier", "ks-state-deriv")
COMPARE_METHODS = ("edmd-dl", "rbf", "hermite", "fourier")

_EVAL_DEFAULTS = {"n_trials": 50, "n_steps": 10, "efunc_samples": 10_000, "efunc_leading": 8}


@dataclass
class ExperimentConfig:
    system: dict
    dictionary: dict
    seeds: dict
    training: dict = field(default_factory=dict)
    evaluation: dict = field(default_factory=dict)
    version: int = CONFIG_VERSION

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise InvalidInputError("config must be a JSON object")
        doc = copy.deepcopy(doc)
        version = doc.pop("version", None)
        if version != CONFIG_VERSION:
            raise InvalidInputError(f"config version must be {CONFIG_VERSION}, got {version!r}")
        unknown = set(doc) - {"system", "dictionary", "seeds", "training", "evaluation"}
        if unknown:
            raise InvalidInputError(f"unknown config blocks: {sorted(unknown)}")
        for block in ("system", "dictionary", "seeds"):
            if block not in doc:
                raise InvalidInputError(f"config is missing the {block!r} block")
        cfg = cls(**doc)
        cfg.validate()
        return cfg

    def to_dict(self):
        return {
            "version": self.version,
            "system": self.system,
            "dictionary": self.dictionary,
            "training": self.training,
            "evaluation": self.evaluation,
            "seeds": self.seeds,
        }

    def validate(self):
        missing = [s for s in SEED_NAMES if not isinstance(self.seeds.get(s), int)]
        if missing:
            raise InvalidInputError(f"integer seeds required for: {missing}")
        if self.system.get("name") not in ("duffing", "ks"):
            raise InvalidInputError("system.name must be 'duffing' or 'ks'")
        kind = self.dictionary.get("kind")
        if kind != "network" and kind not in FIXED_KINDS:
            raise InvalidInputError(f"unknown dictionary kind {kind!r}")
        if kind.startswith("ks-") and self.system["name"] != "ks":
            raise InvalidInputError(f"dictionary {kind!r} needs the ks system")
        # surface bad option names now rather than mid-run
        self.system_object()
        self.training_config()

    # -- builders ---------------------------------------------------------

    def system_object(self):
        s = self.system
        if s["name"] == "duffing":
            params = DuffingParams.from_dict(s.get("params", {}))
            return DuffingSystem(params, tuple(s.get("box", (-2.0, 2.0))))
        return KsSystem(KsParams.from_dict(s.get("params", {})))

    @property
    def state_dim(self):
        return self.system_object().state_dim

    def eval_option(self, name):
        return self.evaluation.get(name, _EVAL_DEFAULTS.get(name))

    def training_config(self):
        doc = dict(self.training)
        doc["seed"] = self.seeds["init"]
        return TrainingConfig.from_dict(doc)

    def with_overrides(self, seed=None, seed_name=None, ic_literal=False):
        doc = self.to_dict()
        if seed is not None:
            doc["seeds"][seed_name] = int(seed)
        if ic_literal:
            if doc["system"]["name"] != "ks":
                raise InvalidInputError("--ic-literal only applies to the ks system")
            doc["system"].setdefault("params", {})["ic_literal"] = True
        return ExperimentConfig.from_dict(doc)


def make_dataset(cfg):
    s = cfg.system
    system = cfg.system_object()
    if s["name"] == "duffing":
        return make_duffing_dataset(int(s.get("n_ic", 200)), int(s.get("n_steps", 10)),
                                    system.box, cfg.seeds["data"], system.params)
    return make_ks_dataset(int(s.get("n_param_samples", 100)), system.params, cfg.seeds["data"])


def build_fixed_dictionary(spec, dataset, seed):
    """Dictionary for a fixed-kind ``spec`` block; RBF centers come from ``dataset``."""
    kind = spec["kind"]
    d = dataset.state_dim
    if kind == "affine":
        return AffineDictionary(d)
    if kind == "hermite":
        return HermiteDictionary(d, int(spec.get("max_degree", 4)), bool(spec.get("physicists", False)))
    if kind == "rbf":
        return RbfDictionary.from_data(dataset.X, int(spec.get("n_centers", 100)), seed=seed,
                                       delta=float(spec.get("delta", 1e-4)),
                                       include_state=bool(spec.get("include_state", True)))
    if kind == "ks-fourier":
        return KsFourierDictionary(d, spec.get("n_modes"))
    if kind == "ks-state-deriv":
        return KsStateDerivDictionary(d)
    raise InvalidInputError(f"{kind!r} is not a fixed dictionary kind")


def fit_model(cfg, dataset, dictionary_spec=None, training_overrides=None, callback=None):
    """Fit per the config; returns ``(model, history or None)``."""
    spec = cfg.dictionary if dictionary_spec is None else dictionary_spec
    if dataset.state_dim != cfg.state_dim:
        raise InvalidInputError(
            f"dataset dimension {dataset.state_dim} does not match the configured system "
            f"({cfg.state_dim})")
    if spec["kind"] == "network":
        tc = cfg.training_config()
        if training_overrides:
            doc = tc.to_dict()
            doc.update(training_overrides)
            tc = TrainingConfig.from_dict(doc)
        return fit_edmd_dl(dataset, tc, callback=callback)
    dictionary = build_fixed_dictionary(spec, dataset, cfg.seeds["init"])
    return fit_edmd(dataset, dictionary, float(spec.get("lambda", DEFAULT_LAMBDA))), None


def evaluate_reconstruction(cfg, model):
    return averaged_reconstruction_error(model, cfg.system_object(), cfg.eval_option("n_trials"),
                                         cfg.eval_option("n_steps"), cfg.seeds["eval"])


def _size_spec(method, size, state_dim):
    """Dictionary block (or network override) realizing ``size`` total functions."""
    fixed = 1 + state_dim
    if method == "edmd-dl":
        if size <= fixed:
            raise InvalidInputError(f"edmd-dl size must exceed {fixed}")
        return {"kind": "network"}, {"trainable_outputs": size - fixed}
    if method == "rbf":
        if size <= fixed:
            raise InvalidInputError(f"rbf size must exceed {fixed}")
        return {"kind": "rbf", "n_centers": size - fixed}, None
    if method == "hermite":
        degree = round(size ** (1.0 / state_dim)) - 1
        if degree < 1 or (degree + 1) ** state_dim != size:
            raise InvalidInputError(f"hermite size must be a perfect {state_dim}-th power")
        return {"kind": "hermite", "max_degree": degree}, None
    if method == "fourier":
        extra = size - state_dim
        if extra < 2 or extra % 2:
            raise InvalidInputError(f"fourier size must be {state_dim} plus a positive even number")
        return {"kind": "ks-fourier", "n_modes": extra // 2}, None
    raise InvalidInputError(f"unknown compare method {method!r}; choose from {COMPARE_METHODS}")


def compare_sweep(cfg, dataset):
    """Averaged reconstruction error for every (method, size) of ``evaluation.compare``."""
    block = cfg.evaluation.get("compare", {})
    sizes = block.get("sizes", [10, 15, 20, 25, 30])
    methods = block.get("methods", ["edmd-dl", "rbf"])
    lam = float(block.get("lambda", cfg.dictionary.get("lambda", DEFAULT_LAMBDA)))
    plan = [(m, s, *_size_spec(m, int(s), dataset.state_dim)) for m in methods for s in sizes]
    rows = []
    for method, size, spec, overrides in plan:
        if spec["kind"] != "network":
            spec = dict(spec, **{"lambda": lam})
        model, _ = fit_model(cfg, dataset, spec, overrides)
        report = evaluate_reconstruction(cfg, model)
        rows.append([method, int(size), model.output_dim, report.mean, report.std, report.count])
    return rows


def efunc_sample_count(cfg):
    n = int(cfg.eval_option("efunc_samples"))
    if n < 1:
        raise InvalidInputError("evaluation.efunc_samples must be >= 1")
    return n
