"""Run configuration with strict key checking and JSON round-trip."""

import dataclasses
import json
from dataclasses import dataclass, field

from uavsim.channel import ChannelParams
from uavsim.contract import EconomicParams
from uavsim.ingest import SyntheticSpec
from uavsim.learning import LearningConfig
from uavsim.simulation import POLICIES, SimulationConfig

_SECTIONS = {
    "econ": EconomicParams,
    "channel": ChannelParams,
    "learning": LearningConfig,
    "sim": SimulationConfig,
    "synthetic": SyntheticSpec,
}


@dataclass(frozen=True)
class RunConfig:
    econ: EconomicParams = field(default_factory=EconomicParams)
    channel: ChannelParams = field(default_factory=ChannelParams)
    learning: LearningConfig = field(default_factory=LearningConfig)
    sim: SimulationConfig = field(default_factory=SimulationConfig)
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    bs_file: str = None
    traffic_file: str = None
    scenario_dir: str = None
    byte_scale: float = 1.0
    margin_m: float = 500.0
    label_seed: int = 0
    seeds: tuple = (0,)
    policies: tuple = POLICIES
    fleet_sizes: tuple = (2, 6, 10, 14)
    ratios: tuple = (1.0, 2.0, 3.0, 4.0, 5.0)
    k_values: tuple = (1, 3, 10)
    mre_trials: int = 20
    dwt_levels: int = 2
    dwt_threshold: float = 3.0
    contract_draws: int = 1000

    def __post_init__(self):
        bad = [p for p in self.policies if p not in POLICIES]
        if bad:
            raise ValueError(f"unknown policies {bad}")
        if any(int(f) < 0 for f in self.fleet_sizes):
            raise ValueError("fleet sizes must be >= 0")
        if any(int(k) < 1 for k in self.k_values):
            raise ValueError("k values must be >= 1")

    def to_dict(self):
        return _plain(dataclasses.asdict(self))

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ValueError("config must be a JSON object")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        kwargs = {}
        for key, value in data.items():
            if key in _SECTIONS:
                kwargs[key] = _section(key, _SECTIONS[key], value)
            elif isinstance(value, list):
                kwargs[key] = tuple(value)
            else:
                kwargs[key] = value
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ValueError(f"invalid config: {exc}") from exc

    @classmethod
    def from_json(cls, text):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValueError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(data)


def _section(name, klass, value):
    if not isinstance(value, dict):
        raise ValueError(f"config section {name!r} must be an object")
    names = {f.name for f in dataclasses.fields(klass)}
    unknown = sorted(set(value) - names)
    if unknown:
        raise ValueError(f"unknown keys in {name!r}: {unknown}")
    value = {k: tuple(v) if isinstance(v, list) else v for k, v in value.items()}
    try:
        return klass(**value)
    except TypeError as exc:
        raise ValueError(f"invalid {name!r} section: {exc}") from exc


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def load_config(path=None):
    if path is None:
        return RunConfig()
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ValueError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    return RunConfig.from_json(text)
