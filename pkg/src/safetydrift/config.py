"""Config file loading and corpus-level simulation helpers.

One TOML file covers tool profiles, the file sensitivity manifest, an
optional risk-rule cascade override, per-category simulator settings and
monitor policy. The packaged default lives in data/default_config.toml.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .classifier import FileManifest, ToolRiskProfile
from .simulate import (
    ActionTemplate,
    InvalidConfig,
    ScenarioConfig,
    ScenarioMix,
    Trace,
    simulate_traces,
)
from .state_model import (
    DEFAULT_RISK_RULES,
    DataExposure,
    Reversibility,
    RiskRule,
    ToolEscalation,
    rules_from_dicts,
)

CONFIG_FORMAT_VERSION = 1


@dataclass
class CategorySettings:
    name: str
    count: int
    generator: Optional[np.ndarray]
    level_completion_prob: float
    scenarios: tuple[ScenarioMix, ...]


@dataclass
class AppConfig:
    profiles: dict[str, ToolRiskProfile]
    manifest: FileManifest
    risk_rules: tuple[RiskRule, ...]
    categories: dict[str, CategorySettings]  # insertion-ordered
    seeds: tuple[int, ...]
    max_length: int
    horizon: int
    fpr_budget: float
    default_threshold: float
    ponr_threshold: float

    @property
    def default_seed(self) -> int:
        return self.seeds[0]

    @property
    def total_count(self) -> int:
        return sum(c.count for c in self.categories.values())


def category_seed(master_seed: int, category: str) -> int:
    """Stable per-category seed; crc32 keeps it hash-salt independent."""
    return master_seed ^ zlib.crc32(category.encode("utf-8"))


def _parse_exposure(name: str) -> Optional[DataExposure]:
    return DataExposure[name] if name else None


def _parse_profiles(raw: dict) -> dict[str, ToolRiskProfile]:
    profiles = {}
    for tool, entry in raw.items():
        profiles[tool] = ToolRiskProfile(
            tool,
            ToolEscalation[entry["escalation"]],
            Reversibility[entry["reversibility"]],
            DataExposure[entry.get("default_exposure", "NONE")],
        )
    return profiles


def _parse_scenarios(raw: list[dict]) -> tuple[ScenarioMix, ...]:
    mixes = []
    for entry in raw:
        actions = tuple(
            ActionTemplate(tool, _parse_exposure(sens), float(weight))
            for tool, sens, weight in entry["actions"]
        )
        mixes.append(
            ScenarioMix(float(entry["weight"]), actions, float(entry["completion_prob"]))
        )
    return tuple(mixes)


def load_config(path: Optional[str | Path] = None) -> AppConfig:
    """Load a TOML config; with no path, load the packaged default."""
    if path is None:
        text = (
            resources.files("safetydrift").joinpath("data/default_config.toml")
        ).read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise InvalidConfig(f"bad config file: {exc}") from exc
    if raw.get("format_version") != CONFIG_FORMAT_VERSION:
        raise InvalidConfig(
            f"unsupported config format_version {raw.get('format_version')!r}"
        )

    categories = {}
    for name, entry in raw.get("categories", {}).items():
        level = entry.get("level", {})
        generator = (
            np.asarray(level["generator"], dtype=float) if "generator" in level else None
        )
        categories[name] = CategorySettings(
            name=name,
            count=int(entry.get("count", 0)),
            generator=generator,
            level_completion_prob=float(level.get("completion_prob", 0.10)),
            scenarios=_parse_scenarios(entry.get("scenarios", [])),
        )

    manifest = FileManifest(
        [
            (m["pattern"], DataExposure[m["exposure"]])
            for m in raw.get("manifest", [])
        ]
    )
    rules = (
        rules_from_dicts(raw["rules"]) if "rules" in raw else DEFAULT_RISK_RULES
    )
    simulator = raw.get("simulator", {})
    mon = raw.get("monitor", {})
    return AppConfig(
        profiles=_parse_profiles(raw.get("tools", {})),
        manifest=manifest,
        risk_rules=rules,
        categories=categories,
        seeds=tuple(simulator.get("seeds", [7, 11, 13, 17, 19])),
        max_length=int(simulator.get("max_length", 25)),
        horizon=int(mon.get("horizon", 5)),
        fpr_budget=float(mon.get("fpr_budget", 0.15)),
        default_threshold=float(mon.get("default_threshold", 0.45)),
        ponr_threshold=float(mon.get("ponr_threshold", 0.85)),
    )


def scenario_config(
    app: AppConfig, category: str, mode: str, master_seed: int
) -> ScenarioConfig:
    settings = app.categories[category]
    return ScenarioConfig(
        category=category,
        mode=mode,
        seed=category_seed(master_seed, category),
        generator=settings.generator,
        scenarios=settings.scenarios,
        completion_prob=settings.level_completion_prob,
        max_length=app.max_length,
        profiles=app.profiles,
    )


def _allocate(counts: dict[str, int], total: Optional[int]) -> dict[str, int]:
    """Scale per-category counts to a requested total (largest remainder)."""
    if total is None:
        return dict(counts)
    base_total = sum(counts.values())
    shares = {k: v * total / base_total for k, v in counts.items()}
    alloc = {k: int(s) for k, s in shares.items()}
    leftovers = sorted(
        counts, key=lambda k: (alloc[k] - shares[k], k)
    )  # biggest fractional part first
    for k in leftovers[: total - sum(alloc.values())]:
        alloc[k] += 1
    return alloc


def simulate_corpus(
    app: AppConfig,
    master_seed: Optional[int] = None,
    n_total: Optional[int] = None,
    mode: str = "tool",
) -> list[Trace]:
    """Simulate the default multi-category corpus, in config order."""
    seed = app.default_seed if master_seed is None else master_seed
    alloc = _allocate(
        {name: c.count for name, c in app.categories.items()}, n_total
    )
    corpus: list[Trace] = []
    for name in app.categories:
        corpus.extend(
            simulate_traces(scenario_config(app, name, mode, seed), alloc[name])
        )
    return corpus
