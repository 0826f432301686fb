"""Deterministic synthetic time-series data and nested train/validation/test splits."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError

ARCHETYPES = ("load", "solar", "wind", "firm")

#: (base, daily amplitude, weekly amplitude) per archetype
_ARCHETYPE_SHAPE = {
    "load": (0.55, 0.25, 0.10),
    "solar": (0.0, 1.0, 0.25),  # daily term is the daylight bump, weekly modulates it
    "wind": (0.50, 0.15, 0.30),
    "firm": (0.85, 0.05, 0.05),
}

STEPS_PER_DAY = 24
STEPS_PER_WEEK = 7 * STEPS_PER_DAY
NIGHT_START, NIGHT_END = 18, 6  # solar output is exactly zero outside [6, 18)


@dataclass(frozen=True)
class PriceRange:
    low: float = 0.0
    high: float = 0.0

    def width(self) -> float:
        return self.high - self.low


@dataclass(frozen=True)
class DatasetConfig:
    archetypes: tuple[str, ...]
    n_steps: int = 4096
    noise: float = 0.08
    price_p: tuple[PriceRange, ...] = ()
    price_q: tuple[PriceRange, ...] = ()
    price_loss: PriceRange = PriceRange(0.0, 0.0)

    def __post_init__(self):
        for a in self.archetypes:
            if a not in ARCHETYPES:
                raise ConfigurationError(f"unknown archetype {a!r}")
        if self.price_p and len(self.price_p) != len(self.archetypes):
            raise ConfigurationError("price_p must have one range per unit")
        if self.price_q and len(self.price_q) != len(self.archetypes):
            raise ConfigurationError("price_q must have one range per unit")


@dataclass(frozen=True)
class Dataset:
    """Per-timestep scalers in [0, 1] plus sampled prices, all seeded."""

    scalers: np.ndarray  # (n_steps, n_units)
    price_p: np.ndarray  # (n_steps, n_units), currency/MWh
    price_q: np.ndarray  # (n_steps, n_units), currency/MVArh
    price_loss: np.ndarray  # (n_steps,)
    seed: int
    config: DatasetConfig

    def __len__(self) -> int:
        return self.scalers.shape[0]


def _daylight(hours: np.ndarray) -> np.ndarray:
    up = np.sin(np.pi * (hours - NIGHT_END) / (NIGHT_START - NIGHT_END))
    return np.where((hours >= NIGHT_END) & (hours < NIGHT_START), np.maximum(up, 0.0), 0.0)


def base_profile(archetype: str, t: np.ndarray, phase_day: float, phase_week: float) -> np.ndarray:
    """Noise-free daily/weekly sinusoid profile of one unit, clipped to [0, 1]."""
    base, a_day, a_week = _ARCHETYPE_SHAPE[archetype]
    hours = t % STEPS_PER_DAY
    if archetype == "solar":
        weekly = 1.0 - a_week * (0.5 + 0.5 * np.sin(2 * np.pi * t / STEPS_PER_WEEK + phase_week))
        prof = a_day * _daylight(hours) * weekly
    else:
        prof = (
            base
            + a_day * np.sin(2 * np.pi * t / STEPS_PER_DAY + phase_day)
            + a_week * np.sin(2 * np.pi * t / STEPS_PER_WEEK + phase_week)
        )
    return np.clip(prof, 0.0, 1.0)


def generate_timeseries(config: DatasetConfig, seed: int) -> Dataset:
    """Synthetic scaler/price time series, fully reproducible from (config, seed)."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xDA7A)))
    t = np.arange(config.n_steps, dtype=float)
    n_units = len(config.archetypes)
    scalers = np.empty((config.n_steps, n_units))
    for u, arch in enumerate(config.archetypes):
        phase_day = rng.uniform(0, 2 * np.pi)
        phase_week = rng.uniform(0, 2 * np.pi)
        prof = base_profile(arch, t, phase_day, phase_week)
        prof = np.clip(prof + config.noise * rng.standard_normal(config.n_steps), 0.0, 1.0)
        if arch == "solar":
            hours = t % STEPS_PER_DAY
            prof[(hours < NIGHT_END) | (hours >= NIGHT_START)] = 0.0
        scalers[:, u] = prof

    price_p = np.zeros((config.n_steps, n_units))
    price_q = np.zeros((config.n_steps, n_units))
    for u in range(n_units):
        pr = config.price_p[u] if config.price_p else PriceRange()
        if pr.width() > 0 or pr.low != 0:
            price_p[:, u] = rng.uniform(pr.low, pr.high, config.n_steps)
        qr = config.price_q[u] if config.price_q else PriceRange()
        if qr.width() > 0 or qr.low != 0:
            price_q[:, u] = rng.uniform(qr.low, qr.high, config.n_steps)
    lr = config.price_loss
    if lr.width() > 0 or lr.low != 0:
        price_loss = rng.uniform(lr.low, lr.high, config.n_steps)
    else:
        price_loss = np.zeros(config.n_steps)
    return Dataset(scalers, price_p, price_q, price_loss, seed, config)


@dataclass(frozen=True)
class SplitSpec:
    """Nested resampling: deterministic tail test split, seeded train/validation."""

    test_fraction: float = 0.2
    train_size: int = 800
    val_size: int = 64
    split_seed: int = 0


@dataclass(frozen=True)
class Splits:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray


def nested_split(dataset: Dataset, spec: SplitSpec) -> Splits:
    """Last ``test_fraction`` of timesteps is the test set regardless of the
    split seed; the remainder is shuffled into validation and (subsampled)
    training indices."""
    n = len(dataset)
    n_test = int(round(n * spec.test_fraction))
    test = np.arange(n - n_test, n)
    rest = np.arange(n - n_test)
    if spec.train_size + spec.val_size > len(rest):
        raise ConfigurationError(
            f"requested train+val = {spec.train_size + spec.val_size} exceeds {len(rest)} available"
        )
    rng = np.random.default_rng(np.random.SeedSequence((spec.split_seed, 0x5B11)))
    shuffled = rng.permutation(rest)
    validation = np.sort(shuffled[: spec.val_size])
    train = np.sort(shuffled[spec.val_size : spec.val_size + spec.train_size])
    return Splits(train=train, validation=validation, test=test)


# -- disk cache --------------------------------------------------------------


def save_dataset(directory, dataset: Dataset) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "scalers.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"unit_{i}_{a}" for i, a in enumerate(dataset.config.archetypes)])
        for row in dataset.scalers:
            writer.writerow([f"{v:.10g}" for v in row])
    sidecar = {"seed": dataset.seed, "config": asdict(dataset.config)}
    with open(directory / "dataset.json", "w") as fh:
        json.dump(sidecar, fh, indent=2)


def load_dataset(directory) -> Dataset:
    """Regenerate the dataset exactly from the JSON sidecar."""
    with open(Path(directory) / "dataset.json") as fh:
        sidecar = json.load(fh)
    cfg = sidecar["config"]
    config = DatasetConfig(
        archetypes=tuple(cfg["archetypes"]),
        n_steps=cfg["n_steps"],
        noise=cfg["noise"],
        price_p=tuple(PriceRange(**r) for r in cfg["price_p"]),
        price_q=tuple(PriceRange(**r) for r in cfg["price_q"]),
        price_loss=PriceRange(**cfg["price_loss"]),
    )
    return generate_timeseries(config, sidecar["seed"])
