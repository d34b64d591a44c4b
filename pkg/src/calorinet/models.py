"""The four learned model variants and the METs lookup baseline."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .core import ACTIVITIES, UNLABELED
from .nn.layers import ShapeError
from .nn.model import Model
from .silhouette import TemporalScaleConfig

VARIANTS = ("CaloriNet", "SiluCalNet", "AccuCalNet", "ZhuVariant")
ZHU_WINDOW = 256


class InputContractError(ValueError):
    pass


@dataclass(frozen=True)
class BranchHyper:
    """Filter counts, kernel and stride for both convolution stacks."""

    sil_filters: tuple = (8, 4)
    sil_kernel: int = 5
    acc_filters: tuple = (8, 4)
    acc_kernel: int = 5
    stride: int = 2
    pool: int = 2
    zhu_hidden: int = 32
    dtype: str = "float64"


def silhouette_layers(h: BranchHyper, activation="relu"):
    layers = []
    for f in h.sil_filters:
        layers += [
            {"kind": "conv2d", "filters": f, "kernel": h.sil_kernel, "stride": h.stride,
             "pad": h.sil_kernel // 2},
            {"kind": activation},
            {"kind": "maxpool", "size": h.pool, "stride": h.stride},
        ]
    return layers


def accel_layers(h: BranchHyper, activation="relu", channels=6):
    layers = []
    for f in h.acc_filters:
        layers += [
            {"kind": "conv1d_grouped", "filters_per_group": f, "kernel": h.acc_kernel,
             "stride": h.stride, "groups": channels},
            {"kind": activation},
            {"kind": "maxpool", "size": h.pool, "stride": h.stride},
        ]
    return layers


@dataclass
class ModelVariant:
    name: str
    model: Model
    scales: TemporalScaleConfig
    accel_len: int = 0
    gravity_removed: bool = True

    @property
    def needs_silhouette(self) -> bool:
        return self.model.sil is not None

    @property
    def needs_accel(self) -> bool:
        return self.model.acc is not None

    @property
    def inputs(self) -> str:
        if self.needs_silhouette and self.needs_accel:
            return "both"
        return "silhouette" if self.needs_silhouette else "accel"

    def meta(self) -> dict:
        return {"variant": self.name, "T": self.scales.T, "N": self.scales.N,
                "accel_len": self.accel_len, "gravity_removed": self.gravity_removed}

    @classmethod
    def from_checkpoint(cls, model: Model, meta: dict) -> "ModelVariant":
        return cls(meta["variant"], model, TemporalScaleConfig(meta["T"], meta["N"]).validate(),
                   meta["accel_len"], meta["gravity_removed"])


def build_variant(name: str, image_shape=(240, 320), scales: TemporalScaleConfig = TemporalScaleConfig(),
                  accel_len=None, hyper: BranchHyper = BranchHyper(), seed: int = 0) -> ModelVariant:
    """Assemble a variant.

    ``accel_len`` defaults to the longest silhouette window (``dt_0``) so both
    modalities cover the same horizon; ZhuVariant always uses 256 raw samples.
    """
    scales = scales.validate()
    if accel_len is None:
        accel_len = scales.deltas[0]
    sil = {"input": [int(image_shape[0]), int(image_shape[1]), scales.n_channels],
           "layers": silhouette_layers(hyper)}
    acc = {"input": [int(accel_len), 6], "layers": accel_layers(hyper)}
    head = [{"kind": "dense", "units": 1}]
    gravity_removed = True
    if name == "CaloriNet":
        spec = {"silhouette": sil, "accel": acc}
    elif name == "SiluCalNet":
        spec = {"silhouette": sil, "accel": None}
        accel_len = 0
    elif name == "AccuCalNet":
        spec = {"silhouette": None, "accel": acc}
    elif name == "ZhuVariant":
        accel_len = ZHU_WINDOW
        spec = {"silhouette": None,
                "accel": {"input": [ZHU_WINDOW, 6], "layers": accel_layers(hyper, "tanh")}}
        head = [{"kind": "dense", "units": hyper.zhu_hidden}, {"kind": "tanh"},
                {"kind": "dense", "units": 1}]
        gravity_removed = False
    else:
        raise ValueError(f"unknown variant {name!r}; expected one of {', '.join(VARIANTS)}")
    spec["head"] = head
    spec["dtype"] = hyper.dtype
    return ModelVariant(name, Model(spec, seed=seed), scales, accel_len, gravity_removed)


def check_inputs(variant: ModelVariant, has_silhouette: bool, has_accel: bool) -> None:
    """Reject datasets that cannot feed ``variant``, and modalities it would ignore."""
    if variant.needs_silhouette and not has_silhouette:
        raise InputContractError(f"{variant.name} needs silhouettes but none are available")
    if variant.needs_accel and not has_accel:
        raise InputContractError(f"{variant.name} needs accelerometer data but none is available")


def forward_variant(variant: ModelVariant, silhouette=None, accel=None):
    try:
        return variant.model.forward(silhouette, accel)
    except ShapeError as exc:
        raise InputContractError(f"{variant.name}: {exc}") from exc


# ------------------------------------------------------------------- METs

@dataclass
class MetsTable:
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        missing = [a for a in ACTIVITIES if a not in self.values]
        if missing:
            raise ValueError(f"METs table lacks {', '.join(missing)}")
        bad = [a for a, v in self.values.items() if not v > 0]
        if bad:
            raise ValueError(f"METs must be positive: {', '.join(bad)}")

    def __getitem__(self, activity) -> float:
        try:
            return self.values[activity]
        except KeyError:
            raise KeyError(f"no MET value for activity {activity!r}") from None


def load_mets_table(path=None) -> MetsTable:
    """Read ``activity,met`` rows; defaults to the bundled table."""
    if path is None:
        text = resources.files("calorinet.data").joinpath("mets.csv").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    rows = list(csv.DictReader(text.splitlines()))
    return MetsTable({r["activity"].strip(): float(r["met"]) for r in rows})


def met_to_kcal_per_min(met, weight_kg):
    # 1 MET = 3.5 ml O2/kg/min; ~5 kcal per litre of O2
    return np.asarray(met) * 3.5 * weight_kg / 200.0


def mets_predict(labels, weight_kg: float, table: MetsTable, frames) -> np.ndarray:
    """Step-wise kcal/min per frame from the activity labels; NaN when unlabeled."""
    if not weight_kg > 0:
        raise ValueError("subject weight must be positive")
    frames = np.asarray(frames, dtype=np.int64)
    out = np.full(frames.shape, np.nan)
    for lab in labels:
        if lab.activity == UNLABELED:
            continue
        sel = (frames >= lab.start) & (frames <= lab.end)
        out[sel] = met_to_kcal_per_min(table[lab.activity], weight_kg)
    return out
