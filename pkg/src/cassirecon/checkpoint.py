"""Self-describing model checkpoints on top of the PGDW1 record format.

Besides one record per parameter, ``meta.*`` records carry the architecture
so a checkpoint can be reloaded without its training config.
"""
from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .dst import DSTConfig
from .io import FormatError, read_checkpoint, write_checkpoint
from .unfolding import UnfoldingModel


def model_records(model: UnfoldingModel) -> "OrderedDict[str, np.ndarray]":
    cfg = model.cfg
    meta = OrderedDict([
        ("meta.stages", [model.num_stages]),
        ("meta.bands", [model.bands]),
        ("meta.dispersion_step", [model.step]),
        ("meta.base_channels", [cfg.base_channels]),
        ("meta.blocks_per_level", list(cfg.blocks_per_level)),
        ("meta.heads_per_level", list(cfg.heads_per_level)),
        ("meta.dense_growth", [-1 if cfg.dense_growth is None else cfg.dense_growth]),
        ("meta.gdfn_expansion", [cfg.gdfn_expansion]),
        ("meta.global_residual", [float(cfg.global_residual)]),
        ("meta.share_denoiser", [float(model.share_denoiser)]),
    ])
    records = OrderedDict((k, np.asarray(v, dtype=np.float64)) for k, v in meta.items())
    records.update(model.state_dict())
    return records


def save_model(path, model: UnfoldingModel) -> None:
    write_checkpoint(path, model_records(model))


def load_model(path, dtype=np.float64) -> UnfoldingModel:
    records = read_checkpoint(path)
    try:
        meta = {k[5:]: v for k, v in records.items() if k.startswith("meta.")}
        growth = int(meta["dense_growth"][0])
        cfg = DSTConfig(
            base_channels=int(meta["base_channels"][0]),
            blocks_per_level=tuple(int(b) for b in meta["blocks_per_level"]),
            heads_per_level=tuple(int(h) for h in meta["heads_per_level"]),
            dense_growth=None if growth < 0 else growth,
            gdfn_expansion=float(meta["gdfn_expansion"][0]),
            global_residual=bool(meta["global_residual"][0]),
        )
        shared = bool(meta["share_denoiser"][0]) if "share_denoiser" in meta else False
        model = UnfoldingModel(int(meta["stages"][0]), int(meta["bands"][0]), int(meta["dispersion_step"][0]), cfg,
                               share_denoiser=shared)
        model.load_state_dict(OrderedDict((k, v) for k, v in records.items() if not k.startswith("meta.")))
    except (KeyError, ValueError) as exc:
        raise FormatError(path, 8, f"checkpoint does not describe a model: {exc}") from None
    if dtype != np.float64:
        model.astype(dtype)
        model.dtype = dtype
    return model
