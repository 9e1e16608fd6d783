"""Flat key -> array archives with a JSON manifest, byte-stable for equal contents."""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict

import numpy as np

from .detector import Detector, DetectorConfig
from .generator import StyleDiscriminator, TunedGenerator
from .lm import Backbone, ExpertBank, ModelDims, Vocabulary

_EPOCH = (1980, 1, 1, 0, 0, 0)


def _entry(zf, name, data):
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def save_checkpoint(path, arrays, manifest=None):
    """Write ``arrays`` (name -> ndarray) and ``manifest`` (JSON-able dict) to ``path``."""
    with zipfile.ZipFile(path, "w") as zf:
        meta = {"arrays": sorted(arrays), **(manifest or {})}
        _entry(zf, "manifest.json", json.dumps(meta, sort_keys=True, indent=1).encode("utf-8"))
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.save(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            _entry(zf, f"arrays/{name}.npy", buf.getvalue())


def load_checkpoint(path):
    """Return ``(arrays, manifest)``."""
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json").decode("utf-8"))
        arrays = {name: np.load(io.BytesIO(zf.read(f"arrays/{name}.npy")), allow_pickle=False)
                  for name in manifest["arrays"]}
    return arrays, manifest


# -- model archives ------------------------------------------------------------------

def save_generator(path, gen, seed=None):
    arrays = {f"backbone.{k}": v for k, v in gen.backbone.state_dict().items()}
    arrays.update({f"bank.{k}": v for k, v in gen.bank.state_dict().items()})
    arrays.update({k: t.data for k, t in gen.discriminator.params().items()})
    manifest = {"kind": "generator", "dims": asdict(gen.backbone.dims), "vocab": gen.vocab.to_list(),
                "n_experts": gen.bank.n_experts, "epsilon": gen.epsilon, "seed": seed, "log": [
                    {k: v for k, v in rec.items() if k != "wall_ms"} for rec in gen.log]}
    save_checkpoint(path, arrays, manifest)


def load_generator(path):
    arrays, manifest = load_checkpoint(path)
    if manifest.get("kind") != "generator":
        raise ValueError(f"{path} is not a generator checkpoint")
    vocab = Vocabulary(manifest["vocab"])
    dims = ModelDims(**manifest["dims"])
    bb = Backbone(len(vocab), dims)
    bb.load_state_dict({k[len("backbone."):]: v for k, v in arrays.items() if k.startswith("backbone.")})
    bb.freeze()
    bank = ExpertBank(manifest["n_experts"], dims.d, dims.rank, dims.adapter_scale)
    bank.load_state_dict({k[len("bank."):]: v for k, v in arrays.items() if k.startswith("bank.")})
    disc = StyleDiscriminator(dims.d)
    for k, t in disc.params().items():
        t.data = np.array(arrays[k])
    return TunedGenerator(bb, bank, disc, vocab, manifest["epsilon"], manifest.get("log", []))


def save_detector(path, detector, vocab):
    manifest = {"kind": "detector", "config": asdict(detector.cfg), "vocab": vocab.to_list()}
    save_checkpoint(path, detector.state_dict(), manifest)


def load_detector(path):
    arrays, manifest = load_checkpoint(path)
    if manifest.get("kind") != "detector":
        raise ValueError(f"{path} is not a detector checkpoint")
    vocab = Vocabulary(manifest["vocab"])
    det = Detector(len(vocab), DetectorConfig(**manifest["config"]))
    det.load_state_dict(arrays)
    return det, vocab
