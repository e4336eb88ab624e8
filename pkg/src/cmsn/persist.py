"""Model persistence: version-stamped JSON manifests plus one flat ``.npy``
parameter file per network.

``.npy`` payloads and ``sort_keys`` JSON are both deterministic functions of
their content, so saving the same trained model twice produces byte-identical
artifacts (the determinism contract the CLI relies on).  The parameter file
holds every block of the network, running batch-norm statistics included, in
a fixed layer/key order.
"""

import hashlib
import json
import os

import numpy as np

from . import nn, optim
from .baselines import CommitteeModel
from .frontend import CnnArch, CnnBank
from .mst import CmsnConfig, CmsnModel, build_cmsn_structure

FORMAT_VERSION = 1
MANIFEST = "manifest.json"

# serialization order of every parameter block, per layer kind
_BLOCK_KEYS = {
    nn.Conv1d: ("W", "b"),
    nn.Dense: ("W", "b"),
    nn.BatchNorm: ("gamma", "beta", "run_mean", "run_var"),
}


class PersistError(RuntimeError):
    """Model directory missing, malformed, or from an unsupported version."""


def full_vector(net):
    """All parameter blocks (statistics included) as one flat float64 vector."""
    chunks = []
    for layer, block in zip(net.layers, net.params):
        for key in _BLOCK_KEYS.get(type(layer), ()):
            chunks.append(block[key].ravel())
    return np.concatenate(chunks) if chunks else np.zeros(0)


def load_full_vector(net, vec):
    vec = np.asarray(vec, dtype=np.float64)
    pos = 0
    for layer, block in zip(net.layers, net.params):
        for key in _BLOCK_KEYS.get(type(layer), ()):
            n = block[key].size
            block[key] = vec[pos:pos + n].reshape(block[key].shape).copy()
            pos += n
    if pos != vec.size:
        raise PersistError(f"parameter file length {vec.size} != expected {pos}")
    return net


def hash_networks(nets):
    """SHA-256 over the concatenated full parameter vectors (model identity)."""
    digest = hashlib.sha256()
    for net in nets:
        digest.update(full_vector(net).tobytes())
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# layer / config JSON
# ---------------------------------------------------------------------------

_LAYER_NAMES = {
    nn.Conv1d: "conv1d", nn.BatchNorm: "batchnorm", nn.Relu: "relu",
    nn.Tanh: "tanh", nn.MaxPool1d: "maxpool1d", nn.Dropout: "dropout",
    nn.Dense: "dense", nn.Softmax: "softmax",
}
_LAYER_TYPES = {v: k for k, v in _LAYER_NAMES.items()}


def layers_to_json(layers):
    out = []
    for layer in layers:
        entry = {"kind": _LAYER_NAMES[type(layer)]}
        entry.update({k: getattr(layer, k) for k in layer.__dataclass_fields__})
        out.append(entry)
    return out


def layers_from_json(entries):
    layers = []
    for entry in entries:
        kwargs = {k: v for k, v in entry.items() if k != "kind"}
        layers.append(_LAYER_TYPES[entry["kind"]](**kwargs))
    return layers


def arch_to_json(arch):
    return {
        "classes": arch.classes, "input_len": arch.input_len,
        "channels": arch.channels, "conv_filters": list(arch.conv_filters),
        "kernel": arch.kernel, "conv_strides": list(arch.conv_strides),
        "pool_widths": list(arch.pool_widths), "dropout": arch.dropout,
        "dense_units": arch.dense_units, "pad": arch.pad,
        "channel_layout": arch.channel_layout, "bn_momentum": arch.bn_momentum,
    }


def arch_from_json(obj):
    return CnnArch(classes=obj["classes"], input_len=obj["input_len"],
                   channels=obj["channels"], conv_filters=tuple(obj["conv_filters"]),
                   kernel=obj["kernel"], conv_strides=tuple(obj["conv_strides"]),
                   pool_widths=tuple(obj["pool_widths"]), dropout=obj["dropout"],
                   dense_units=obj["dense_units"], pad=obj["pad"],
                   channel_layout=obj["channel_layout"],
                   bn_momentum=obj.get("bn_momentum", 0.9))


def cmsn_config_to_json(config):
    return {
        "classes": config.classes, "members": config.members,
        "group_size": config.group_size, "stages": config.stages,
        "schedule": list(config.schedule), "cnn_epochs": config.cnn_epochs,
        "fcn_epochs": config.fcn_epochs, "hidden": list(config.hidden),
        "arch": arch_to_json(config.arch),
        "adam": vars(config.adam), "lm": vars(config.lm), "seed": config.seed,
    }


def cmsn_config_from_json(obj):
    return CmsnConfig(
        classes=obj["classes"], members=obj["members"],
        group_size=obj["group_size"], stages=obj["stages"],
        schedule=tuple(obj["schedule"]), cnn_epochs=obj["cnn_epochs"],
        fcn_epochs=obj["fcn_epochs"], hidden=tuple(obj["hidden"]),
        arch=arch_from_json(obj["arch"]),
        adam=optim.AdamConfig(**obj["adam"]), lm=optim.LmConfig(**obj["lm"]),
        seed=obj["seed"])


def _write_manifest(out_dir, payload):
    payload = dict(payload, format_version=FORMAT_VERSION)
    with open(os.path.join(out_dir, MANIFEST), "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)


def _read_manifest(model_dir):
    path = os.path.join(model_dir, MANIFEST)
    if not os.path.exists(path):
        raise PersistError(f"no model manifest at {path}")
    with open(path) as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise PersistError(
            f"unsupported model format {manifest.get('format_version')}")
    return manifest


# ---------------------------------------------------------------------------
# multistage model
# ---------------------------------------------------------------------------

def save_cmsn(model, out_dir):
    """Model directory: manifest + bank/member npy files + per-stage npy files."""
    os.makedirs(os.path.join(out_dir, "bank"), exist_ok=True)
    for k, net in enumerate(model.bank.members):
        np.save(os.path.join(out_dir, "bank", f"member_{k:02d}.npy"), full_vector(net))
    for stage in model.stages:
        sdir = os.path.join(out_dir, f"stage{stage.spec.index:02d}")
        os.makedirs(sdir, exist_ok=True)
        g = stage.spec.group_size
        for i, net in enumerate(stage.networks):
            c, gi = divmod(i, g)
            np.save(os.path.join(sdir, f"c{c:02d}_g{gi}.npy"), full_vector(net))
    _write_manifest(out_dir, {"kind": "cmsn",
                              "config": cmsn_config_to_json(model.config)})
    return out_dir


def load_cmsn(model_dir):
    manifest = _read_manifest(model_dir)
    if manifest["kind"] != "cmsn":
        raise PersistError(f"expected a cmsn model, found {manifest['kind']!r}")
    config = cmsn_config_from_json(manifest["config"])
    model = build_cmsn_structure(config)
    for k, net in enumerate(model.bank.members):
        vec = np.load(os.path.join(model_dir, "bank", f"member_{k:02d}.npy"))
        load_full_vector(net, vec)
    for stage in model.stages:
        sdir = os.path.join(model_dir, f"stage{stage.spec.index:02d}")
        g = stage.spec.group_size
        for i, net in enumerate(stage.networks):
            c, gi = divmod(i, g)
            load_full_vector(net, np.load(os.path.join(sdir, f"c{c:02d}_g{gi}.npy")))
    return model


# ---------------------------------------------------------------------------
# single networks and committees
# ---------------------------------------------------------------------------

def save_network(net, out_dir, kind="network", meta=None):
    os.makedirs(out_dir, exist_ok=True)
    np.save(os.path.join(out_dir, "params.npy"), full_vector(net))
    _write_manifest(out_dir, {
        "kind": kind, "meta": meta or {},
        "network": {"input_shape": list(net.input_shape),
                    "layers": layers_to_json(net.layers), "seed": net.seed}})
    return out_dir


def _rebuild_network(desc):
    net = nn.build_network(tuple(desc["input_shape"]),
                           layers_from_json(desc["layers"]), seed=desc["seed"])
    return net


def load_network(model_dir, expect_kind=None):
    manifest = _read_manifest(model_dir)
    if expect_kind and manifest["kind"] != expect_kind:
        raise PersistError(f"expected {expect_kind!r}, found {manifest['kind']!r}")
    net = _rebuild_network(manifest["network"])
    load_full_vector(net, np.load(os.path.join(model_dir, "params.npy")))
    return net, manifest


def save_committee(model, out_dir, meta=None):
    os.makedirs(out_dir, exist_ok=True)
    for k, net in enumerate(model.members):
        np.save(os.path.join(out_dir, f"member_{k:02d}.npy"), full_vector(net))
    first = model.members[0]
    _write_manifest(out_dir, {
        "kind": f"{model.kind}-committee", "meta": meta or {},
        "seeds": [int(s) for s in model.seeds],
        "input_shape": list(model.input_shape),
        "network": {"input_shape": list(first.input_shape),
                    "layers": layers_to_json(first.layers), "seed": first.seed}})
    return out_dir


def load_committee(model_dir):
    manifest = _read_manifest(model_dir)
    if not manifest["kind"].endswith("-committee"):
        raise PersistError(f"expected a committee, found {manifest['kind']!r}")
    members = []
    for k in range(len(manifest["seeds"])):
        net = _rebuild_network(manifest["network"])
        load_full_vector(net, np.load(os.path.join(model_dir, f"member_{k:02d}.npy")))
        members.append(net)
    return CommitteeModel(kind=manifest["kind"].split("-")[0], members=members,
                          seeds=manifest["seeds"],
                          input_shape=tuple(manifest["input_shape"]))


def hash_model_dir(model_dir):
    """SHA-256 over every file's bytes, in sorted relative-path order."""
    digest = hashlib.sha256()
    for root, _dirs, files in sorted(os.walk(model_dir)):
        for name in sorted(files):
            path = os.path.join(root, name)
            digest.update(os.path.relpath(path, model_dir).encode())
            with open(path, "rb") as fh:
                digest.update(fh.read())
    return digest.hexdigest()
