"""Encoder/decoder networks and their persistence.

Three families of autoencoder halves over the (2, n_delay, n_tx) channel
tensor:

* csinet: encoder = conv + dense bottleneck; decoder = dense + two residual
  refinement blocks + output conv.
* stnet: a CNN stem in parallel with a single-block transformer stem over
  per-delay-row tokens; the CNN stem output is injected additively into the
  transformer stem input. Decoder output head is a conv + sigmoid.
* shared-stem decoder: the stnet decoder with its dense input projection and
  CNN stem shared across tasks while each task owns a private transformer
  stem and output conv.

All decoders end in a sigmoid so outputs live in [0, 1] like the normalized
channel tensors. Modules cache activations between forward and backward, so
every backward call must follow its matching forward.
"""

import hashlib
import json
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import (
    CheckpointIncompatibleError,
    CorruptHeaderError,
    DimensionMismatchError,
    InvalidArgumentError,
    ShapeMismatchError,
    TruncatedPayloadError,
)
from .nn import Conv2d, Dense, LeakyReLU, Module, Sigmoid, TransformerBlock

FAMILIES = ("csinet", "stnet")
ROLES = ("encoder", "decoder", "shared_stem_decoder")

CKPT_MAGIC = "CSICKPT1"


def _as_fraction(value):
    if isinstance(value, Fraction):
        return value
    if isinstance(value, str):
        return Fraction(value)
    if isinstance(value, (int, float)):
        return Fraction(value)
    raise InvalidArgumentError(f"compression_ratio must be a rational, got {value!r}")


@dataclass
class ModelConfig:
    family: str
    role: str
    compression_ratio: Fraction
    dims: tuple  # (n_delay, n_tx)
    n_tasks: int = 1
    cnn_width: int = 8
    embed_dim: int = 256
    ff_expansion: int = 2
    refine_channels: tuple = (8, 16)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidArgumentError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.role not in ROLES:
            raise InvalidArgumentError(f"role must be one of {ROLES}, got {self.role!r}")
        if self.role == "shared_stem_decoder" and self.family != "stnet":
            raise InvalidArgumentError("shared_stem_decoder is defined for the stnet family only")
        self.compression_ratio = _as_fraction(self.compression_ratio)
        self.dims = (int(self.dims[0]), int(self.dims[1]))
        if self.dims[0] < 1 or self.dims[1] < 1:
            raise InvalidArgumentError(f"dims must be positive, got {self.dims}")
        if self.n_tasks < 1:
            raise InvalidArgumentError(f"n_tasks must be >= 1, got {self.n_tasks}")
        m = self.compression_ratio * 2 * self.dims[0] * self.dims[1]
        if m.denominator != 1 or m.numerator < 1:
            raise InvalidArgumentError(
                f"code length 2*{self.dims[0]}*{self.dims[1]}*{self.compression_ratio} = {m} is not a positive integer"
            )
        self.refine_channels = tuple(int(c) for c in self.refine_channels)

    @property
    def n_delay(self):
        return self.dims[0]

    @property
    def n_tx(self):
        return self.dims[1]

    @property
    def flat_dim(self):
        return 2 * self.dims[0] * self.dims[1]

    @property
    def code_length(self):
        return int(self.compression_ratio * self.flat_dim)

    def to_dict(self):
        return {
            "family": self.family,
            "role": self.role,
            "compression_ratio": str(self.compression_ratio),
            "dims": list(self.dims),
            "n_tasks": self.n_tasks,
            "cnn_width": self.cnn_width,
            "embed_dim": self.embed_dim,
            "ff_expansion": self.ff_expansion,
            "refine_channels": list(self.refine_channels),
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["dims"] = tuple(d["dims"])
        d["refine_channels"] = tuple(d.get("refine_channels", (8, 16)))
        return cls(**d)

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _expect_planes(x, cfg):
    if x.ndim != 4 or x.shape[1:] != (2, cfg.n_delay, cfg.n_tx):
        raise DimensionMismatchError(
            f"input shape {x.shape} does not match (batch, 2, {cfg.n_delay}, {cfg.n_tx})")


def _expect_codes(code, cfg):
    if code.ndim != 2 or code.shape[1] != cfg.code_length:
        raise DimensionMismatchError(
            f"code shape {code.shape} does not match (batch, {cfg.code_length})")


def _tokens_from_planes(x):
    # (B, 2, n_delay, n_tx) -> (B, n_delay, 2*n_tx) with one token per delay row
    b, c, nd, nt = x.shape
    return np.ascontiguousarray(x.transpose(0, 2, 1, 3)).reshape(b, nd, c * nt)


def _planes_from_tokens(t, n_tx):
    b, nd, d = t.shape
    return np.ascontiguousarray(t.reshape(b, nd, d // n_tx, n_tx).transpose(0, 2, 1, 3))


class RefineBlock(Module):
    """Residual 3x3 conv block 2 -> c1 -> c2 -> 2 with an additive skip."""

    def __init__(self, channels, rng):
        super().__init__()
        c1, c2 = channels
        self.conv1 = self.add_child("conv1", Conv2d(2, c1, rng))
        self.act1 = self.add_child("act1", LeakyReLU())
        self.conv2 = self.add_child("conv2", Conv2d(c1, c2, rng))
        self.act2 = self.add_child("act2", LeakyReLU())
        self.conv3 = self.add_child("conv3", Conv2d(c2, 2, rng))
        self.act_out = self.add_child("act_out", LeakyReLU())

    def forward(self, x):
        y = self.conv3(self.act2(self.conv2(self.act1(self.conv1(x)))))
        return self.act_out(x + y)

    def backward(self, dy):
        ds = self.act_out.backward(dy)
        dx = self.conv1.backward(self.act1.backward(self.conv2.backward(self.act2.backward(self.conv3.backward(ds)))))
        return dx + ds


class CnnStem(Module):
    def __init__(self, width, rng):
        super().__init__()
        self.conv1 = self.add_child("conv1", Conv2d(2, width, rng))
        self.act = self.add_child("act", LeakyReLU())
        self.conv2 = self.add_child("conv2", Conv2d(width, 2, rng))

    def forward(self, x):
        return self.conv2(self.act(self.conv1(x)))

    def backward(self, dy):
        return self.conv1.backward(self.act.backward(self.conv2.backward(dy)))


class TransformerStem(Module):
    """Tokenizes delay rows, projects into the working width, applies one
    attention block, and projects back to plane layout."""

    def __init__(self, cfg, rng):
        super().__init__()
        token_dim = 2 * cfg.n_tx
        self.n_tx = cfg.n_tx
        self.in_proj = self.add_child("in_proj", Dense(token_dim, cfg.embed_dim, rng))
        self.block = self.add_child("block", TransformerBlock(cfg.embed_dim, cfg.ff_expansion * cfg.embed_dim, rng))
        self.out_proj = self.add_child("out_proj", Dense(cfg.embed_dim, token_dim, rng))

    def forward(self, x):
        t = self.out_proj(self.block(self.in_proj(_tokens_from_planes(x))))
        return _planes_from_tokens(t, self.n_tx)

    def backward(self, dy):
        dt = self.in_proj.backward(self.block.backward(self.out_proj.backward(_tokens_from_planes(dy))))
        return _planes_from_tokens(dt, self.n_tx)


class CsinetEncoder(Module):
    def __init__(self, cfg, rng):
        super().__init__()
        self.config = cfg
        self.conv = self.add_child("conv", Conv2d(2, 2, rng))
        self.act = self.add_child("act", LeakyReLU())
        self.fc = self.add_child("fc", Dense(cfg.flat_dim, cfg.code_length, rng))

    def forward(self, x):
        _expect_planes(x, self.config)
        # Center the [0,1] planes so codes carry signal rather than the 0.5 DC.
        a = self.act(self.conv(x - np.float32(0.5)))
        return self.fc(a.reshape(a.shape[0], -1))

    def backward(self, dy):
        da = self.fc.backward(dy)
        b = da.shape[0]
        cfg = self.config
        return self.conv.backward(self.act.backward(da.reshape(b, 2, cfg.n_delay, cfg.n_tx)))


class CsinetDecoder(Module):
    def __init__(self, cfg, rng):
        super().__init__()
        self.config = cfg
        self.fc = self.add_child("fc", Dense(cfg.code_length, cfg.flat_dim, rng))
        self.refine1 = self.add_child("refine1", RefineBlock(cfg.refine_channels, rng))
        self.refine2 = self.add_child("refine2", RefineBlock(cfg.refine_channels, rng))
        self.out = self.add_child("out", Conv2d(2, 2, rng))
        self.sig = self.add_child("sig", Sigmoid())

    def forward(self, code):
        cfg = self.config
        _expect_codes(code, cfg)
        x = self.fc(code).reshape(code.shape[0], 2, cfg.n_delay, cfg.n_tx)
        return self.sig(self.out(self.refine2(self.refine1(x))))

    def backward(self, dy):
        dx = self.refine1.backward(self.refine2.backward(self.out.backward(self.sig.backward(dy))))
        return self.fc.backward(dx.reshape(dx.shape[0], -1))


class _StnetTrunk(Module):
    """Parallel stems with additive injection: u = x + cnn(x), f = u + trans(u)."""

    def __init__(self, cfg, rng):
        super().__init__()
        self.cnn = self.add_child("cnn", CnnStem(cfg.cnn_width, rng))
        self.trans = self.add_child("trans", TransformerStem(cfg, rng))

    def forward(self, x):
        u = x + self.cnn(x)
        return u + self.trans(u)

    def backward(self, df):
        du = df + self.trans.backward(df)
        return du + self.cnn.backward(du)


class StnetEncoder(Module):
    def __init__(self, cfg, rng):
        super().__init__()
        self.config = cfg
        self.trunk = self.add_child("trunk", _StnetTrunk(cfg, rng))
        self.fc = self.add_child("fc", Dense(cfg.flat_dim, cfg.code_length, rng))

    def forward(self, x):
        _expect_planes(x, self.config)
        f = self.trunk(x - np.float32(0.5))
        return self.fc(f.reshape(f.shape[0], -1))

    def backward(self, dy):
        df = self.fc.backward(dy)
        cfg = self.config
        return self.trunk.backward(df.reshape(df.shape[0], 2, cfg.n_delay, cfg.n_tx))


class StnetDecoder(Module):
    def __init__(self, cfg, rng):
        super().__init__()
        self.config = cfg
        self.fc = self.add_child("fc", Dense(cfg.code_length, cfg.flat_dim, rng))
        self.trunk = self.add_child("trunk", _StnetTrunk(cfg, rng))
        self.out = self.add_child("out", Conv2d(2, 2, rng))
        self.sig = self.add_child("sig", Sigmoid())

    def forward(self, code):
        cfg = self.config
        _expect_codes(code, cfg)
        x = self.fc(code).reshape(code.shape[0], 2, cfg.n_delay, cfg.n_tx)
        return self.sig(self.out(self.trunk(x)))

    def backward(self, dy):
        dx = self.trunk.backward(self.out.backward(self.sig.backward(dy)))
        return self.fc.backward(dx.reshape(dx.shape[0], -1))


class SharedStemDecoder(Module):
    """Stnet decoder whose dense projection and CNN stem are shared across
    tasks; each task owns a transformer stem and output conv."""

    def __init__(self, cfg, rng):
        super().__init__()
        self.config = cfg
        self.fc = self.add_child("fc", Dense(cfg.code_length, cfg.flat_dim, rng))
        self.cnn = self.add_child("cnn", CnnStem(cfg.cnn_width, rng))
        self.task_trans = []
        self.task_out = []
        self.task_sig = []
        for k in range(cfg.n_tasks):
            self.task_trans.append(self.add_child(f"task{k}/trans", TransformerStem(cfg, rng)))
            self.task_out.append(self.add_child(f"task{k}/out", Conv2d(2, 2, rng)))
            self.task_sig.append(self.add_child(f"task{k}/sig", Sigmoid()))

    def _check_task(self, task):
        if not 0 <= task < self.config.n_tasks:
            raise InvalidArgumentError(f"task index {task} out of range for n_tasks={self.config.n_tasks}")

    def forward(self, code, task=0):
        self._check_task(task)
        self._task = task
        cfg = self.config
        _expect_codes(code, cfg)
        x = self.fc(code).reshape(code.shape[0], 2, cfg.n_delay, cfg.n_tx)
        self._u = x + self.cnn(x)
        f = self._u + self.task_trans[task](self._u)
        return self.task_sig[task](self.task_out[task](f))

    def backward(self, dy, task=None):
        task = self._task if task is None else task
        df = self.task_out[task].backward(self.task_sig[task].backward(dy))
        du = df + self.task_trans[task].backward(df)
        dx = du + self.cnn.backward(du)
        return self.fc.backward(dx.reshape(dx.shape[0], -1))

    def shared_parameters(self):
        return self.fc.parameters() + self.cnn.parameters()

    def task_parameters(self, task):
        self._check_task(task)
        return self.task_trans[task].parameters() + self.task_out[task].parameters()


def build_model(cfg, seed=0):
    """Deterministically initialized model for `cfg`; same (cfg, seed) twice
    gives identical parameters."""
    rng = np.random.default_rng(seed)
    if cfg.role == "encoder":
        model = CsinetEncoder(cfg, rng) if cfg.family == "csinet" else StnetEncoder(cfg, rng)
    elif cfg.role == "decoder":
        model = CsinetDecoder(cfg, rng) if cfg.family == "csinet" else StnetDecoder(cfg, rng)
    else:
        model = SharedStemDecoder(cfg, rng)
    return model.bind_names("")


def _batched(x, cfg):
    arr = np.asarray(x, dtype=np.float32) if not hasattr(x, "tensor") else x.tensor
    expected = (2, cfg.n_delay, cfg.n_tx)
    if arr.shape == expected:
        return arr[None], True
    if arr.ndim == 4 and arr.shape[1:] == expected:
        return arr, False
    raise DimensionMismatchError(f"channel tensor shape {arr.shape} does not match {expected}")


def encode(model, h):
    """Channel tensor(s) -> code vector(s) of length model.config.code_length."""
    x, single = _batched(h, model.config)
    code = model.forward(x)
    return code[0] if single else code


def _batched_code(code, cfg):
    arr = np.asarray(code, dtype=np.float32)
    m = cfg.code_length
    if arr.shape == (m,):
        return arr[None], True
    if arr.ndim == 2 and arr.shape[1] == m:
        return arr, False
    raise DimensionMismatchError(f"code shape {arr.shape} does not match length {m}")


def decode(model, code):
    arr, single = _batched_code(code, model.config)
    out = model.forward(arr)
    return out[0] if single else out


def decode_task(model, code, task):
    if not isinstance(model, SharedStemDecoder):
        raise InvalidArgumentError("decode_task requires a shared-stem decoder")
    arr, single = _batched_code(code, model.config)
    out = model.forward(arr, task=task)
    return out[0] if single else out


def module_param_count(module):
    return int(sum(p.data.size for p in module.parameters()))


@dataclass
class ParameterCount:
    components: dict = field(default_factory=dict)

    @property
    def total(self):
        return int(sum(self.components.values()))

    def to_dict(self):
        return {"components": dict(sorted(self.components.items())), "total": self.total}


def count_parameters(models):
    """Raw scalar counts per component; shared-stem decoders are split into
    their shared and per-task groups."""
    if isinstance(models, dict):
        items = list(models.items())
    else:
        items = list(models)
    counts = {}
    for name, m in items:
        if isinstance(m, SharedStemDecoder):
            counts[f"{name}.shared"] = int(sum(p.data.size for p in m.shared_parameters()))
            for k in range(m.config.n_tasks):
                counts[f"{name}.task{k}"] = int(sum(p.data.size for p in m.task_parameters(k)))
        else:
            counts[name] = module_param_count(m)
    return ParameterCount(counts)


def config_bundle_hash(configs):
    blob = json.dumps({k: configs[k].to_dict() for k in sorted(configs)},
                      sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _array_name(key, param):
    name = param.name
    return name if name.split("/", 1)[0] == key else f"{key}/{name}"


def save_checkpoint(path, models, configs, step=0, optimizer=None, extra=None):
    """Manifest line (JSON) + named float32 LE arrays sorted by name."""
    arrays = {}
    for key, m in models.items():
        for p in m.parameters():
            arrays[_array_name(key, p)] = p.data
    optimizer_steps = {}
    if optimizer is not None:
        opt_arrays, optimizer_steps = optimizer.state_arrays()
        for name, arr in opt_arrays.items():
            arrays[f"optim/{name}"] = arr
    names = sorted(arrays)
    manifest = {
        "magic": CKPT_MAGIC,
        "configs": {k: configs[k].to_dict() for k in sorted(configs)},
        "config_hash": config_bundle_hash(configs),
        "counts": count_parameters(models).to_dict(),
        "step": int(step),
        "arrays": [[n, list(arrays[n].shape)] for n in names],
        "optimizer_steps": optimizer_steps,
        "extra": extra or {},
    }
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8") + b"\n"
    with open(path, "wb") as f:
        f.write(blob)
        for n in names:
            f.write(np.ascontiguousarray(arrays[n], dtype="<f4").tobytes())


def load_checkpoint(path, expect_configs=None):
    """Returns (manifest, arrays). With expect_configs, the stored config
    hash must match the given bundle."""
    with open(path, "rb") as f:
        line = f.readline()
        payload = f.read()
    if not line.endswith(b"\n"):
        raise CorruptHeaderError(f"{path}: manifest line is not newline-terminated")
    try:
        manifest = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptHeaderError(f"{path}: manifest is not valid JSON: {e}") from e
    if not isinstance(manifest, dict) or manifest.get("magic") != CKPT_MAGIC:
        raise CorruptHeaderError(f"{path}: bad checkpoint magic")
    if expect_configs is not None:
        bundle = config_bundle_hash(expect_configs)
        if bundle != manifest.get("config_hash"):
            raise CheckpointIncompatibleError(
                f"{path}: checkpoint config hash {manifest.get('config_hash')} does not match expected {bundle}"
            )
    entries = manifest.get("arrays")
    if not isinstance(entries, list):
        raise CorruptHeaderError(f"{path}: manifest has no array table")
    expected = sum(int(np.prod(shape)) for _, shape in entries) * 4
    if len(payload) < expected:
        raise TruncatedPayloadError(f"{path}: payload has {len(payload)} bytes, manifest implies {expected}")
    if len(payload) > expected:
        raise ShapeMismatchError(f"{path}: payload has {len(payload)} bytes, manifest implies {expected}")
    arrays = {}
    offset = 0
    for name, shape in entries:
        size = int(np.prod(shape))
        arrays[name] = np.frombuffer(payload, dtype="<f4", count=size, offset=offset).reshape(shape).copy()
        offset += size * 4
    return manifest, arrays


def restore_models(manifest, arrays):
    """Rebuild models from the configs in the manifest and load their weights."""
    configs = {k: ModelConfig.from_dict(d) for k, d in manifest["configs"].items()}
    models = {}
    for key in sorted(configs):
        m = build_model(configs[key], seed=0)
        m.bind_names(key)
        models[key] = m
    load_models_into(models, arrays)
    return models, configs


def load_models_into(models, arrays):
    for key, m in models.items():
        wanted = {p.name: _array_name(key, p) for p in m.parameters()}
        missing = [n for n in wanted.values() if n not in arrays]
        if missing:
            raise CheckpointIncompatibleError(f"checkpoint lacks arrays {missing[:3]} for model {key!r}")
        m.load_state_arrays({local: arrays[stored] for local, stored in wanted.items()})
