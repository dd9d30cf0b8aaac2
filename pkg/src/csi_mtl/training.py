"""Training regimes: independent per-task pairs, joint training with the
autoregressive multi-task loss, and hard parameter sharing.

Scheduling is cyclic and deterministic: step s of an epoch trains task
s mod N, every task gets the same number of steps per epoch (the largest
task's batch count; smaller tasks wrap around), and batch order for
(task, epoch) comes from its own seeded generator.

The autoregressive objective at a joint step for task i is
mse_i(theta) + alpha * mse_prev(theta), where mse_prev is recomputed on the
retained previous batch under current parameters (so its gradient is live).
The logged loss value follows the scalar recursion
loss(s) = mse(s) + alpha * loss(s-1) with loss(-1) = 0, a chain that runs
across epoch boundaries and checkpoint resumes.
"""

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .channel_data import load_dataset
from .errors import DimensionMismatchError, InvalidArgumentError
from .evaluation import nmse_db
from .models import ModelConfig, build_model
from .nn import Adam


@dataclass
class TaskSpec:
    scenario: object  # ScenarioConfig of the task's data
    encoder_family: str
    compression_ratio: object
    train: object = None  # ChannelDataset or path
    val: object = None
    test: object = None

    @property
    def name(self):
        return f"{self.encoder_family}-{self.scenario.name}"

    def dataset(self, split):
        ds = getattr(self, split)
        if isinstance(ds, str):
            ds = load_dataset(ds)
            setattr(self, split, ds)
        return ds


def distribution_label(tasks):
    """SSSM/SSMM/MSSM/MSMM from the task set's scenario and model variety."""
    scenarios = {t.scenario.name for t in tasks}
    families = {t.encoder_family for t in tasks}
    return ("SS" if len(scenarios) == 1 else "MS") + ("SM" if len(families) == 1 else "MM")


@dataclass
class TrainConfig:
    alpha: float = 0.3
    batch_size: int = 50
    learning_rate: float = 0.001
    epochs: int = 10
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    model_params: dict = field(default_factory=dict)  # ModelConfig overrides (widths etc.)

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise InvalidArgumentError(f"alpha must be in [0, 1), got {self.alpha}")
        if self.batch_size < 1:
            raise InvalidArgumentError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise InvalidArgumentError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise InvalidArgumentError(f"epochs must be >= 1, got {self.epochs}")


class LossTrace:
    """Per-step records plus per-epoch validation NMSE."""

    def __init__(self, records=None, val_records=None):
        self.records = list(records or [])
        self.val_records = list(val_records or [])

    def record_step(self, step, epoch, task, mse, loss):
        self.records.append({"step": int(step), "epoch": int(epoch), "task": int(task),
                             "mse": float(mse), "loss": float(loss)})

    def record_val(self, epoch, task, nmse):
        self.val_records.append({"epoch": int(epoch), "task": int(task), "val_nmse_db": float(nmse)})

    def verify_recursion(self, alpha, prev_loss=0.0):
        """True when every logged loss equals mse + alpha * previous loss by
        the same float64 arithmetic used while training."""
        prev = float(prev_loss)
        for r in self.records:
            expected = r["mse"] + alpha * prev
            if r["loss"] != expected:
                return False
            prev = r["loss"]
        return True

    def stream_rows(self):
        """Records in the order training emits them: each epoch's steps, then
        that epoch's validation rows."""
        steps, vals = {}, {}
        for r in self.records:
            steps.setdefault(r["epoch"], []).append(r)
        for r in self.val_records:
            vals.setdefault(r["epoch"], []).append(r)
        for epoch in sorted(set(steps) | set(vals)):
            yield from steps.get(epoch, [])
            yield from vals.get(epoch, [])

    def write_jsonl(self, path, append=False):
        with open(path, "a" if append else "w", encoding="utf-8") as f:
            for r in self.stream_rows():
                f.write(json.dumps(r, sort_keys=True) + "\n")

    @classmethod
    def from_jsonl(cls, path):
        records, vals = [], []
        with open(path, "r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                r = json.loads(line)
                (vals if "val_nmse_db" in r else records).append(r)
        return cls(records, vals)

    def epoch_rows(self):
        """(epoch, task, mean train mse, val NMSE dB) rows."""
        sums, counts = {}, {}
        for r in self.records:
            key = (r["epoch"], r["task"])
            sums[key] = sums.get(key, 0.0) + r["mse"]
            counts[key] = counts.get(key, 0) + 1
        vals = {(r["epoch"], r["task"]): r["val_nmse_db"] for r in self.val_records}
        rows = []
        for key in sorted(sums):
            rows.append((key[0], key[1], sums[key] / counts[key], vals.get(key)))
        return rows

    def write_epoch_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "task", "train_mse", "val_nmse_db"])
            for epoch, task, mse, val in self.epoch_rows():
                w.writerow([epoch, task, repr(mse), "" if val is None else repr(val)])


def mse_loss(h, h_hat):
    """Batch-mean squared Frobenius error, accumulated in float64.

    Axis 0 is the batch for (B, 2, n_delay, n_tx) real or (B, n_delay, n_tx)
    complex arrays; a bare (2, n_delay, n_tx) real or (n_delay, n_tx) complex
    array counts as a single sample.
    """
    a, b = np.asarray(h), np.asarray(h_hat)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"shape mismatch: {a.shape} vs {b.shape}")
    single = (a.ndim == 3 and not np.iscomplexobj(a)) or (a.ndim == 2 and np.iscomplexobj(a))
    if single:
        a, b = a[None], b[None]
    dtype = np.complex128 if (np.iscomplexobj(a) or np.iscomplexobj(b)) else np.float64
    d = a.astype(dtype) - b.astype(dtype)
    per_sample = np.sum((d * d.conj()).real, axis=tuple(range(1, d.ndim)))
    return float(per_sample.mean())


def autoregressive_loss(current_mse, previous_loss, alpha):
    """loss = current mse + alpha * previous loss (previous seeds at 0)."""
    if not 0.0 <= alpha < 1.0:
        raise InvalidArgumentError(f"alpha must be in [0, 1), got {alpha}")
    return float(current_mse) + alpha * float(previous_loss)


def steps_per_epoch(sizes, batch_size):
    """Largest task's batch count; every task trains this many steps per epoch."""
    return int(max(-(-int(n) // int(batch_size)) for n in sizes))


def batch_indices(n, steps, batch_size, seed, task_idx, epoch):
    """Deterministic index stream: fresh permutations of range(n), repeated
    (wrapping) until steps*batch_size indices exist."""
    rng = np.random.default_rng((seed, int(task_idx), int(epoch)))
    needed = steps * batch_size
    chunks = []
    total = 0
    while total < needed:
        perm = rng.permutation(n)
        chunks.append(perm)
        total += n
    stream = np.concatenate(chunks)[:needed]
    return [stream[s * batch_size:(s + 1) * batch_size] for s in range(steps)]


def _check_task_dims(tasks):
    dims = {(t.dataset("train").n_delay, t.dataset("train").n_tx) for t in tasks}
    if len(dims) != 1:
        raise DimensionMismatchError(f"tasks disagree on (n_delay, n_tx): {sorted(dims)}")
    return dims.pop()


def _encoder_config(task, dims, model_params):
    return ModelConfig(task.encoder_family, "encoder", task.compression_ratio, dims, **model_params)


def _grad_scale(ds, batch):
    # d/dy of scale^2/B * sum (y - x)^2 is 2*scale^2/B * (y - x)
    return np.float32(2.0 * ds.norm_scale * ds.norm_scale / batch)


def _denorm_planes(t, ds):
    return (t - np.float32(0.5)) * np.float32(ds.norm_scale) + np.float32(ds.norm_offset)


def _batch_mse(x, y, ds):
    return mse_loss(_denorm_planes(x, ds), _denorm_planes(y, ds))


def _val_nmse(encoder, decode_fn, ds, batch_size):
    outs = []
    t = ds.tensors
    for lo in range(0, len(ds), batch_size):
        x = t[lo:lo + batch_size]
        outs.append(decode_fn(encoder.forward(x)))
    y = np.concatenate(outs, axis=0)
    return nmse_db(_denorm_planes(t, ds), _denorm_planes(y, ds))


@dataclass
class TrainResult:
    models: dict
    configs: dict
    trace: LossTrace
    optimizer: Adam
    best_arrays: dict
    best_epoch: int
    best_val: float
    global_step: int
    resume_extra: dict

    @property
    def encoders(self):
        return [self.models[k] for k in sorted(self.models) if k.startswith("enc")]

    @property
    def decoder(self):
        return self.models["dec"]

    def load_best(self):
        """Swap the lowest-mean-val-NMSE parameters into the live models."""
        from .models import load_models_into

        load_models_into(self.models, self.best_arrays)
        return self


def _snapshot(models):
    from .models import _array_name

    out = {}
    for key, m in models.items():
        for p in m.parameters():
            out[_array_name(key, p)] = p.data.copy()
    return out


class _Run:
    """Shared loop state for the three regimes."""

    def __init__(self, tasks, cfg, models, configs, resume=None):
        self.tasks = tasks
        self.cfg = cfg
        self.models = models
        self.configs = configs
        params = []
        for key in sorted(models):
            params.extend(models[key].parameters())
        self.optimizer = Adam(params, lr=cfg.learning_rate, beta1=cfg.beta1,
                              beta2=cfg.beta2, eps=cfg.eps)
        self.trace = LossTrace()
        self.global_step = 0
        self.epochs_done = 0
        self.prev_loss = 0.0
        self.prev_task = None
        self.prev_indices = None
        self.best_val = float("inf")
        self.best_epoch = -1
        self.best_arrays = None
        if resume is not None:
            self._restore(resume)

    def _restore(self, resume):
        from .errors import CheckpointIncompatibleError
        from .models import config_bundle_hash, load_models_into

        manifest, arrays = resume
        expected = config_bundle_hash(self.configs)
        if manifest.get("config_hash") != expected:
            raise CheckpointIncompatibleError(
                f"resume checkpoint hash {manifest.get('config_hash')} does not match run configs {expected}"
            )
        load_models_into(self.models, arrays)
        opt_arrays = {n[len("optim/"):]: a for n, a in arrays.items() if n.startswith("optim/")}
        self.optimizer.load_state_arrays(opt_arrays, manifest.get("optimizer_steps", {}))
        extra = manifest.get("extra", {})
        self.global_step = int(manifest.get("step", 0))
        self.epochs_done = int(extra.get("epochs_done", 0))
        self.prev_loss = float(extra.get("prev_loss", 0.0))
        self.prev_task = extra.get("prev_task")
        self.prev_indices = extra.get("prev_indices")
        self.best_val = float(extra.get("best_val", float("inf")))
        self.best_epoch = int(extra.get("best_epoch", -1))

    def zero_grad(self):
        for key in self.models:
            self.models[key].zero_grad()

    def record(self, epoch, task, mse):
        loss = autoregressive_loss(mse, self.prev_loss, self.cfg.alpha)
        self.trace.record_step(self.global_step, epoch, task, mse, loss)
        self.prev_loss = loss
        self.global_step += 1
        return loss

    def validate(self, epoch, decode_fns):
        vals = []
        for i, task in enumerate(self.tasks):
            v = _val_nmse(self.models[f"enc{i}"] if f"enc{i}" in self.models else self.models["enc"],
                          decode_fns[i], task.dataset("val"), self.cfg.batch_size)
            self.trace.record_val(epoch, i, v)
            vals.append(v)
        mean_val = float(np.mean(vals))
        if mean_val < self.best_val:
            self.best_val = mean_val
            self.best_epoch = epoch
            self.best_arrays = _snapshot(self.models)
        return mean_val

    def result(self):
        if self.best_arrays is None:
            self.best_arrays = _snapshot(self.models)
        extra = {
            "epochs_done": self.epochs_done,
            "prev_loss": self.prev_loss,
            "prev_task": self.prev_task,
            "prev_indices": None if self.prev_indices is None else [int(i) for i in self.prev_indices],
            "best_val": self.best_val,
            "best_epoch": self.best_epoch,
        }
        return TrainResult(self.models, self.configs, self.trace, self.optimizer,
                           self.best_arrays, self.best_epoch, self.best_val,
                           self.global_step, extra)


def train_independent(task, cfg, resume=None):
    """One encoder/decoder pair (the task's own family) on plain batch MSE."""
    ds = task.dataset("train")
    dims = (ds.n_delay, ds.n_tx)
    enc_cfg = _encoder_config(task, dims, cfg.model_params)
    dec_cfg = ModelConfig(task.encoder_family, "decoder", task.compression_ratio, dims, **cfg.model_params)
    models = {
        "enc": build_model(enc_cfg, seed=(cfg.seed, 1, 0)).bind_names("enc"),
        "dec": build_model(dec_cfg, seed=(cfg.seed, 2, 0)).bind_names("dec"),
    }
    run = _Run([task], cfg, models, {"enc": enc_cfg, "dec": dec_cfg}, resume)
    enc, dec = models["enc"], models["dec"]
    steps = steps_per_epoch([len(ds)], cfg.batch_size)
    for epoch in range(run.epochs_done, cfg.epochs):
        for idx in batch_indices(len(ds), steps, cfg.batch_size, cfg.seed, 0, epoch):
            x = ds.tensors[idx]
            run.zero_grad()
            y = dec.forward(enc.forward(x))
            mse = _batch_mse(x, y, ds)
            enc.backward(dec.backward(_grad_scale(ds, len(idx)) * (y - x)))
            run.optimizer.step()
            run.record(epoch, 0, mse)
        run.epochs_done = epoch + 1
        run.validate(epoch, [lambda code: dec.forward(code)])
    return run.result()


def _joint_models(tasks, cfg, dims, decoder_role):
    ratios = {str(t.compression_ratio) for t in tasks}
    if len(ratios) != 1:
        raise InvalidArgumentError(f"tasks must share one compression ratio for a shared decoder, got {ratios}")
    configs, models = {}, {}
    for i, task in enumerate(tasks):
        enc_cfg = _encoder_config(task, dims, cfg.model_params)
        configs[f"enc{i}"] = enc_cfg
        models[f"enc{i}"] = build_model(enc_cfg, seed=(cfg.seed, 1, i)).bind_names(f"enc{i}")
    n_tasks = len(tasks) if decoder_role == "shared_stem_decoder" else 1
    dec_cfg = ModelConfig("stnet", decoder_role, tasks[0].compression_ratio, dims,
                          n_tasks=n_tasks, **cfg.model_params)
    configs["dec"] = dec_cfg
    models["dec"] = build_model(dec_cfg, seed=(cfg.seed, 2, 0)).bind_names("dec")
    return models, configs


def train_joint(tasks, cfg, resume=None):
    """Cyclic multi-task training of per-task encoders and one stnet decoder
    with the first-order autoregressive objective."""
    if len(tasks) < 2 and cfg.alpha > 0:
        warnings.warn("joint training with a single task degenerates to self-regularization")
    dims = _check_task_dims(tasks)
    models, configs = _joint_models(tasks, cfg, dims, "decoder")
    run = _Run(tasks, cfg, models, configs, resume)
    dec = models["dec"]
    n = len(tasks)
    datasets = [t.dataset("train") for t in tasks]
    steps = steps_per_epoch([len(d) for d in datasets], cfg.batch_size)
    for epoch in range(run.epochs_done, cfg.epochs):
        streams = [batch_indices(len(datasets[i]), steps, cfg.batch_size, cfg.seed, i, epoch)
                   for i in range(n)]
        for s in range(steps * n):
            i = s % n
            idx = streams[i][s // n]
            ds = datasets[i]
            x = ds.tensors[idx]
            run.zero_grad()
            enc = models[f"enc{i}"]
            y = dec.forward(enc.forward(x))
            mse = _batch_mse(x, y, ds)
            enc.backward(dec.backward(_grad_scale(ds, len(idx)) * (y - x)))
            if cfg.alpha > 0 and run.prev_task is not None:
                j = run.prev_task
                ds_p = datasets[j]
                xp = ds_p.tensors[np.asarray(run.prev_indices)]
                enc_p = models[f"enc{j}"]
                yp = dec.forward(enc_p.forward(xp))
                dyp = cfg.alpha * _grad_scale(ds_p, len(xp)) * (yp - xp)
                enc_p.backward(dec.backward(dyp))
            run.optimizer.step()
            run.record(epoch, i, mse)
            run.prev_task = i
            run.prev_indices = idx
        run.epochs_done = epoch + 1
        run.validate(epoch, [(lambda code: dec.forward(code))] * n)
    return run.result()


def train_hard_sharing(tasks, cfg, resume=None):
    """Cyclic multi-task training with a shared-stem decoder; plain MSE, and
    each step only touches the shared group plus the batch task's group."""
    dims = _check_task_dims(tasks)
    models, configs = _joint_models(tasks, cfg, dims, "shared_stem_decoder")
    run = _Run(tasks, cfg, models, configs, resume)
    dec = models["dec"]
    n = len(tasks)
    datasets = [t.dataset("train") for t in tasks]
    steps = steps_per_epoch([len(d) for d in datasets], cfg.batch_size)
    for epoch in range(run.epochs_done, cfg.epochs):
        streams = [batch_indices(len(datasets[i]), steps, cfg.batch_size, cfg.seed, i, epoch)
                   for i in range(n)]
        for s in range(steps * n):
            i = s % n
            idx = streams[i][s // n]
            ds = datasets[i]
            x = ds.tensors[idx]
            run.zero_grad()
            enc = models[f"enc{i}"]
            y = dec.forward(enc.forward(x), task=i)
            mse = _batch_mse(x, y, ds)
            enc.backward(dec.backward(_grad_scale(ds, len(idx)) * (y - x)))
            run.optimizer.step()
            run.record(epoch, i, mse)
        run.epochs_done = epoch + 1
        run.validate(epoch, [(lambda code, k=i: dec.forward(code, task=k)) for i in range(n)])
    return run.result()
