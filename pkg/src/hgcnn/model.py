"""
Two-branch hypergraph convolutional classifier (color + depth), its training
loop, scoring and checkpoint format.

Per branch: two hypergraph convolutions.  The outputs of every convolution of
every branch are concatenated per vertex, averaged over vertices and fed to a
(256, 64, 2) MLP.  Class 1 is "genuine"; the score of a sample is the softmax
probability of that class.
"""

from __future__ import annotations

import copy
import json
import logging
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import landmarks as lm
from .hypergraph import normalized_laplacian, simple_complete_graph_laplacian
from .metrics import ScoreSet, apcer_bpcer_acer, eer, Threshold
from .nn import AdamState, Dense, HyperConv, adam_step, clip_global_norm, cross_entropy_loss, softmax

log = logging.getLogger(__name__)

GENUINE = 1
GRAPH_MODES = ("hypergraph", "simple_complete", "none")
INPUT_CHANNELS = ("rgb", "rgb+hsv", "rgb+depth", "rgb+hsv+depth")
CONCAT_SCHEMES = ("all", "duplicate")


@dataclass(frozen=True)
class ArchitectureConfig:
    """Network shape and graph construction.

    ``concat_scheme="all"`` concatenates every conv output of every branch
    (2 x (64 + 128) = 384 features); ``"duplicate"`` repeats the pooled vector
    to reach 768.  ``graph_mode="none"`` drops the graph entirely: the filter
    order is forced to 1 and every vertex is processed independently.
    """

    branch_widths: tuple[int, ...] = (64, 128)
    input_channels: str = "rgb+depth"
    concat_scheme: str = "all"
    mlp_widths: tuple[int, ...] = (256, 64, 2)
    graph_mode: str = "hypergraph"
    chebyshev_k: int = 2
    k_nn: int = 5
    use_batchnorm: bool = True

    def __post_init__(self):
        object.__setattr__(self, "branch_widths", tuple(int(w) for w in self.branch_widths))
        object.__setattr__(self, "mlp_widths", tuple(int(w) for w in self.mlp_widths))
        if self.graph_mode not in GRAPH_MODES:
            raise ValueError(f"graph_mode must be one of {GRAPH_MODES}")
        if self.input_channels not in INPUT_CHANNELS:
            raise ValueError(f"input_channels must be one of {INPUT_CHANNELS}")
        if self.concat_scheme not in CONCAT_SCHEMES:
            raise ValueError(f"concat_scheme must be one of {CONCAT_SCHEMES}")
        if not self.mlp_widths or self.mlp_widths[-1] != 2:
            raise ValueError("last MLP width must be 2")
        if any(w < 1 for w in self.branch_widths + self.mlp_widths) or not self.branch_widths:
            raise ValueError("layer widths must be positive")
        if self.graph_mode == "none":
            object.__setattr__(self, "chebyshev_k", 1)
        if self.chebyshev_k < 1:
            raise ValueError("chebyshev_k must be >= 1")

    @property
    def use_depth_branch(self) -> bool:
        return "depth" in self.input_channels

    @property
    def use_hsv(self) -> bool:
        return "hsv" in self.input_channels

    @property
    def color_dim(self) -> int:
        return 6 if self.use_hsv else 3

    @property
    def pooled_dim(self) -> int:
        d = sum(self.branch_widths) * (2 if self.use_depth_branch else 1)
        return 2 * d if self.concat_scheme == "duplicate" else d

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureConfig":
        return cls(**d)


def ablation_config(model: int, **overrides) -> ArchitectureConfig:
    """Model 1: no graph.  Model 2: RGB only.  Model 3: complete simple graph
    with Gaussian weights.  Model 4: full model."""
    presets = {
        1: dict(graph_mode="none"),
        2: dict(input_channels="rgb"),
        3: dict(graph_mode="simple_complete"),
        4: dict(),
    }
    if model not in presets:
        raise ValueError(f"unknown ablation model {model}")
    return ArchitectureConfig(**{**presets[model], **overrides})


# -- samples -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PreparedSample:
    id: str
    subject: str
    label: str
    session: int
    color: np.ndarray      # (n, 3 or 6)
    depth: np.ndarray      # (n, 1)
    laplacian: np.ndarray  # (n, n)

    @property
    def attack_type(self):
        return None if self.label == "genuine" else self.label

    @property
    def target(self) -> int:
        return GENUINE if self.label == "genuine" else 1 - GENUINE


def normalize_scale(coords: np.ndarray) -> np.ndarray:
    """Center and divide by the median nearest-neighbour distance."""
    c = coords - coords.mean(axis=0)
    nn = lm.knn_indices(c, 1)[:, 0]
    step = np.median(np.linalg.norm(c - c[nn], axis=1))
    return c / step if step > 0 else c


def graph_laplacian(points: lm.PointSet, cfg: ArchitectureConfig) -> np.ndarray:
    n = len(points)
    if cfg.graph_mode == "hypergraph":
        hg = lm.build_knn_hypergraph(points, lm.HypergraphConfig(cfg.k_nn))
        return normalized_laplacian(hg).matrix
    if cfg.graph_mode == "simple_complete":
        return simple_complete_graph_laplacian(normalize_scale(points.coords)).matrix
    return np.zeros((n, n))


def prepare_sample(sample: lm.LandmarkSample, cfg: ArchitectureConfig, pairs=None) -> PreparedSample:
    """Augment a raw landmark sample and compute its features and Laplacian.

    Raw 68-point samples are augmented with the canonical midpoint pattern;
    larger point sets are taken as already augmented.
    """
    pts = sample.points
    if len(pts) == lm.N_LANDMARKS:
        pts = lm.augment_landmarks(pts, pairs=lm.template_pairs() if pairs is None else pairs)
    if cfg.use_hsv:
        pts = lm.rgb_to_hsv_channels(pts)
    color_names = ("r", "g", "b", "h", "s", "v") if cfg.use_hsv else ("r", "g", "b")
    return PreparedSample(sample.id, sample.subject, sample.label, sample.session,
                          pts.channel(*color_names), pts.channel("depth"),
                          graph_laplacian(pts, cfg))


def prepare_samples(samples, cfg: ArchitectureConfig) -> list[PreparedSample]:
    pairs = lm.template_pairs()
    out = [prepare_sample(s, cfg, pairs) for s in samples]
    sizes = {p.color.shape[0] for p in out}
    if len(sizes) > 1:
        raise ValueError(f"samples have differing vertex counts {sorted(sizes)}")
    return out


def stack_batch(samples):
    color = np.stack([s.color for s in samples])
    depth = np.stack([s.depth for s in samples])
    L = np.stack([s.laplacian for s in samples])
    y = np.array([s.target for s in samples], dtype=np.intp)
    return color, depth, L, y


# -- network -----------------------------------------------------------------

class HGCNN:
    """The classifier.  ``forward`` returns ``(B, 2)`` logits."""

    def __init__(self, cfg: ArchitectureConfig, seed: int | np.random.Generator = 0):
        self.cfg = cfg
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        rescale = cfg.graph_mode == "simple_complete"
        lmax = 2.0 if rescale else None
        self.branches: dict[str, list[HyperConv]] = {}
        inputs = {"color": cfg.color_dim}
        if cfg.use_depth_branch:
            inputs["depth"] = 1
        for branch, f_in in inputs.items():
            layers = []
            for i, width in enumerate(cfg.branch_widths):
                layers.append(HyperConv(f_in, width, rng, K=cfg.chebyshev_k,
                                        use_batchnorm=cfg.use_batchnorm,
                                        rescale_spectrum=rescale, lmax=lmax,
                                        name=f"{branch}.conv{i + 1}"))
                f_in = width
            self.branches[branch] = layers
        self.mlp = []
        f_in = cfg.pooled_dim
        for i, width in enumerate(cfg.mlp_widths):
            last = i == len(cfg.mlp_widths) - 1
            self.mlp.append(Dense(f_in, width, rng, activation=None if last else "relu",
                                  name=f"mlp.fc{i + 1}"))
            f_in = width

    # parameters ---------------------------------------------------------

    def layers(self):
        for layers in self.branches.values():
            yield from layers
        yield from self.mlp

    def _param_layers(self):
        for layer in self.layers():
            yield layer
            if getattr(layer, "bn", None) is not None:
                yield layer.bn

    def parameters(self) -> dict[str, np.ndarray]:
        return {f"{l.name}.{k}": v for l in self._param_layers() for k, v in l.params.items()}

    def gradients(self) -> dict[str, np.ndarray]:
        return {f"{l.name}.{k}": v for l in self._param_layers() for k, v in l.grads.items()}

    def state_dict(self) -> dict[str, np.ndarray]:
        state = dict(self.parameters())
        for l in self._param_layers():
            if hasattr(l, "running_mean"):
                state[f"{l.name}.running_mean"] = l.running_mean
                state[f"{l.name}.running_var"] = l.running_var
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = self.state_dict()
        missing = set(own) - set(state)
        if missing:
            raise ValueError(f"missing tensors: {sorted(missing)}")
        for l in self._param_layers():
            for k in l.params:
                l.params[k] = self._checked(state, f"{l.name}.{k}", l.params[k].shape)
            if hasattr(l, "running_mean"):
                l.running_mean = self._checked(state, f"{l.name}.running_mean", l.running_mean.shape)
                l.running_var = self._checked(state, f"{l.name}.running_var", l.running_var.shape)

    @staticmethod
    def _checked(state, name, shape):
        arr = np.array(state[name], dtype=np.float64)
        if arr.shape != shape:
            raise ValueError(f"tensor {name} has shape {arr.shape}, config expects {shape}")
        return arr

    def zero_grad(self):
        for l in self.layers():
            l.zero_grad()

    # passes -------------------------------------------------------------

    def forward(self, color, depth, L, training=False, return_features=False):
        cfg = self.cfg
        if color.shape[-1] != cfg.color_dim:
            raise ValueError(f"color input has {color.shape[-1]} channels, "
                             f"layer color.conv1 expects {cfg.color_dim}")
        inputs = {"color": color}
        if cfg.use_depth_branch:
            if depth is None or depth.shape[-1] != 1:
                raise ValueError("layer depth.conv1 expects a 1-channel depth input")
            inputs["depth"] = depth
        per_layer = [[x] for x in inputs.values()]
        outs = []
        for (branch, layers), trace in zip(self.branches.items(), per_layer):
            h = inputs[branch]
            for layer in layers:
                h = layer.forward(h, L, training)
                outs.append(h)
                trace.append(h)
        feats = np.concatenate(outs, axis=-1)
        pooled = feats.mean(axis=-2)
        if cfg.concat_scheme == "duplicate":
            pooled = np.concatenate([pooled, pooled], axis=-1)
        h = pooled
        for layer in self.mlp:
            h = layer.forward(h, training)
        self._n_vertices = feats.shape[-2]
        if return_features:
            # index 0: raw inputs, index i: output of conv i, branches side by side
            layer_feats = [np.concatenate([t[i] for t in per_layer], axis=-1)
                           for i in range(len(cfg.branch_widths) + 1)]
            return h, layer_feats
        return h

    def backward(self, dlogits):
        g = dlogits
        for layer in reversed(self.mlp):
            g = layer.backward(g)
        if self.cfg.concat_scheme == "duplicate":
            half = g.shape[-1] // 2
            g = g[..., :half] + g[..., half:]
        n = self._n_vertices
        gfeat = np.repeat(g[..., None, :] / n, n, axis=-2)
        offset = 0
        slices = []
        for layers in self.branches.values():
            for layer in layers:
                w = layer.params["W"].shape[1]
                slices.append(gfeat[..., offset:offset + w])
                offset += w
        i = 0
        for layers in self.branches.values():
            own = slices[i:i + len(layers)]
            i += len(layers)
            upstream = 0.0
            for layer, gs in zip(reversed(layers), reversed(own)):
                upstream = layer.backward(gs + upstream)

    def logits(self, samples, batch_size=50):
        out = []
        for start in range(0, len(samples), batch_size):
            color, depth, L, _ = stack_batch(samples[start:start + batch_size])
            out.append(self.forward(color, depth, L, training=False))
        return np.concatenate(out) if out else np.zeros((0, 2))


# -- training -----------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 50
    lr: float = 1e-3
    lr_decay: float = 0.1
    clip_norm: float = 5.0
    patience: int = 10

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainResult:
    model: HGCNN
    log: list[dict]
    best_epoch: int
    threshold: Threshold
    meta: dict = field(default_factory=dict)


def predict(model: HGCNN, samples, batch_size=50) -> ScoreSet:
    """Genuine-class probabilities (inference mode) with labels carried along."""
    if samples and samples[0].color.shape[-1] != model.cfg.color_dim:
        raise ValueError("sample channel layout does not match the checkpoint architecture")
    probs = softmax(model.logits(samples, batch_size))[:, GENUINE] if samples else np.zeros(0)
    return ScoreSet.from_records(
        [(s.id, s.subject, s.label, s.attack_type, p) for s, p in zip(samples, probs)])


def _dev_metrics(model, dev):
    logits = model.logits(dev)
    y = np.array([s.target for s in dev])
    loss, _ = cross_entropy_loss(logits, y)
    acc = float(np.mean(np.argmax(logits, axis=1) == y))
    scores = ScoreSet.from_records([(s.id, s.subject, s.label, s.attack_type, p)
                                    for s, p in zip(dev, softmax(logits)[:, GENUINE])])
    acer = apcer_bpcer_acer(scores, Threshold(0.5, "fixed"))["acer"]
    return loss, acc, acer


def train(cfg: ArchitectureConfig, train_set, dev_set, hp: TrainConfig = TrainConfig(),
          seed: int = 0) -> TrainResult:
    """Mini-batch Adam on cross-entropy with early stopping on dev ACER.

    Randomness: ``SeedSequence(seed)`` spawns one stream for weight
    initialization and one for the per-epoch shuffles.  The learning rate
    drops by ``lr_decay`` after half of ``hp.epochs``.  Training stops after
    ``hp.patience`` epochs without dev improvement (lower ACER at threshold
    0.5, ties broken by dev loss) and the best epoch's weights are returned.
    """
    if not train_set or not dev_set:
        raise ValueError("empty split")
    overlap = {s.subject for s in train_set} & {s.subject for s in dev_set}
    if overlap:
        raise ValueError(f"subjects in both train and dev: {sorted(overlap)}")
    init_ss, shuffle_ss = np.random.SeedSequence(seed).spawn(2)
    model = HGCNN(cfg, np.random.default_rng(init_ss))
    shuffle_rng = np.random.default_rng(shuffle_ss)
    opt = AdamState(lr=hp.lr)
    history = []
    best_key, best_state, best_epoch, stale = None, None, 0, 0
    for epoch in range(1, hp.epochs + 1):
        if epoch == hp.epochs // 2 + 1:
            opt.lr = hp.lr * hp.lr_decay
        order = shuffle_rng.permutation(len(train_set))
        total_loss, correct = 0.0, 0
        for start in range(0, len(order), hp.batch_size):
            batch = [train_set[i] for i in order[start:start + hp.batch_size]]
            color, depth, L, y = stack_batch(batch)
            model.zero_grad()
            logits = model.forward(color, depth, L, training=True)
            loss, dlogits = cross_entropy_loss(logits, y)
            model.backward(dlogits)
            grads = model.gradients()
            clip_global_norm(grads, hp.clip_norm)
            adam_step(opt, model.parameters(), grads)
            total_loss += loss * len(batch)
            correct += int(np.sum(np.argmax(logits, axis=1) == y))
        dev_loss, dev_acc, dev_acer = _dev_metrics(model, dev_set)
        row = dict(epoch=epoch, train_loss=total_loss / len(train_set),
                   train_acc=correct / len(train_set), dev_loss=dev_loss,
                   dev_acc=dev_acc, dev_acer=dev_acer)
        history.append(row)
        log.info("epoch %d: train_loss %.4f dev_acc %.3f dev_acer %.3f",
                 epoch, row["train_loss"], dev_acc, dev_acer)
        key = (dev_acer, dev_loss)
        if best_key is None or key < best_key:
            best_key, best_epoch, stale = key, epoch, 0
            best_state = copy.deepcopy(model.state_dict())
        else:
            stale += 1
            if stale >= hp.patience:
                break
    model.load_state_dict(best_state)
    dev_scores = predict(model, dev_set)
    try:
        _, th = eer(dev_scores)
        threshold = Threshold(th, "dev-EER")
    except ValueError:
        threshold = Threshold(0.5, "fixed")
    return TrainResult(model, history, best_epoch, threshold)


# -- checkpoints ----------------------------------------------------------------

MAGIC = b"hgcnn-ckpt v1\n"


def save_checkpoint(model: HGCNN, path, meta: dict | None = None) -> None:
    """Write ``MAGIC | u64 header length | JSON header | float64 LE tensors``.

    The header holds the architecture config, free-form ``meta`` and a
    manifest of ``name``, ``shape`` and byte ``offset`` into the tensor blob.
    """
    state = model.state_dict()
    manifest, chunks, offset = [], [], 0
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f8")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"format": "hgcnn-ckpt v1", "config": model.cfg.to_dict(),
                         "meta": meta or {}, "tensors": manifest}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for c in chunks:
            fh.write(c)


def load_checkpoint(path) -> tuple[HGCNN, dict]:
    """Rebuild the model from a checkpoint; returns ``(model, meta)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(MAGIC):
        raise ValueError(f"{path}: not an hgcnn-ckpt v1 file")
    pos = len(MAGIC)
    (hlen,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    header = json.loads(data[pos:pos + hlen])
    blob = memoryview(data)[pos + hlen:]
    cfg = ArchitectureConfig.from_dict(header["config"])
    model = HGCNN(cfg, 0)
    state = {}
    for t in header["tensors"]:
        count = int(np.prod(t["shape"], dtype=np.int64))
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=t["offset"])
        state[t["name"]] = arr.reshape(t["shape"]).astype(np.float64)
    model.load_state_dict(state)
    return model, header["meta"]
