"""In-training compression schedule: train to density saturation, shrink
per-layer bit-widths (and optionally channel counts) from the measured
densities, rebuild, and repeat until the assignment reaches its fixed point.

Bit-widths follow k_l <- round(k_l * AD_l) clamped to >= 1; channel counts
follow C_l <- round(C_initial_l * AD_l) clamped to >= 1. The first weighted
layer and the final fully-connected layer are exempt from bit-width changes.
Layers on residual skip paths carry no densities of their own: their
bit-widths and channel counts are inherited from the destination layer of
the skip connection.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from adq.admon import ADHistory, observation_points
from adq.errors import ConfigurationError, InputError, TrainingDiverged
from adq.nn.arch import LayerSpec, NetworkArch, WEIGHTED_KINDS
from adq.nn import engine
from adq.nn.checkpoint import save_checkpoint
from adq.nn.data import iter_batches
from adq.quant import MAX_BITS, NetworkQuantizer, round_half_away


# ------------------------------------------------------------------- state

@dataclass
class BitWidthAssignment:
    k: dict  # weighted layer id -> bit width
    exempt: frozenset
    iter: int = 0

    @classmethod
    def initial(cls, arch: NetworkArch, initial_bits: int,
                exempt=None) -> "BitWidthAssignment":
        ids = arch.weighted_ids()
        if exempt is None:
            exempt = default_exempt(arch)
        return cls(k={i: initial_bits for i in ids},
                   exempt=frozenset(exempt), iter=0)

    def copy(self) -> "BitWidthAssignment":
        return BitWidthAssignment(dict(self.k), self.exempt, self.iter)


@dataclass
class PruneState:
    channels: dict           # conv layer id -> current channel count
    initial_channels: dict   # conv layer id -> original channel count

    @classmethod
    def initial(cls, arch: NetworkArch) -> "PruneState":
        ch = {l.id: l.out_channels for l in arch.layers if l.kind == "conv2d"}
        return cls(channels=dict(ch), initial_channels=dict(ch))

    def copy(self) -> "PruneState":
        return PruneState(dict(self.channels), dict(self.initial_channels))


@dataclass
class ScheduleConfig:
    initial_bits: int = 16
    max_iters: int = 4
    epoch_budget: int = 10
    saturation_epsilon: float = 0.01
    saturation_window: int = 5
    pruning_enabled: bool = False
    final_convergence_epochs: int = 0
    prune_from_initial: bool = True  # False: multiply the current width instead
    strict_ad_pass: bool = False  # dedicated full-train-set AD pass per epoch
    remove_layers: tuple = ()
    batch_size: int = 64
    act_range_mode: str = "ema"
    ema_decay: float = 0.99
    network_ad_mode: str = "pooled"

    def validate(self):
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be >= 1")
        if not (1 <= self.initial_bits <= MAX_BITS):
            raise ConfigurationError(f"initial_bits must lie in [1, {MAX_BITS}]")
        if self.saturation_window < 2:
            raise ConfigurationError("saturation window must be >= 2")
        if self.epoch_budget < self.saturation_window:
            raise ConfigurationError("epoch budget smaller than saturation window")


def default_exempt(arch: NetworkArch) -> frozenset:
    """First weighted layer plus the final fully-connected layer."""
    ids = arch.weighted_ids()
    out = {ids[0]} if ids else set()
    linears = [l.id for l in arch.layers if l.kind == "linear"]
    if linears:
        out.add(linears[-1])
    return frozenset(out)


# ------------------------------------------------------------------ updates

def _check_ad(ad_map):
    for lid, ad in ad_map.items():
        if not (0.0 <= ad <= 1.0):
            raise InputError(f"layer {lid}: AD {ad} outside [0, 1]")


def update_bitwidths(assignment: BitWidthAssignment,
                     ad_per_layer: dict) -> BitWidthAssignment:
    """k_l <- round(k_l * AD_l), clamped to >= 1; exempt layers unchanged."""
    _check_ad(ad_per_layer)
    new = {}
    for lid, k in assignment.k.items():
        if lid in assignment.exempt or lid not in ad_per_layer:
            new[lid] = k
            continue
        prop = int(round_half_away(k * ad_per_layer[lid]))
        new[lid] = max(1, min(k, prop))
    return BitWidthAssignment(new, assignment.exempt, assignment.iter + 1)


def update_channels(prune_state: PruneState,
                    ad_per_layer: dict, from_initial: bool = True) -> PruneState:
    """C_l <- round(C_ref * AD_l) clamped to [1, current]; C_ref is the
    original width by default (the alternative multiplies the current width)."""
    _check_ad(ad_per_layer)
    new = {}
    for lid, cur in prune_state.channels.items():
        if lid not in ad_per_layer:
            new[lid] = cur
            continue
        ref = prune_state.initial_channels[lid] if from_initial else cur
        prop = int(round_half_away(ref * ad_per_layer[lid]))
        new[lid] = max(1, min(cur, prop))
    return PruneState(new, dict(prune_state.initial_channels))


def select_pruned_channels(prune_state: PruneState,
                           per_channel_scores: dict) -> dict:
    """Keep the C_l highest-scoring channels per layer; ties prefer the lower
    channel index. Returns {layer_id: sorted kept index list}."""
    kept = {}
    for lid, target in prune_state.channels.items():
        scores = np.asarray(per_channel_scores[lid], dtype=np.float64)
        if target > scores.size:
            raise RuntimeError(
                f"layer {lid}: want {target} channels, only {scores.size} exist")
        # stable sort on (-score, index): equal scores keep original order
        order = np.argsort(-scores, kind="stable")
        kept[lid] = sorted(int(i) for i in order[:target])
    return kept


# --------------------------------------------------------- skip connections

def skip_topology(arch: NetworkArch) -> dict:
    """Resolve residual-add wiring.

    Returns {add_id: {"destination": conv_id, "skip_convs": [conv ids on the
    skip path]}}. The destination of a skip connection is the weighted layer
    feeding the residual-add on the main branch; skip-path convolutions are
    the weighted layers reachable from the skip input before it rejoins the
    main branch.
    """
    info = {}
    for spec in arch.layers:
        if spec.kind != "residual-add":
            continue
        main_src, skip_src = arch.input_ids(spec.id)
        dest = _weighted_ancestor(arch, main_src)
        if dest is None:
            raise ConfigurationError(
                f"layer {spec.id}: residual-add has no weighted main ancestor")
        main_anc = _ancestry(arch, main_src)
        skip_convs = []
        cur = skip_src
        while cur not in main_anc and cur != -1:
            if arch.layer(cur).kind in WEIGHTED_KINDS:
                skip_convs.append(cur)
            cur = arch.input_ids(cur)[0]
        info[spec.id] = {"destination": dest, "skip_convs": skip_convs}
    return info


def _ancestry(arch, layer_id):
    seen = set()
    cur = layer_id
    while cur != -1 and cur not in seen:
        seen.add(cur)
        cur = arch.input_ids(cur)[0]
    seen.add(-1)
    return seen


def _weighted_ancestor(arch, layer_id):
    cur = layer_id
    while cur != -1:
        if arch.layer(cur).kind in WEIGHTED_KINDS:
            return cur
        cur = arch.input_ids(cur)[0]
    return None


def propagate_skip_bitwidths(arch: NetworkArch,
                             assignment: BitWidthAssignment) -> dict:
    """Effective bit-widths after applying the skip-connection rule.

    Returns {"layer_bits": {weighted id: k}, "skip_edge_bits": {add id: k}}:
    skip-path convolutions adopt the destination layer's bit-width, and the
    activation entering a residual-add via the skip branch is quantized at
    the destination bit-width.
    """
    topo = skip_topology(arch)
    layer_bits = dict(assignment.k)
    edge_bits = {}
    for add_id, t in topo.items():
        dest_k = layer_bits[t["destination"]]
        edge_bits[add_id] = dest_k
        for cid in t["skip_convs"]:
            layer_bits[cid] = dest_k
    return {"layer_bits": layer_bits, "skip_edge_bits": edge_bits}


def main_chain_weighted_ids(arch: NetworkArch) -> list[int]:
    """Weighted layers excluding those on skip paths (which carry no
    densities of their own)."""
    on_skip = set()
    for t in skip_topology(arch).values():
        on_skip.update(t["skip_convs"])
    return [i for i in arch.weighted_ids() if i not in on_skip]


# ------------------------------------------------------------------ rebuild

def rebuild_pruned(arch: NetworkArch, state: engine.TrainState,
                   prune_state: PruneState, kept: dict):
    """Build a new architecture/state with only the kept channels.

    Surviving channels carry their weights; input slices corresponding to
    removed upstream channels are dropped. Residual-add inputs must keep
    matching channel counts, which holds when every skip edge carries a
    projection convolution tied to the destination layer.
    """
    topo = skip_topology(arch)
    # force skip-path convs to mirror their destination's kept set size
    kept = dict(kept)
    for add_id, t in topo.items():
        dsel = kept.get(t["destination"])
        for cid in t["skip_convs"]:
            if dsel is None:
                continue
            own = kept.get(cid, list(range(arch.layer(cid).out_channels)))
            if len(own) != len(dsel):
                own = own[:len(dsel)]
                if len(own) < len(dsel):
                    pool = [i for i in range(arch.layer(cid).out_channels)
                            if i not in own]
                    own = sorted(own + pool[:len(dsel) - len(own)])
            kept[cid] = own

    out_sel: dict[int, list] = {-1: list(range(arch.input_shape[0]))}
    new_layers = []
    new_weights = {}
    shapes = arch.infer_shapes()

    for spec in arch.layers:
        srcs = arch.input_ids(spec.id)
        new_spec = LayerSpec(**asdict(spec))
        if spec.kind == "residual-add":
            main_sel, skip_sel = out_sel[srcs[0]], out_sel[srcs[1]]
            if len(main_sel) != len(skip_sel):
                raise ConfigurationError(
                    f"layer {spec.id}: residual-add channel counts diverge "
                    f"({len(main_sel)} vs {len(skip_sel)}); pruning a skip "
                    "connection requires a projection convolution")
            out_sel[spec.id] = main_sel
        elif spec.kind == "conv2d":
            in_sel = out_sel[srcs[0]]
            sel = kept.get(spec.id, list(range(spec.out_channels)))
            w = state.weights[spec.id]["w"][np.ix_(sel, in_sel)]
            b = state.weights[spec.id]["b"][sel]
            new_spec.in_channels = len(in_sel)
            new_spec.out_channels = len(sel)
            new_weights[spec.id] = {"w": w.copy(), "b": b.copy()}
            out_sel[spec.id] = sel
        elif spec.kind == "linear":
            in_sel = out_sel[srcs[0]]
            in_shape = shapes[srcs[0]] if srcs[0] != -1 else arch.input_shape
            if len(in_shape) == 1:
                feats = _linear_feature_selection(arch, spec.id, in_sel, shapes)
            else:
                feats = in_sel
            w = state.weights[spec.id]["w"][:, feats]
            new_spec.in_channels = len(feats)
            new_weights[spec.id] = {"w": w.copy(),
                                    "b": state.weights[spec.id]["b"].copy()}
            out_sel[spec.id] = list(range(spec.out_channels))
        elif spec.kind == "batchnorm":
            sel = out_sel[srcs[0]]
            p = state.weights[spec.id]
            new_weights[spec.id] = {k: p[k][sel].copy() for k in p}
            out_sel[spec.id] = sel
        else:
            out_sel[spec.id] = out_sel[srcs[0]]
        new_layers.append(new_spec)

    new_arch = NetworkArch(new_layers, arch.input_shape, arch.num_classes)
    new_state = engine.init_state(new_arch, state.rng_seed)
    new_state.rng = state.rng
    new_state.epoch = state.epoch
    # fresh Adam moments: the parameter space changed shape
    for lid, params in new_weights.items():
        for name, arr in params.items():
            new_state.weights[lid][name] = arr
    return new_arch, new_state


def _linear_feature_selection(arch, linear_id, channel_sel, shapes):
    """Map kept channels through a flatten into linear feature indices."""
    pos = arch.position(linear_id)
    src = arch.input_ids(linear_id)[0]
    # walk back to the flatten's (C, H, W) input
    spec = arch.layer(src)
    while spec.kind != "flatten":
        src = arch.input_ids(src)[0]
        if src == -1:
            return channel_sel
        spec = arch.layer(src)
    c_, h_, w_ = shapes[arch.input_ids(spec.id)[0]]
    per = h_ * w_
    feats = []
    for c in channel_sel:
        feats.extend(range(c * per, (c + 1) * per))
    return feats


# ---------------------------------------------------------------- schedule

@dataclass
class IterationRecord:
    iter: int
    bits: dict
    channels: dict | None
    epochs: int
    network_ad: float
    test_accuracy: float
    train_loss: float


@dataclass
class ScheduleLog:
    iterations: list = field(default_factory=list)
    epoch_accuracy: list = field(default_factory=list)  # (epoch, accuracy)
    final_accuracy: float | None = None
    final_epochs: int = 0

    def to_dict(self):
        return {
            "iterations": [
                {**asdict(r), "bits": {str(k): v for k, v in r.bits.items()},
                 "channels": (None if r.channels is None else
                              {str(k): v for k, v in r.channels.items()})}
                for r in self.iterations
            ],
            "epoch_accuracy": self.epoch_accuracy,
            "final_accuracy": self.final_accuracy,
            "final_epochs": self.final_epochs,
        }


@dataclass
class ScheduleResult:
    arch: NetworkArch
    state: engine.TrainState
    assignment: BitWidthAssignment
    prune_state: PruneState | None
    log: ScheduleLog
    ad_history: ADHistory
    quantizer: NetworkQuantizer


def run_schedule(arch: NetworkArch, dataset, config: ScheduleConfig,
                 seed: int = 0, optim: engine.OptimConfig | None = None,
                 diagnostics_dir=None,
                 iteration_callback=None) -> ScheduleResult:
    """Execute the full quantization (and optional pruning) schedule.

    iteration_callback, when given, is invoked after each completed iteration
    as callback(iter, arch, state, assignment, prune_state, history, record).
    """
    config.validate()
    optim = optim or engine.OptimConfig()
    if config.remove_layers:
        arch = arch.drop_layers(config.remove_layers)

    state = engine.init_state(arch, seed)
    assignment = BitWidthAssignment.initial(arch, config.initial_bits)
    prune_state = PruneState.initial(arch) if config.pruning_enabled else None
    history = ADHistory()
    log = ScheduleLog()
    quantizer = None
    epoch_global = 0

    for it in range(1, config.max_iters + 1):
        eff = propagate_skip_bitwidths(arch, assignment)
        quantizer = NetworkQuantizer(
            bits=eff["layer_bits"], exempt=assignment.exempt,
            skip_bits=eff["skip_edge_bits"], act_mode=config.act_range_mode,
            ema_decay=config.ema_decay,
            trackers=quantizer.trackers if quantizer else {})
        obs = _iteration_observers(arch)
        iter_epochs = []
        epochs_done = 0
        for _ in range(config.epoch_budget):
            epoch_global += 1
            epochs_done += 1
            loss = _train_epoch(arch, state, quantizer, dataset, config, optim,
                                history, epoch_global, obs, diagnostics_dir,
                                assignment, prune_state)
            acc = engine.accuracy(arch, state, dataset.x_test, dataset.y_test,
                                  quantizer)
            log.epoch_accuracy.append((epoch_global, acc))
            iter_epochs.append(epoch_global)
            if history.is_saturated(config.saturation_epsilon,
                                    config.saturation_window,
                                    epochs=iter_epochs):
                break

        ad = {lid: history.layer_ad(lid, epoch_global)
              for lid in main_chain_weighted_ids(arch)}
        record = IterationRecord(
            iter=it, bits=dict(assignment.k),
            channels=None if prune_state is None else dict(prune_state.channels),
            epochs=epochs_done,
            network_ad=history.network_ad(epoch_global,
                                          config.network_ad_mode),
            test_accuracy=log.epoch_accuracy[-1][1],
            train_loss=loss)
        log.iterations.append(record)
        if iteration_callback is not None:
            iteration_callback(it, arch, state, assignment, prune_state,
                               history, record)

        new_assignment = update_bitwidths(assignment, ad)
        new_prune = prune_state
        if prune_state is not None:
            new_prune = update_channels(prune_state, ad,
                                        from_initial=config.prune_from_initial)
        bits_fixed = new_assignment.k == assignment.k
        chans_fixed = prune_state is None or new_prune.channels == prune_state.channels
        if bits_fixed and chans_fixed:
            assignment = new_assignment
            break
        if prune_state is not None and not chans_fixed:
            scores = obs["channel_scores"]()
            scored = PruneState(
                channels={l: new_prune.channels[l] for l in scores},
                initial_channels={l: new_prune.initial_channels[l]
                                  for l in scores})
            kept = select_pruned_channels(scored, scores)
            arch, state = rebuild_pruned(arch, state, new_prune, kept)
            # skip-path convs were resized to match their destination
            for cid in new_prune.channels:
                new_prune.channels[cid] = arch.layer(cid).out_channels
            quantizer.trackers = {}  # channel identities changed
        assignment, prune_state = new_assignment, new_prune

    # final convergence phase at the fixed assignment
    eff = propagate_skip_bitwidths(arch, assignment)
    quantizer = NetworkQuantizer(
        bits=eff["layer_bits"], exempt=assignment.exempt,
        skip_bits=eff["skip_edge_bits"], act_mode=config.act_range_mode,
        ema_decay=config.ema_decay,
        trackers=quantizer.trackers if quantizer else {})
    obs = _iteration_observers(arch)
    for _ in range(config.final_convergence_epochs):
        epoch_global += 1
        log.final_epochs += 1
        _train_epoch(arch, state, quantizer, dataset, config, optim,
                     history, epoch_global, obs, diagnostics_dir,
                     assignment, prune_state)
        acc = engine.accuracy(arch, state, dataset.x_test, dataset.y_test,
                              quantizer)
        log.epoch_accuracy.append((epoch_global, acc))
    log.final_accuracy = engine.accuracy(arch, state, dataset.x_test,
                                         dataset.y_test, quantizer)
    return ScheduleResult(arch, state, assignment, prune_state, log, history,
                          quantizer)


def _iteration_observers(arch: NetworkArch):
    """Build hook plumbing for one iteration's architecture.

    AD counts are keyed by the weighted layer that produced the activation;
    per-channel positive-fraction scores are kept for pruning.
    """
    points = observation_points(arch)
    on_main = set(main_chain_weighted_ids(arch))
    by_obs = {}
    for wid, (obs_id, _is_relu) in points.items():
        if wid in on_main:
            by_obs.setdefault(obs_id, []).append(wid)
    raw_ids = {obs
               for wid, (obs, is_relu) in points.items()
               if not is_relu and wid in on_main}
    conv_ids = {l.id for l in arch.layers if l.kind == "conv2d"}
    chan_nonzero = {}
    chan_total = {}

    sink = {"history": None, "epoch": None, "prune": False}

    def hook(layer_id, tensor):
        for wid in by_obs.get(layer_id, ()):
            sink["history"].record(wid, sink["epoch"], tensor)
            if sink["prune"] and wid in conv_ids and tensor.ndim == 4:
                pos = (tensor > 0).sum(axis=(0, 2, 3))
                n = tensor.shape[0] * tensor.shape[2] * tensor.shape[3]
                if wid not in chan_nonzero:
                    chan_nonzero[wid] = np.zeros(tensor.shape[1])
                    chan_total[wid] = 0
                chan_nonzero[wid] += pos
                chan_total[wid] += n

    def channel_scores():
        return {lid: chan_nonzero[lid] / max(chan_total[lid], 1)
                for lid in chan_nonzero}

    return {"hook": hook, "raw_ids": raw_ids, "sink": sink,
            "channel_scores": channel_scores,
            "reset_scores": lambda: (chan_nonzero.clear(), chan_total.clear())}


def _train_epoch(arch, state, quantizer, dataset, config, optim, history,
                 epoch, obs, diagnostics_dir, assignment, prune_state):
    obs["sink"]["history"] = history
    obs["sink"]["epoch"] = epoch
    obs["sink"]["prune"] = config.pruning_enabled
    obs["reset_scores"]()
    quantizer.training = True
    train_hooks = () if config.strict_ad_pass else (obs["hook"],)
    losses = []
    for bx, by in iter_batches(dataset.x_train, dataset.y_train,
                               config.batch_size, state.rng):
        logits, cache = engine.forward(arch, state, bx, hooks=train_hooks,
                                       quantizer=quantizer, training=True,
                                       raw_observers=obs["raw_ids"])
        loss, lgrad = engine.loss_softmax_xent(logits, by)
        if not np.isfinite(loss):
            path = None
            if diagnostics_dir is not None:
                path = f"{diagnostics_dir}/diverged_epoch{epoch}.ckpt"
                save_checkpoint(path, arch, state,
                                bits=dict(assignment.k),
                                channels=None if prune_state is None
                                else dict(prune_state.channels),
                                ad_history=history.to_rows())
            raise TrainingDiverged(
                f"non-finite loss at epoch {epoch}", checkpoint_path=path)
        grads, _ = engine.backward(arch, state, cache, lgrad)
        engine.optimizer_step(state, grads, optim)
        losses.append(loss)
    if config.strict_ad_pass:
        # dedicated full-train-set pass with the post-epoch model
        quantizer.training = False
        for i in range(0, len(dataset.x_train), config.batch_size):
            engine.forward(arch, state,
                           dataset.x_train[i:i + config.batch_size],
                           hooks=(obs["hook"],), quantizer=quantizer,
                           training=False, raw_observers=obs["raw_ids"])
        quantizer.training = True
    state.epoch = epoch
    return float(np.mean(losses))
