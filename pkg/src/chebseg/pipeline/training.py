"""Training, evaluation, inference and the Chebyshev-order sweep."""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from ..core import IGNORE_LABEL, Block, PointCloud, SparseAdjacency
from ..graph import GraphConfig, build_adjacency, normalized_laplacian, rescale_laplacian
from ..nn import (Adam, GraphBatch, ModelConfig, SegmentationModel, Tensor, load_checkpoint,
                  no_grad, save_checkpoint, softmax_cross_entropy)
from ..nn.optim import NonFiniteGradientError
from .blocks import TrainConfig, partition_blocks
from .metrics import MetricsReport, confusion_matrix, metrics_from_confusion

log = logging.getLogger(__name__)


class TrainingHalted(RuntimeError):
    pass


@dataclass
class PreparedBlock:
    """A block with its graph, built once and reused every epoch."""

    block: Block
    adjacency: SparseAdjacency
    operator: object
    sigma: float


def prepare_block(block: Block, graph_cfg: GraphConfig, lambda_max="bound2", dtype=np.float64) -> PreparedBlock:
    adj, sigma = build_adjacency(block, graph_cfg, return_sigma=True)
    op = rescale_laplacian(normalized_laplacian(adj), lambda_max).matrix.astype(dtype)
    # the expanded view is only needed transiently
    adj._csr = None
    return PreparedBlock(block, adj, op, sigma)


def prepare_dataset(clouds, train_cfg: TrainConfig, graph_cfg: GraphConfig, rng: np.random.Generator,
                    dtype=np.float64) -> list[PreparedBlock]:
    out = []
    for cloud in clouds:
        for block in partition_blocks(cloud, train_cfg, rng):
            out.append(prepare_block(block, graph_cfg, train_cfg.lambda_max, dtype))
    return out


def check_graph_cache(prepared, graph_cfg: GraphConfig, rng: np.random.Generator, n_checks: int = 2) -> None:
    """Rebuild a few cached graphs from scratch and require exact equality."""
    if not prepared:
        return
    for i in rng.choice(len(prepared), size=min(n_checks, len(prepared)), replace=False):
        fresh = build_adjacency(prepared[i].block, graph_cfg)
        if fresh != prepared[i].adjacency:
            raise AssertionError(f"cached graph of block {prepared[i].block.origin} differs from a fresh build")


def make_batch(items: list[PreparedBlock], dtype):
    xyz = np.concatenate([p.block.points.xyz for p in items]).astype(dtype)
    labels = [p.block.points.labels for p in items]
    labels = None if any(l is None for l in labels) else np.concatenate(labels)
    return xyz, labels, GraphBatch([p.operator for p in items], dtype=dtype)


@dataclass
class TrainResult:
    model: SegmentationModel
    optimizer: Adam
    history: list = field(default_factory=list)
    metrics: list = field(default_factory=list)
    train_seconds: float = 0.0


def _streams(seed: int):
    init, partition, shuffle, drop = np.random.SeedSequence(seed).spawn(4)
    return (int(init.generate_state(1)[0]), np.random.default_rng(partition),
            np.random.default_rng(shuffle), np.random.default_rng(drop))


def checkpoint_payload(model, optimizer, train_cfg, model_cfg, graph_cfg, rngs: dict, epoch: int):
    tensors = {f"param/{k}": v for k, v in model.state_dict().items()}
    for k, v in optimizer.state.m.items():
        tensors[f"adam_m/{k}"] = v
    for k, v in optimizer.state.v.items():
        tensors[f"adam_v/{k}"] = v
    s = optimizer.state
    meta = {
        "model": model_cfg.to_dict(),
        # the output path is left out so runs in different directories stay byte-identical
        "train": {k: v for k, v in vars(train_cfg).items() if k != "checkpoint"},
        "graph": {k: v for k, v in vars(graph_cfg).items()},
        "optimizer": {"lr": s.lr, "beta1": s.beta1, "beta2": s.beta2, "eps": s.eps,
                      "weight_decay": s.weight_decay, "step": s.step},
        "rng": {name: r.bit_generator.state for name, r in rngs.items()},
        "epoch": epoch,
    }
    return tensors, meta


def load_model(path):
    """Model (and its stored metadata) from a checkpoint file."""
    tensors, meta = load_checkpoint(path)
    cfg = ModelConfig(**meta["model"])
    model = SegmentationModel(cfg)
    model.load_state_dict({k[len("param/"):]: v for k, v in tensors.items() if k.startswith("param/")})
    return model, meta


def train(dataset, cfg: TrainConfig, model_cfg: ModelConfig, graph_cfg: GraphConfig = GraphConfig(),
          eval_set=None, out_dir=None, log_fh=None) -> TrainResult:
    """Adam training over shuffled batches of blocks.

    ``dataset``/``eval_set`` are labelled clouds or already prepared blocks.
    ``log_fh`` receives ``epoch step split loss`` lines; with ``out_dir`` set, metric
    records go to ``metrics.jsonl`` and checkpoints to ``cfg.checkpoint`` (default
    ``checkpoint.ckpt``) every ``eval_every`` epochs.
    """
    dtype = np.dtype(model_cfg.dtype)
    init_seed, part_rng, shuffle_rng, drop_rng = _streams(cfg.seed)
    train_blocks = _as_prepared(dataset, cfg, graph_cfg, part_rng, dtype)
    eval_blocks = _as_prepared(eval_set, cfg, graph_cfg, part_rng, dtype) if eval_set is not None else None
    unlabelled = sum(1 for p in train_blocks if _labelled(p) == 0)
    if unlabelled:
        log.warning("skipping %d training blocks without labelled points", unlabelled)
        train_blocks = [p for p in train_blocks if _labelled(p) > 0]
    if not train_blocks:
        raise ValueError("no training blocks")
    check_graph_cache(train_blocks, graph_cfg, np.random.default_rng(cfg.seed))

    model = SegmentationModel(model_cfg, seed=init_seed)
    opt = Adam(model.named_parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    result = TrainResult(model, opt)
    ckpt_path = None
    metrics_fh = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        ckpt_path = cfg.checkpoint or os.path.join(out_dir, "checkpoint.ckpt")
        metrics_fh = open(os.path.join(out_dir, "metrics.jsonl"), "w")
    rngs = {"shuffle": shuffle_rng, "dropout": drop_rng}

    start = time.perf_counter()
    step = 0
    try:
        for epoch in range(1, cfg.epochs + 1):
            order = shuffle_rng.permutation(len(train_blocks))
            for lo in range(0, len(order), cfg.batch_size):
                items = [train_blocks[i] for i in order[lo : lo + cfg.batch_size]]
                total = sum(_labelled(p) for p in items)
                model.zero_grad()
                step += 1
                value = 0.0
                for mlo in range(0, len(items), cfg.micro_batch_size):
                    xyz, labels, graph = make_batch(items[mlo : mlo + cfg.micro_batch_size], dtype)
                    logits = model(Tensor(xyz), graph, train=True, rng=drop_rng)
                    # every chunk divides by the batch count, so gradients sum to the batch mean
                    loss = softmax_cross_entropy(logits, labels, denominator=total)
                    value += float(loss.data)
                    if not np.isfinite(value):
                        _dump_halt(out_dir, model, opt, cfg, model_cfg, graph_cfg, rngs, epoch)
                        raise TrainingHalted(f"non-finite loss {value} at epoch {epoch} step {step}")
                    loss.backward()
                    del logits, loss
                try:
                    opt.step()
                except NonFiniteGradientError as exc:
                    _dump_halt(out_dir, model, opt, cfg, model_cfg, graph_cfg, rngs, epoch)
                    raise TrainingHalted(str(exc)) from exc
                result.history.append({"epoch": epoch, "step": step, "split": "train", "loss": value})
                if log_fh is not None:
                    log_fh.write(f"{epoch} {step} train {value!r}\n")
            if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
                if eval_blocks:
                    report, eval_loss = evaluate(model, eval_blocks, batch_size=cfg.micro_batch_size,
                                                 with_loss=True)
                    result.metrics.append({"epoch": epoch, "step": step, **report.to_dict()})
                    result.history.append({"epoch": epoch, "step": step, "split": "test", "loss": eval_loss})
                    if log_fh is not None:
                        log_fh.write(f"{epoch} {step} test {eval_loss!r}\n")
                    if metrics_fh is not None:
                        metrics_fh.write(json.dumps({"epoch": epoch, "step": step, **report.to_dict()}) + "\n")
                    log.info("epoch %d: test loss %.4f mIoU %.4f", epoch, eval_loss, report.mean_iou)
                if ckpt_path is not None:
                    save_checkpoint(ckpt_path, *checkpoint_payload(model, opt, cfg, model_cfg, graph_cfg, rngs, epoch))
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
    result.train_seconds = time.perf_counter() - start
    return result


def _labelled(prepared: PreparedBlock) -> int:
    labels = prepared.block.points.labels
    return 0 if labels is None else int(np.count_nonzero(labels != IGNORE_LABEL))


def _dump_halt(out_dir, model, opt, cfg, model_cfg, graph_cfg, rngs, epoch):
    if out_dir is not None:
        save_checkpoint(os.path.join(out_dir, "halt_state.ckpt"),
                        *checkpoint_payload(model, opt, cfg, model_cfg, graph_cfg, rngs, epoch))


def _as_prepared(data, cfg, graph_cfg, rng, dtype):
    data = list(data)
    if data and isinstance(data[0], PreparedBlock):
        return data
    if data and isinstance(data[0], Block):
        return [prepare_block(b, graph_cfg, cfg.lambda_max, dtype) for b in data]
    return prepare_dataset(data, cfg, graph_cfg, rng, dtype)


def infer_blocks(model: SegmentationModel, prepared: list[PreparedBlock], batch_size: int = 8):
    """Eval-mode logits for each block, as a list of (S, C) arrays."""
    dtype = model.dtype
    out = []
    with no_grad():
        for lo in range(0, len(prepared), batch_size):
            items = prepared[lo : lo + batch_size]
            xyz, _, graph = make_batch(items, dtype)
            logits = model(Tensor(xyz), graph, train=False).data
            out.extend(np.split(logits, len(items)))
    return out


def evaluate(model: SegmentationModel, blocks, batch_size: int = 8, graph_cfg: GraphConfig = GraphConfig(),
             with_loss: bool = False):
    """Pooled-confusion metrics over every labelled point of every block."""
    prepared = _as_prepared(blocks, TrainConfig(), graph_cfg, np.random.default_rng(0), model.dtype)
    if not prepared:
        raise ValueError("cannot evaluate on an empty dataset")
    c = model.cfg.num_classes
    cm = np.zeros((c, c), dtype=np.int64)
    loss_sum, count = 0.0, 0
    for p, logits in zip(prepared, infer_blocks(model, prepared, batch_size)):
        labels = p.block.points.labels
        if labels is None:
            raise ValueError("evaluation blocks must be labelled")
        cm += confusion_matrix(logits.argmax(axis=1), labels, c)
        if with_loss:
            valid = labels != IGNORE_LABEL
            if valid.any():
                n = int(valid.sum())
                loss_sum += float(softmax_cross_entropy(Tensor(logits), labels).data) * n
                count += n
    report = metrics_from_confusion(cm)
    if with_loss:
        return report, (loss_sum / count if count else float("nan"))
    return report


@dataclass
class Prediction:
    labels: np.ndarray
    blocks: list


def majority_votes(n_points: int, source_indices, block_predictions, num_classes: int) -> np.ndarray:
    """Resolve per-copy predictions: majority class per source point, ties to the lowest
    class index, -1 for points never sampled."""
    votes = np.zeros((n_points, num_classes), dtype=np.int64)
    for src, pred in zip(source_indices, block_predictions):
        np.add.at(votes, (np.asarray(src), np.asarray(pred)), 1)
    out = votes.argmax(axis=1)
    out[votes.sum(axis=1) == 0] = IGNORE_LABEL
    return out


def predict(model: SegmentationModel, cloud: PointCloud, cfg: TrainConfig = TrainConfig(),
            graph_cfg: GraphConfig = GraphConfig(), rng: np.random.Generator | None = None,
            batch_size: int = 8) -> Prediction:
    if len(cloud) == 0:
        raise ValueError("cannot predict on an empty cloud")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    blocks = partition_blocks(cloud, cfg, rng)
    prepared = [prepare_block(b, graph_cfg, cfg.lambda_max, model.dtype) for b in blocks]
    preds = [l.argmax(axis=1) for l in infer_blocks(model, prepared, batch_size)]
    labels = majority_votes(len(cloud), [b.source_indices for b in blocks], preds, model.cfg.num_classes)
    return Prediction(labels, blocks)


def sweep_cheb_order(orders, train_set, test_set, cfg: TrainConfig, model_cfg: ModelConfig,
                     graph_cfg: GraphConfig = GraphConfig()):
    """Train one model per Chebyshev order on identical data and seed.

    Returns rows of (K, test mean IoU, training wall time in seconds).
    """
    orders = list(orders)
    if not orders:
        raise ValueError("orders must be non-empty")
    dtype = np.dtype(model_cfg.dtype)
    _, part_rng, _, _ = _streams(cfg.seed)
    train_blocks = _as_prepared(train_set, cfg, graph_cfg, part_rng, dtype)
    test_blocks = _as_prepared(test_set, cfg, graph_cfg, part_rng, dtype)
    rows = []
    for k in orders:
        mcfg = ModelConfig(**{**model_cfg.to_dict(), "order": int(k)})
        res = train(train_blocks, cfg, mcfg, graph_cfg)
        report = evaluate(res.model, test_blocks, batch_size=cfg.micro_batch_size)
        rows.append((int(k), report.mean_iou, res.train_seconds))
        log.info("K=%d mIoU=%.4f time=%.1fs", k, report.mean_iou, res.train_seconds)
    return rows


def format_sweep(rows) -> str:
    lines = ["K mean_iou wall_time_seconds"]
    lines += [f"{k} {miou:.6f} {t:.3f}" for k, miou, t in rows]
    return "\n".join(lines) + "\n"
