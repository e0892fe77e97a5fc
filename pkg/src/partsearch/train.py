"""Run orchestration: training, evaluation, gradient checking, attention
dumps, and parameter sweeps. The CLI maps subcommands onto these functions.

Every run directory ends up with the resolved config, the step log, the
checkpoint, and the metrics it produced, which is enough to reproduce the
run exactly from the same seed.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .config import RunConfig, echo_config
from .data import Batch, PairedDataset, SynthSpec, batch_iterator, generate_synthetic, load_dataset
from .encoders import ImageSample, TextSample, Vocabulary
from .errors import ConfigError, DataError, NumericError
from .fileio import load_vocab_tokens, save_vocab, write_rtf
from .losses import LossConfig
from .model import ModelConfig, PersonSearchModel
from .optim import adam_step, fd_compare, collect_gradients
from .retrieval import cmc_ranks, similarity_matrix
from .tensor import Rng, Tensor, using_dtype, zero_grads

LOG_NAME = "train.log"
CKPT_NAME = "model.ckpt"
VOCAB_NAME = "vocab.txt"
IDMAP_NAME = "ids.json"
CONFIG_NAME = "config.txt"
METRICS_NAME = "metrics.json"


def _ensure_out_dir(cfg: RunConfig) -> str:
    out = str(cfg.out)
    try:
        os.makedirs(out, exist_ok=True)
        probe = os.path.join(out, ".write_probe")
        with open(probe, "w") as fh:
            fh.write("ok")
        os.remove(probe)
    except OSError as exc:
        raise DataError(f"output directory {out} is not writable: {exc}") from exc
    return out


def run_synth(cfg: RunConfig) -> str:
    """Generate the synthetic dataset described by the config keys."""
    out = _ensure_out_dir(cfg)
    spec = SynthSpec(
        num_ids=cfg.num_ids, images_per_id=cfg.images_per_id,
        captions_per_image=cfg.captions_per_image, image_size=cfg.image_size,
        vocab_words_per_id=cfg.vocab_words_per_id, noise_std=cfg.noise_std,
        seed=cfg.seed,
    )
    return generate_synthetic(spec, out)


def _model_config(cfg: RunConfig, dataset: PairedDataset) -> ModelConfig:
    return ModelConfig(
        d=cfg.d, layers=cfg.layers, attn_heads=cfg.attn_heads,
        mlp_ratio=cfg.mlp_ratio, dropout=cfg.dropout, patch_size=cfg.patch_size,
        max_len=cfg.max_len, num_heads=cfg.K,
        num_identities=dataset.num_identities, vocab_size=len(dataset.vocab),
        image_shape=dataset.image_shape(),
    )


def _load_run_dataset(cfg: RunConfig, run_dir: str | None = None) -> PairedDataset:
    """Load cfg.data; reuse the vocab/id mapping stored in run_dir if present."""
    if not cfg.data:
        raise ConfigError("no dataset manifest configured (key 'data')")
    vocab = None
    id_map = None
    if run_dir:
        vocab_path = os.path.join(run_dir, VOCAB_NAME)
        idmap_path = os.path.join(run_dir, IDMAP_NAME)
        if os.path.exists(vocab_path):
            vocab = Vocabulary(load_vocab_tokens(vocab_path))
        if os.path.exists(idmap_path):
            with open(idmap_path) as fh:
                id_map = {int(k): int(v) for k, v in json.load(fh).items()}
    return load_dataset(cfg.data, id_map=id_map, vocab=vocab)


def format_log_line(step: int, breakdown: dict) -> str:
    return (f"step={step} L={breakdown['total']:.6f} Lg={breakdown['global']:.6f} "
            f"Lp={breakdown['part']:.6f} Ldiv={breakdown['div']:.6f}")


def parse_log_line(line: str) -> dict:
    fields = dict(part.split("=", 1) for part in line.strip().split())
    return {"step": int(fields["step"]), "L": float(fields["L"]),
            "Lg": float(fields["Lg"]), "Lp": float(fields["Lp"]),
            "Ldiv": float(fields["Ldiv"])}


def run_training(cfg: RunConfig, echo=print) -> dict:
    """Train end to end; writes config echo, log, vocab, id map, checkpoint."""
    out = _ensure_out_dir(cfg)
    echo_config(cfg, os.path.join(out, CONFIG_NAME))
    dataset = _load_run_dataset(cfg)
    save_vocab(os.path.join(out, VOCAB_NAME), dataset.vocab.tokens)
    with open(os.path.join(out, IDMAP_NAME), "w") as fh:
        json.dump({str(k): v for k, v in dataset.id_map.items()}, fh)

    model = PersonSearchModel(_model_config(cfg, dataset), seed=cfg.seed)
    step = 0
    if cfg.checkpoint:
        extra = model.load(cfg.checkpoint)
        step = int(extra.get("steps", [0])[0])
    params = model.parameters()
    loss_cfg = LossConfig(epsilon=cfg.eps, lam=cfg.lam,
                          num_identities=dataset.num_identities)

    log_path = os.path.join(out, LOG_NAME)
    last = {}
    with open(log_path, "a", encoding="utf-8") as log:
        for epoch in range(cfg.epochs):
            for batch in batch_iterator(dataset, "train", cfg.batch_size, cfg.max_len,
                                        seed=cfg.seed, epoch=epoch, drop_last=True):
                try:
                    loss, breakdown = model.loss_on_batch(batch, loss_cfg)
                except NumericError as exc:
                    raise NumericError(f"step {step}: {exc}") from exc
                if not np.isfinite(breakdown["total"]):
                    raise NumericError(f"step {step}: non-finite loss")
                zero_grads(params)
                loss.backward()
                adam_step(params, lr=cfg.lr)
                line = format_log_line(step, breakdown)
                log.write(line + "\n")
                if step % 25 == 0:
                    echo(line)
                last = breakdown
                step += 1
    ckpt_path = os.path.join(out, CKPT_NAME)
    model.save(ckpt_path, extra={"steps": np.asarray([step], dtype=np.float32)})
    return {"steps": step, "checkpoint": ckpt_path, "last": last}


def _checkpoint_run_dir(cfg: RunConfig) -> str:
    if not cfg.checkpoint:
        raise ConfigError("no checkpoint configured (key 'checkpoint')")
    return os.path.dirname(os.path.abspath(cfg.checkpoint))


def _load_eval_model(cfg: RunConfig):
    run_dir = _checkpoint_run_dir(cfg)
    dataset = _load_run_dataset(cfg, run_dir=run_dir)
    model = PersonSearchModel(_model_config(cfg, dataset), seed=cfg.seed)
    model.load(cfg.checkpoint)
    return model, dataset


def eval_embeddings(model: PersonSearchModel, dataset: PairedDataset, split: str,
                    max_len: int):
    """Gallery embeddings for the split's images, query embeddings for its captions."""
    gallery_images = [dataset.images[i] for i, s in enumerate(dataset.image_splits)
                      if s == split]
    if not gallery_images:
        raise DataError(f"no images in split {split!r}")
    pairs = dataset.pairs(split)
    queries = [dataset.tokenized(i, j, max_len) for i, j in pairs]
    gallery = model.embed_image_samples(gallery_images)
    query_embs = model.embed_text_samples(queries)
    return query_embs, gallery


def run_eval(cfg: RunConfig, split: str = "test") -> str:
    """Embed the split, score text-to-image, and emit the metrics JSON line."""
    model, dataset = _load_eval_model(cfg)
    queries, gallery = eval_embeddings(model, dataset, split, cfg.max_len)
    scores = similarity_matrix(queries, gallery, mode=cfg.mode)
    metrics = cmc_ranks(scores,
                        [q.identity for q in queries],
                        [g.identity for g in gallery])
    line = metrics.to_json(mode=cfg.mode)
    out = _ensure_out_dir(cfg)
    with open(os.path.join(out, METRICS_NAME), "w", encoding="utf-8") as fh:
        fh.write(line + "\n")
    return line


# -- gradient checking ---------------------------------------------------------

GRADCHECK_THRESHOLDS = {32: 1e-3, 64: 1e-5}
_GRADCHECK_INIT_STD = 0.3  # non-degenerate attention logits, so every path carries gradient
_GRADCHECK_ORACLE_H = 1e-5  # optimal central-difference step for the float64 oracle


def _gradcheck_micro_setup(seed: int, lam: float, eps: float, dtype):
    """A tiny model and batch exercising every term of the objective.

    The init scale is larger than the training default so that attention
    logits are non-degenerate and every parameter carries measurable
    gradient at the check point.
    """
    cfg = ModelConfig(d=8, layers=1, attn_heads=2, mlp_ratio=2.0, patch_size=4,
                      max_len=6, num_heads=2, num_identities=2, vocab_size=12,
                      image_shape=(8, 8, 1), init_std=_GRADCHECK_INIT_STD)
    with using_dtype(dtype):
        model = PersonSearchModel(cfg, seed=seed)
    rng = Rng(seed + 1)
    n = 4
    images = [ImageSample(pixels=rng.uniform((8, 8, 1)).astype(np.float32), identity=i % 2)
              for i in range(n)]
    texts = []
    for i in range(n):
        length = int(rng.integers(3, 6))
        ids = list(rng.integers(2, 12, size=length)) + [0] * (cfg.max_len - length)
        texts.append(TextSample(tokens=ids, length=length, identity=i % 2))
    batch = Batch(images=images, texts=texts, labels=np.asarray([i % 2 for i in range(n)]))
    loss_cfg = LossConfig(epsilon=eps, lam=lam if lam > 0 else 0.2, num_identities=2)

    def objective() -> Tensor:
        with using_dtype(dtype):
            loss, _ = model.loss_on_batch(batch, loss_cfg)
        return loss

    return model, objective


def run_gradcheck(cfg: RunConfig, bits: int = 32, corrupt: bool = False,
                  echo=print) -> tuple[dict, bool]:
    """Check analytic gradients of the full objective against central differences.

    Analytic gradients come from the requested precision (the mode under
    test). The central-difference oracle always evaluates the objective in
    float64 at the same parameter values, so the oracle's own rounding
    noise stays far below both thresholds. Returns the per-parameter report
    and whether every parameter stayed under the precision's threshold.
    """
    if bits not in GRADCHECK_THRESHOLDS:
        raise ConfigError(f"gradcheck bits must be 32 or 64, got {bits}")
    dtype = np.float32 if bits == 32 else np.float64
    model, objective = _gradcheck_micro_setup(cfg.seed, cfg.lam, cfg.eps, dtype)
    analytic = collect_gradients(objective, model.parameters())
    if corrupt:
        first = model.parameters()[0].name
        analytic[first] = -analytic[first]

    oracle_model, oracle_objective = _gradcheck_micro_setup(cfg.seed, cfg.lam, cfg.eps,
                                                            np.float64)
    oracle_params = oracle_model.parameters()
    for p_lo, p_hi in zip(model.parameters(), oracle_params):
        p_hi.data[...] = p_lo.data.astype(np.float64)  # exact upcast
    analytic = {name: g.astype(np.float64) for name, g in analytic.items()}
    report = fd_compare(oracle_objective, oracle_params, analytic, _GRADCHECK_ORACLE_H)

    threshold = GRADCHECK_THRESHOLDS[bits]
    ok = True
    for name, err in report.items():
        status = "ok" if err < threshold else "FAIL"
        echo(f"param={name} max_rel_err={err:.3e} {status}")
        ok = ok and err < threshold
    echo(f"gradcheck bits={bits} threshold={threshold:.0e} "
         f"worst={max(report.values()):.3e} {'PASS' if ok else 'FAIL'}")
    return report, ok


# -- attention dumps -------------------------------------------------------------

def run_attn_dump(cfg: RunConfig, sample_id: int, echo=print) -> dict:
    """Write per-head attention traces for one sample, plus top-3 word lists."""
    model, dataset = _load_eval_model(cfg)
    if not 0 <= sample_id < len(dataset.images):
        raise DataError(f"unknown sample id {sample_id}; dataset has "
                        f"{len(dataset.images)} images")
    out = _ensure_out_dir(cfg)
    image = dataset.images[sample_id]
    caption_text, _ = dataset.captions[sample_id][0]
    text = dataset.tokenized(sample_id, 0, cfg.max_len)

    img_trace = model.attention_traces(model.encode_images([image])[0])
    txt_trace = model.attention_traces(model.encode_texts([text])[0])

    img_path = os.path.join(out, f"attn_image_{sample_id}.rtf")
    txt_path = os.path.join(out, f"attn_text_{sample_id}.rtf")
    write_rtf(img_path, img_trace)
    write_rtf(txt_path, txt_trace)

    words = caption_text.lower().split()[: cfg.max_len]
    words_path = os.path.join(out, f"attn_words_{sample_id}.txt")
    with open(words_path, "w", encoding="utf-8") as fh:
        for head in range(txt_trace.shape[0]):
            weights = txt_trace[head, 1 : len(words) + 1]
            top = np.argsort(-weights, kind="stable")[:3]
            listed = " ".join(words[int(i)] for i in top)
            fh.write(f"head={head} top_words: {listed}\n")
    echo(f"wrote {img_path}, {txt_path}, {words_path}")
    return {"image_trace": img_path, "text_trace": txt_path, "words": words_path}


# -- sweeps -----------------------------------------------------------------------

def run_sweep(cfg: RunConfig, param: str, values: list[float], echo=print) -> str:
    """Train/evaluate once per value with a shared seed; returns CSV text."""
    if param not in ("K", "lambda"):
        raise ConfigError(f"sweep parameter must be K or lambda, got {param!r}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    if param == "K":
        if any(v != int(v) for v in values):
            raise ConfigError("K sweep values must be integers")
        if cfg.lam > 0 and any(int(v) < 2 for v in values):
            raise ConfigError("K < 2 with lambda > 0: diversity term undefined")
    else:
        if cfg.K < 2 and any(v > 0 for v in values):
            raise ConfigError("K=1 with lambda > 0: diversity term undefined")

    out = _ensure_out_dir(cfg)
    rows = ["value,rank1,rank5,rank10"]
    for value in values:
        tag = f"{param}_{value:g}"
        sub = os.path.join(out, tag)
        if param == "K":
            sub_cfg = cfg.replaced(K=int(value), out=sub)
        else:
            sub_cfg = cfg.replaced(lam=value, out=sub)
        result = run_training(sub_cfg, echo=lambda _line: None)
        eval_cfg = sub_cfg.replaced(checkpoint=result["checkpoint"])
        metrics = json.loads(run_eval(eval_cfg))
        rows.append(f"{value:g},{metrics['rank1']:.4f},{metrics['rank5']:.4f},"
                    f"{metrics['rank10']:.4f}")
        echo(rows[-1])
    csv_text = "\n".join(rows) + "\n"
    with open(os.path.join(out, "sweep.csv"), "w", encoding="utf-8") as fh:
        fh.write(csv_text)
    return csv_text
