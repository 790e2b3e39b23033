"""File-level orchestration behind the CLI subcommands.

Each command reads inputs, calls the in-memory modules, and writes a run
directory containing a manifest (enough to reproduce the run bit-exactly
on the same platform), a metrics history CSV, and a checkpoint.
"""

import hashlib
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .cohort import (CohortCriteria, DiagnosisMapping, build_cohort, load_cohort,
                     write_cohort)
from .config import Config
from .encoders import pretrain_code_skipgram, pretrain_mlm
from .errors import ConfigurationError, NotFoundError
from .ingest import load_hospital
from .metrics import auprc, auprc_multilabel
from .report import (emit_report, stay_representations, write_manifest,
                     write_metrics_csv)
from .rng import derive_seed
from .synthgen import (CodingStyle, HospitalProfile, default_concepts, generate_hospital,
                       planted_signal_strength, write_toy_mapping)
from .tasks import ALL_TASKS, TaskKind
from .textproc import ValueStrategy, build_vocab, tokenize
from .trainer import (CODE_KINDS, CodeVocabulary, EncoderKind, ExperimentSpec, Hyper,
                      Regime, build_text_encoder, corpus_of, load_run, make_split,
                      pool, predict_scores, prepare_stay_data, restore_text_encoder,
                      run_meta, run_tensors, save_run, text_encoder_args, train,
                      transfer)

CHECKPOINT_NAME = "checkpoint.etck"


def _file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def hyper_from(config: Config) -> Hyper:
    e = config.experiment
    return Hyper(dropout=e.dropout, embed_dim=e.embed_dim, hidden_dim=e.hidden_dim,
                 value_dim=e.value_dim, lr=e.lr, batch_size=e.batch_size,
                 max_epochs=e.max_epochs, patience=e.patience, w2v_steps=e.w2v_steps)


def spec_from(config: Config, regime: Regime = Regime.SINGLE) -> ExperimentSpec:
    e = config.experiment
    try:
        task = TaskKind(e.task)
        encoder = EncoderKind(e.encoder)
        strategy = ValueStrategy(e.strategy)
    except ValueError as exc:
        raise ConfigurationError(str(exc))
    return ExperimentSpec(task=task, encoder=encoder, strategy=strategy, regime=regime,
                          few_shot_ratios=config.ratios(), hyper=hyper_from(config),
                          seed=e.seed)


def _run_dir(config: Config, spec: ExperimentSpec, regime: str) -> Path:
    name = f"{spec.task.value}_{spec.encoder.value}_{spec.strategy.value}_" \
           f"{regime}_s{spec.seed}"
    path = Path(config.paths.out_dir) / name
    path.mkdir(parents=True, exist_ok=True)
    return path


def _base_manifest(config: Config, spec: ExperimentSpec, kind: str, digests: dict) -> dict:
    return {
        "kind": kind,
        "task": spec.task.value,
        "encoder": spec.encoder.value,
        "strategy": spec.strategy.value,
        "regime": kind if kind in ("transfer", "pool") else "single",
        "seed": spec.seed,
        "hyper": asdict(spec.hyper),
        "config": config.as_dict(),
        "data_digests": digests,
    }


def _load_vocab_source(config: Config, stays):
    """Vocabulary for a run: the init checkpoint's when present, else built."""
    init = config.paths.init_checkpoint
    if init:
        tensors, meta = load_checkpoint(init)
        if "vocab_tokens" in meta:
            from .textproc import Vocabulary

            return Vocabulary(meta["vocab_tokens"]), (tensors, meta)
        return None, (tensors, meta)
    vocab = build_vocab(corpus_of(stays), max_size=config.vocab.vocab_max_size,
                        min_freq=config.vocab.vocab_min_freq)
    return vocab, None


def _init_encoder_from(ckpt, spec: ExperimentSpec):
    tensors, meta = ckpt
    if meta.get("kind") == "text_encoder":
        return restore_text_encoder(meta["text_kind"], meta["text_args"], tensors)
    raise ConfigurationError(
        f"init checkpoint kind '{meta.get('kind')}' is not a text encoder")


def _align_code_table(meta, tensors, code_vocab: CodeVocabulary, dim: int):
    table = np.zeros((len(code_vocab), dim), dtype=np.float32)
    source = tensors["emb.code_table"]
    for row, key in enumerate(meta["code_keys"], start=1):
        target = code_vocab.key_to_id.get(key)
        if target is not None:
            table[target] = source[row]
    return table


# -------------------------------------------------------------- subcommands

def cmd_synth(config: Config, log=print) -> dict:
    s = config.synth
    data_dir = Path(config.paths.data_dir)
    library = default_concepts(s.concepts, concept_seed=s.data_seed)
    outputs = {}
    for name, style, seed in (("hospital_a", CodingStyle.ITEM_ID_CODED, s.data_seed + 1),
                              ("hospital_b", CodingStyle.TEXT_CODED, s.data_seed + 2)):
        profile = HospitalProfile(name, style, s.concepts, s.patients, seed=seed,
                                  events_per_stay=(s.events_lo, s.events_hi))
        files = generate_hospital(profile, library, out_dir=data_dir / name)
        outputs[name] = [str(f) for f in files]
        log(f"{name}: wrote {len(files)} files under {data_dir / name}")
    mapping = write_toy_mapping(data_dir / "toy_dx_mapping.csv")
    outputs["mapping"] = str(mapping)
    for task in ALL_TASKS:
        strengths = [planted_signal_strength(data_dir / n, task)
                     for n in ("hospital_a", "hospital_b")]
        log(f"planted signal {task.value}: "
            + " ".join(f"{v:.3f}" for v in strengths))
    return outputs


def _detect_style(directory: Path) -> CodingStyle:
    return CodingStyle.ITEM_ID_CODED if (directory / "lookup.csv").exists() \
        else CodingStyle.TEXT_CODED


def cmd_preprocess(config: Config, log=print) -> Path:
    directory = Path(config.paths.hospital_dir)
    if not directory.is_dir():
        raise NotFoundError(f"hospital directory '{directory}' not found")
    style = (_detect_style(directory) if config.paths.style == "auto"
             else CodingStyle(config.paths.style))
    records = build_cohort(load_hospital(directory, style), CohortCriteria())
    mapping = DiagnosisMapping.load(config.paths.mapping) if config.paths.mapping else None
    out = Path(config.paths.cohort or (Path(config.paths.out_dir) /
                                       f"cohort_{directory.name}.csv"))
    write_cohort(records, out, mapping=mapping)
    log(f"cohort: {len(records)} stays -> {out}")
    return out


def _mlm_corpus(stays, vocab, strategy):
    return [tokenize(desc, None, None, strategy, vocab)
            for stay in stays for _, desc, _, _, _ in stay.events]


def cmd_pretrain(config: Config, mode: str, log=print) -> Path:
    stays = load_cohort(config.paths.cohort)
    spec = spec_from(config)
    vocab = build_vocab(corpus_of(stays), max_size=config.vocab.vocab_max_size,
                        min_freq=config.vocab.vocab_min_freq)
    out_dir = Path(config.paths.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if mode == "mlm":
        if spec.encoder not in (EncoderKind.DESC_BIRNN, EncoderKind.DESC_TRANSFORMER):
            raise ConfigurationError(
                "masked-token pretraining needs encoder desc_birnn or desc_transformer")
        encoder = build_text_encoder(spec.encoder, len(vocab), spec.hyper, spec.seed)
        corpus = _mlm_corpus(stays, vocab, spec.strategy)
        losses, _head = pretrain_mlm(encoder, corpus, steps=config.experiment.mlm_steps,
                                     seed=derive_seed(spec.seed, "mlm-pretrain"))
        path = out_dir / f"mlm_{spec.encoder.value}_s{spec.seed}.etck"
        save_checkpoint(path, {f"txt.{k}": v for k, v in encoder.params.items()},
                        {"kind": "text_encoder", "text_kind": encoder.kind,
                         "text_args": text_encoder_args(encoder),
                         "vocab_tokens": vocab.id_to_token,
                         "vocab_digest": vocab.digest(),
                         "loss_first": losses[0], "loss_last": losses[-1]})
        log(f"mlm: loss {losses[0]:.4f} -> {losses[-1]:.4f} over {len(losses)} steps; "
            f"saved {path}")
        return path

    if mode == "skipgram":
        data = prepare_stay_data(stays, vocab, spec.strategy, spec.task)
        code_vocab = CodeVocabulary([k for keys in data.stay_keys for k in keys])
        table = pretrain_code_skipgram(data.stay_keys, code_vocab, spec.hyper.embed_dim,
                                       window=spec.hyper.w2v_window,
                                       negatives=spec.hyper.w2v_negatives,
                                       steps=spec.hyper.w2v_steps,
                                       seed=derive_seed(spec.seed, "w2v"))
        path = out_dir / f"w2v_{spec.strategy.value}_s{spec.seed}.etck"
        save_checkpoint(path, {"emb.code_table": table},
                        {"kind": "code_table", "code_keys": code_vocab.keys[1:],
                         "strategy": spec.strategy.value, "dim": spec.hyper.embed_dim})
        log(f"skipgram: {len(code_vocab)} keys, dim {spec.hyper.embed_dim}; saved {path}")
        return path
    raise ConfigurationError(f"unknown pretrain mode '{mode}' (want mlm|skipgram)")


def cmd_train(config: Config, log=print) -> Path:
    stays = load_cohort(config.paths.cohort)
    spec = spec_from(config)
    vocab, ckpt = _load_vocab_source(config, stays)
    if vocab is None:
        raise ConfigurationError("init checkpoint carries no vocabulary")
    init_encoder = None
    init_code_table = None
    if ckpt is not None:
        tensors, meta = ckpt
        if meta.get("kind") == "text_encoder":
            init_encoder = _init_encoder_from(ckpt, spec)
        elif meta.get("kind") == "code_table":
            if spec.encoder not in CODE_KINDS:
                raise ConfigurationError(
                    "code-table init checkpoint requires a codeemb encoder")
            init_code_table = (meta, tensors)
        else:
            raise ConfigurationError(f"unsupported init checkpoint '{meta.get('kind')}'")

    data = prepare_stay_data(stays, vocab, spec.strategy, spec.task)
    if init_code_table is not None:
        split = make_split(data, spec.seed)
        code_vocab = CodeVocabulary([k for i in split.train for k in data.stay_keys[i]])
        meta, tensors = init_code_table
        aligned = _align_code_table(meta, tensors, code_vocab, spec.hyper.embed_dim)
        from .trainer import CodeEmbModel, SequencePredictor, FitResult, fit, TrainResult

        model = CodeEmbModel(code_vocab, spec.strategy, spec.hyper, spec.seed,
                             init_table=aligned)
        predictor = SequencePredictor(model.output_dim, spec.hyper.hidden_dim,
                                      n_outputs=spec.n_outputs,
                                      dropout_p=spec.hyper.dropout, seed=spec.seed)
        fit_result = fit(model, predictor, data, split.train, split.valid, spec.hyper,
                         spec.seed)
        scores, _ = predict_scores(model, predictor, data, list(split.test))
        test = _eval_auprc(scores, data.labels[list(split.test)], config)
        result = TrainResult(spec=spec, model=model, predictor=predictor, vocab=vocab,
                             split=split, fit=fit_result, test_auprc=test)
    else:
        result = train(spec, data, vocab, init_encoder=init_encoder)

    run_dir = _run_dir(config, spec, "single")
    save_run(run_dir / CHECKPOINT_NAME, result)
    write_metrics_csv(run_dir / "metrics.csv", result.fit.history)
    _write_representations(run_dir, result, data)
    manifest = _base_manifest(config, spec, "train",
                              {"cohort": _file_digest(config.paths.cohort)})
    manifest.update(test_auprc=result.test_auprc, best_epoch=result.fit.best_epoch,
                    best_valid_auprc=result.fit.best_valid)
    write_manifest(run_dir / "manifest.json", manifest)
    log(f"train: test auprc {result.test_auprc:.4f} "
        f"(best epoch {result.fit.best_epoch}); run dir {run_dir}")
    return run_dir


def _eval_auprc(scores, labels, config: Config):
    if labels.ndim == 2:
        return auprc_multilabel(scores, labels, average=config.experiment.dx_average)
    return auprc(scores, labels)


def _write_representations(run_dir: Path, result, data):
    import csv as _csv
    import io

    ids = list(result.split.test) if result.split.test else list(range(len(data)))
    reps = stay_representations(result.model, result.predictor, data, ids)
    buf = io.StringIO()
    writer = _csv.writer(buf)
    writer.writerow(["stay_id", "group"] + [f"h{i}" for i in range(reps.shape[1])])
    for row_i, stay_i in enumerate(ids):
        label = data.labels[stay_i]
        group = f"label={int(label)}" if np.ndim(label) == 0 else "stay"
        writer.writerow([data.stay_ids[stay_i], group]
                        + [f"{v:.6f}" for v in reps[row_i]])
    (run_dir / "representations.csv").write_text(buf.getvalue(), encoding="utf-8")


def cmd_transfer(config: Config, log=print) -> Path:
    if not config.paths.source_run:
        raise ConfigurationError("transfer requires source_run (a train run directory)")
    source_path = Path(config.paths.source_run)
    if source_path.is_dir():
        source_path = source_path / CHECKPOINT_NAME
    source = load_run(source_path)
    stays = load_cohort(config.paths.cohort)
    spec = ExperimentSpec(task=source.spec.task, encoder=source.spec.encoder,
                          strategy=source.spec.strategy, regime=Regime.TRANSFER,
                          few_shot_ratios=config.ratios(), hyper=hyper_from(config),
                          seed=config.experiment.seed)
    data = prepare_stay_data(stays, source.vocab, spec.strategy, spec.task)
    points = transfer(spec, source, data)
    for p in points:
        log(f"ratio {p.ratio:g}: auprc {p.auprc:.4f}, "
            f"reinitialized parameters {p.reinitialized_params}")
    run_dir = _run_dir(config, spec, "transfer")
    manifest = _base_manifest(config, spec, "transfer",
                              {"cohort": _file_digest(config.paths.cohort),
                               "source": _file_digest(source_path)})
    manifest["transfer_points"] = [
        {"ratio": p.ratio, "auprc": p.auprc,
         "reinitialized_params": p.reinitialized_params} for p in points]
    write_manifest(run_dir / "manifest.json", manifest)
    history = [row for p in points for row in p.history]
    write_metrics_csv(run_dir / "metrics.csv", history)
    return run_dir


def cmd_pool(config: Config, log=print) -> Path:
    if not (config.paths.cohort and config.paths.cohort_b):
        raise ConfigurationError("pool requires cohort and cohort_b")
    stays_a = load_cohort(config.paths.cohort)
    stays_b = load_cohort(config.paths.cohort_b)
    spec = spec_from(config, regime=Regime.POOLED)
    init_encoder = None
    if config.paths.init_checkpoint:
        tensors, meta = load_checkpoint(config.paths.init_checkpoint)
        init_encoder = _init_encoder_from((tensors, meta), spec)
    result = pool(spec, stays_a, stays_b, init_encoder=init_encoder)
    for name, value in sorted(result.per_hospital_auprc.items()):
        log(f"pooled test auprc [{name}]: {value:.4f}")
    log(f"shared text vocabulary: {result.desc_vocab_size} tokens"
        + (f"; pooled code vocabulary: {result.code_vocab_size} keys"
           if result.code_vocab_size else ""))
    run_dir = _run_dir(config, spec, "pool")
    manifest = _base_manifest(config, spec, "pool",
                              {"cohort": _file_digest(config.paths.cohort),
                               "cohort_b": _file_digest(config.paths.cohort_b)})
    manifest.update(per_hospital_auprc=result.per_hospital_auprc,
                    desc_vocab_size=result.desc_vocab_size,
                    code_vocab_size=result.code_vocab_size)
    write_manifest(run_dir / "manifest.json", manifest)
    write_metrics_csv(run_dir / "metrics.csv", result.fit.history)
    save_checkpoint(run_dir / CHECKPOINT_NAME,
                    run_tensors(result.model, result.predictor),
                    run_meta(spec, result.model, result.vocab))
    return run_dir


def cmd_evaluate(config: Config, log=print) -> float:
    if not config.paths.source_run:
        raise ConfigurationError("evaluate requires source_run")
    source_path = Path(config.paths.source_run)
    if source_path.is_dir():
        source_path = source_path / CHECKPOINT_NAME
    run = load_run(source_path)
    stays = load_cohort(config.paths.cohort)
    data = prepare_stay_data(stays, run.vocab, run.spec.strategy, run.spec.task)
    split = make_split(data, run.spec.seed)
    scores, loss = predict_scores(run.model, run.predictor, data, list(split.test))
    value = _eval_auprc(scores, data.labels[list(split.test)], config)
    log(f"evaluate: test auprc {value:.4f} (loss {loss:.4f}, "
        f"{len(split.test)} stays)")
    return value


def cmd_report(config: Config, log=print) -> list:
    out = Path(config.paths.out_dir) / "report"
    written = emit_report(config.paths.out_dir, out)
    log(f"report: wrote {len(written)} files under {out}")
    return written


def cmd_selfcheck(config: Config, log=print) -> bool:
    """Gradient checks and metric-oracle checks; prints one line per suite."""
    import numpy as _np

    from . import tensor as T
    from .gradcheck import check_gradients
    from .metrics import auprc as _auprc
    from .oracles import ap_reference, enumerate_ranked_instances
    from .rng import purpose_rng as _rng
    from .tensor import Tensor

    ok = True

    def check(name, fn):
        nonlocal ok
        try:
            fn()
            log(f"PASS {name}")
        except Exception as exc:  # report every suite before failing
            ok = False
            log(f"FAIL {name}: {exc}")

    def op_checks():
        rng = _rng(0, "selfcheck")
        for _ in range(3):
            a = Tensor(rng.normal(size=(3, 4)), dtype=_np.float64)
            b = Tensor(rng.normal(size=(4, 2)), dtype=_np.float64)
            check_gradients(lambda ts: T.tensor_sum(T.matmul(ts[0], ts[1])), [a, b])
            x = Tensor(rng.normal(size=(5,)), dtype=_np.float64)
            check_gradients(lambda ts: T.tensor_sum(T.tanh(ts[0])), [x])
            check_gradients(lambda ts: T.tensor_sum(T.softmax(ts[0], axis=-1)
                                                    * Tensor(rng.normal(size=(5,)),
                                                             dtype=_np.float64)), [x])

    def auprc_checks():
        for scores, labels in enumerate_ranked_instances(5):
            got = _auprc(scores, labels)
            want = ap_reference(scores, labels)
            if abs(got - want) > 1e-12:
                raise AssertionError(f"auprc {got} != oracle {want} on {scores}/{labels}")
        rng = _rng(1, "selfcheck-auprc")
        for _ in range(200):
            n = int(rng.integers(2, 64))
            scores = rng.random(n)
            labels = (rng.random(n) < 0.4).astype(int)
            if labels.sum() == 0:
                labels[0] = 1
            if abs(_auprc(scores, labels) - ap_reference(scores, labels)) > 1e-9:
                raise AssertionError("random-instance mismatch")

    check("gradient-check core ops", op_checks)
    check("auprc oracle equivalence", auprc_checks)
    if not ok:
        from .errors import NumericError

        raise NumericError("selfcheck failed")
    return ok
