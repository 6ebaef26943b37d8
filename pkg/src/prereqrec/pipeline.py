"""Stage functions. Every stage reads its inputs from and writes its outputs to the run directory."""
from __future__ import annotations

import dataclasses
import itertools
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data as dm
from .concepts import extract_corpus_concepts, read_item_concepts, write_item_concepts
from .config import ExperimentConfig, int_list
from .embeddings import EmbeddingProvider
from .evaluation import EvalReport, cold_start_eval, evaluate, tasks_from_split
from .pdrs import (Contexts, KemModel, PdrsModel, load_kem, rec_data_from_split, save_kem, train_bem, train_kem,
                   train_pdrs)
from .prereq import (AnnotationSet, PairFeatureSource, PrerequisiteGraph, WikiRefCorpus, cooccurrence_matrix,
                     eval_extraction, fit_pkl, rd_classify, resolve_annotations, score_graph, term_frequencies)

log = logging.getLogger(__name__)

STAGES = ("extract", "pkl", "pretrain", "train", "eval")
LATTICE = list(itertools.product((False, True), repeat=3))


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


def out_dir(cfg: ExperimentConfig) -> Path:
    p = Path(cfg.output)
    (p / "checkpoints").mkdir(parents=True, exist_ok=True)
    return p


def artifact(cfg: ExperimentConfig, name: str) -> Path:
    p = Path(cfg.output) / name
    if not p.exists():
        raise FileNotFoundError(f"{p} is missing; run the stage that produces it first")
    return p


def variant_name(switches) -> str:
    tags = [n for n, on in zip(("prior", "target", "item"), switches) if on]
    return "pdrs-" + "+".join(tags) if tags else "pdrs-no-context"


# -- loading ----------------------------------------------------------------

def load_positive_corpus(cfg: ExperimentConfig) -> dm.Corpus:
    raw = dm.load_corpus(cfg.input_path("interactions"), cfg.input_path("documents"), cfg.data.lenient)
    corpus = dm.filter_min_interactions(dm.to_implicit(raw, cfg.data.rating_threshold), cfg.data.min_interactions)
    if len(corpus) == 0:
        raise dm.DataError("no users left after implicit conversion and the min-interaction filter")
    return corpus


def load_provider(cfg: ExperimentConfig) -> EmbeddingProvider:
    path = cfg.input_path("embeddings")
    if path.exists():
        return EmbeddingProvider.from_file(path)
    log.warning("embedding table %s not found; using hash vectors", path)
    return EmbeddingProvider()


# -- extract ----------------------------------------------------------------

def stage_extract(cfg: ExperimentConfig):
    raw = dm.load_corpus(cfg.input_path("interactions"), cfg.input_path("documents"), cfg.data.lenient)
    provider = load_provider(cfg)
    vocab, scores = extract_corpus_concepts(raw.documents, provider, cfg.extraction)
    out = out_dir(cfg) / "item_concepts.tsv"
    write_item_concepts(out, raw.item_ids, vocab, scores)
    n_empty = sum(1 for v in raw.documents if not scores.get(v))
    log.info("extract: %d concepts over %d documents (%d without concepts)", len(vocab), len(raw.documents), n_empty)
    return vocab, scores


# -- pkl --------------------------------------------------------------------

def feature_source(cfg: ExperimentConfig, corpus, vocab, item_scores) -> PairFeatureSource:
    provider = load_provider(cfg)
    tf = term_frequencies(corpus.documents, item_scores, vocab.phrases, corpus.n_items)
    cooc = cooccurrence_matrix(corpus, tf)
    wiki_path = cfg.input_path("wiki")
    wiki = WikiRefCorpus.from_file(wiki_path) if wiki_path.exists() else None
    if wiki is None:
        log.warning("wiki reference file %s not found; RefD is 0 everywhere", wiki_path)
    return PairFeatureSource(vocab.phrases, cooc, provider, wiki, cfg.pkl.top_k, cfg.pkl.smoothing_eps)


def stage_pkl(cfg: ExperimentConfig):
    corpus = load_positive_corpus(cfg)
    vocab, item_scores = read_item_concepts(artifact(cfg, "item_concepts.tsv"), corpus.item_index())
    source = feature_source(cfg, corpus, vocab, item_scores)
    annotations = AnnotationSet.from_file(cfg.input_path("annotations"))
    model = fit_pkl(annotations, source, cfg.pkl, seed=cfg.seed)
    asyd_only = fit_pkl(annotations, source, dataclasses.replace(cfg.pkl, features="asyd"), seed=cfg.seed)
    graph = score_graph(model, source, edge_threshold=cfg.pkl.edge_threshold, refd_min=cfg.pkl.refd_min_evidence)
    out = out_dir(cfg)
    graph.to_file(out / "prereq_graph.tsv")

    # RD baseline scored on the same held-out annotations
    from .prereq import annotation_split
    triples = resolve_annotations(annotations, source.index)
    _, test = annotation_split(len(triples), cfg.pkl.train_frac, cfg.seed)
    band = {"prior": 1, "neutral": 0, "posterior": -1}
    rd_pred = [band[rd_classify(float(source.refd(np.array([triples[k][0]]), np.array([triples[k][1]]))[0]),
                                cfg.pkl.rd_theta)] for k in test]
    rd_report = eval_extraction(rd_pred, [triples[k][2] for k in test]) if len(test) else None

    reports = {"pkl": model.test_report, "asyd-only": asyd_only.test_report, "rd": rd_report}
    with open(out / "pkl_report.tsv", "w", encoding="utf-8") as fh:
        fh.write("variant\tclass\tprecision\trecall\tf1\tconfig_hash\tseed\n")
        for name, rep in reports.items():
            if rep is None:
                continue
            rows = [(f"{c:+d}" if c else "0", *rep.per_class[c][:3]) for c in sorted(rep.per_class)]
            rows += [("macro", *rep.macro), ("directional", *rep.directional)]
            for cls, p, r, f in rows:
                fh.write(f"{name}\t{cls}\t{p!r}\t{r!r}\t{f!r}\t{cfg.hash()}\t{cfg.seed}\n")
    with open(out / "pkl_model.json", "w", encoding="utf-8") as fh:
        json.dump({"weights": model.weights.tolist(), "features": cfg.pkl.features, "margin": model.margin,
                   "config_hash": cfg.hash()}, fh, indent=1, sort_keys=True)
    log.info("pkl: %d edges; held-out directional F1 %.4f (asyd-only %.4f)", len(graph),
             model.test_report.f1 if model.test_report else float("nan"),
             asyd_only.test_report.f1 if asyd_only.test_report else float("nan"))
    return model, asyd_only, graph, rd_report


# -- recommendation data ----------------------------------------------------

@dataclass
class Prepared:
    corpus: dm.Corpus           # all positives
    graph: PrerequisiteGraph
    item_concepts: dict          # item -> set of concept ids (graph node ids)
    states: dict
    middle: np.ndarray
    rec_corpus: dm.Corpus        # middle interactions only
    contexts: Contexts
    context_pairs: tuple         # (users, items) of the prior/target segments

    @property
    def n_concepts(self) -> int:
        return len(self.graph.nodes)


def prepare(cfg: ExperimentConfig) -> Prepared:
    corpus = load_positive_corpus(cfg)
    vocab, item_scores = read_item_concepts(artifact(cfg, "item_concepts.tsv"), corpus.item_index())
    graph = PrerequisiteGraph.from_file(artifact(cfg, "prereq_graph.tsv"), nodes=vocab.phrases)
    item_concepts = {v: set(s) for v, s in item_scores.items()}
    states, middle = dm.derive_knowledge_state(corpus, item_concepts, cfg.data.prior_frac, cfg.data.target_frac,
                                               vocabulary=range(len(graph.nodes)))
    contexts = Contexts.build(states, item_concepts, corpus.n_users, corpus.n_items, len(graph.nodes))
    rec = corpus.subset(middle)
    outside = ~middle
    return Prepared(corpus, graph, item_concepts, states, middle, rec, contexts,
                    (corpus.users[outside], corpus.items[outside]))


def recommendation_data(cfg: ExperimentConfig, prep: Prepared, mode: str | None = None):
    """(RecData, test tasks) for one split of the middle interactions."""
    mode = mode or cfg.data.split
    split = dm.make_split(prep.rec_corpus, mode, cfg.seed)
    c = split.corpus
    exclude = prep.corpus.positives_by_user()
    val_tasks = tasks_from_split(split, "validation", exclude, cfg.eval.negatives, cfg.seed + 1)
    test_tasks = tasks_from_split(split, "test", exclude, cfg.eval.negatives, cfg.seed + 2)
    ku = np.concatenate([c.users[split.train], prep.context_pairs[0]])
    kv = np.concatenate([c.items[split.train], prep.context_pairs[1]])
    data = rec_data_from_split(split, prep.contexts, prep.n_concepts, (ku, kv), val_tasks, prep.graph)
    data.substitute_cold = mode in ("cold-user", "cold-item")
    return data, test_tasks


def pdrs_cfg_for(cfg: ExperimentConfig, **kw):
    return dataclasses.replace(cfg.pdrs, **kw)


# -- pretrain / train -------------------------------------------------------

def stage_pretrain(cfg: ExperimentConfig, prep: Prepared | None = None):
    prep = prep or prepare(cfg)
    data, _ = recommendation_data(cfg, prep)
    out = out_dir(cfg)
    kem = train_kem(prep.graph, cfg.kem, cfg.seed, prep.n_concepts)
    save_kem(kem.model, out / "checkpoints" / "kem.npz", {"config_hash": cfg.hash()})
    with open(out / "kem_report.tsv", "w", encoding="utf-8") as fh:
        fh.write("dim\tlayers\trmse\tr2\tconfig_hash\tseed\n")
        fh.write(f"{cfg.kem.dim}\t{cfg.kem.layers}\t{kem.rmse!r}\t{kem.r2!r}\t{cfg.hash()}\t{cfg.seed}\n")
    bem, _ = train_bem(data, cfg.bem, cfg.seed)
    bem.save(out / "checkpoints" / "bem.npz", {"config_hash": cfg.hash()})
    return kem, bem


def _train_variant(cfg, prep, mode, switches, kem=None, bem=None, layers=None, pretrain=None):
    data, tasks = recommendation_data(cfg, prep, mode)
    pcfg = pdrs_cfg_for(cfg, use_prior=switches[0], use_target=switches[1], use_item=switches[2])
    if layers is not None:
        pcfg.layers = layers
    if pretrain is not None:
        pcfg.pretrain = pretrain
    model, logbook = train_pdrs(data, pcfg, cfg.kem, cfg.bem, cfg.seed, kem=kem, bem=bem)
    return model, logbook, tasks


def stage_train(cfg: ExperimentConfig, prep: Prepared | None = None):
    prep = prep or prepare(cfg)
    out = out_dir(cfg)
    kem = bem = None
    if cfg.pdrs.pretrain:
        kem = load_kem(artifact(cfg, "checkpoints/kem.npz"))
        bem = PdrsModel.load(artifact(cfg, "checkpoints/bem.npz"))
    switches = (cfg.pdrs.use_prior, cfg.pdrs.use_target, cfg.pdrs.use_item)
    model, logbook, _ = _train_variant(cfg, prep, None, switches, kem, bem)
    model.save(out / "checkpoints" / "pdrs.npz", {"config_hash": cfg.hash()})
    trained = {"pdrs": model}
    if cfg.eval.cold != "none":
        # cold models get their own pretraining on the cold split's training part
        for tag, sw in (("", (True, True, True)), ("-ablated", _ablate_cold(cfg.eval.cold))):
            m, _, _ = _train_variant(cfg, prep, cfg.eval.cold, sw)
            m.save(out / "checkpoints" / f"{cfg.eval.cold}{tag}.npz", {"config_hash": cfg.hash()})
            trained[cfg.eval.cold + tag] = m
    return trained, logbook


def _ablate_cold(mode: str):
    # drop the contexts that describe the cold side
    return (False, False, True) if mode == "cold-user" else (True, True, False)


# -- eval -------------------------------------------------------------------

def stage_eval(cfg: ExperimentConfig, prep: Prepared | None = None) -> EvalReport:
    prep = prep or prepare(cfg)
    out = out_dir(cfg)
    ks = cfg.eval.k_list()
    model = PdrsModel.load(artifact(cfg, "checkpoints/pdrs.npz"))
    _, tasks = recommendation_data(cfg, prep)
    switches = (cfg.pdrs.use_prior, cfg.pdrs.use_target, cfg.pdrs.use_item)
    report = evaluate(model.score, tasks, ks, "warm", variant_name(switches))
    report.notes["warm/shortfall"] = tasks.shortfall
    if cfg.eval.cold != "none":
        cold = PdrsModel.load(artifact(cfg, f"checkpoints/{cfg.eval.cold}.npz"))
        ablated = PdrsModel.load(artifact(cfg, f"checkpoints/{cfg.eval.cold}-ablated.npz"))
        _, cold_tasks = recommendation_data(cfg, prep, cfg.eval.cold)
        report.merge(cold_start_eval(cold, cold_tasks, cfg.eval.cold, ks, ablated))
    kem_path = out / "kem_report.tsv"
    if kem_path.exists():
        with open(kem_path, encoding="utf-8") as fh:
            fh.readline()
            row = fh.readline().rstrip("\n").split("\t")
        report.metrics[("RMSE", 0, "kem", f"d={row[0]}")] = float(row[2])
        report.metrics[("R2", 0, "kem", f"d={row[0]}")] = float(row[3])
    report.to_tsv(out / "report.tsv", cfg.hash(), cfg.seed)
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump({"config_hash": cfg.hash(), "seed": cfg.seed,
                   "metrics": [dict(r) for r in report.rows()], "notes": report.notes}, fh, indent=1, sort_keys=True)
    return report


def run_all(cfg: ExperimentConfig, stages=STAGES) -> EvalReport | None:
    out = out_dir(cfg)
    cfg.write(out / "config.ini")
    prep = None
    report = None
    for stage in stages:
        t0 = time.perf_counter()
        try:
            if stage == "extract":
                stage_extract(cfg)
            elif stage == "pkl":
                stage_pkl(cfg)
            else:
                if prep is None:
                    prep = prepare(cfg)
                if stage == "pretrain":
                    stage_pretrain(cfg, prep)
                elif stage == "train":
                    stage_train(cfg, prep)
                elif stage == "eval":
                    report = stage_eval(cfg, prep)
                else:
                    raise ValueError(f"unknown stage {stage!r}")
        except (FileNotFoundError, dm.DataError):
            raise
        except Exception as exc:
            raise StageError(stage, exc) from exc
        log.info("stage %s done in %.1fs", stage, time.perf_counter() - t0)
    return report


# -- sweeps -----------------------------------------------------------------

SWEEP_AXES = ("layers", "grid", "kem-dim", "ablation")


def sweep_points(cfg: ExperimentConfig, axis: str) -> list[dict]:
    if axis == "layers":
        return [{"layers": L, "pretrain": p} for p in (True, False) for L in int_list(cfg.eval.layers)]
    if axis == "grid":
        return [{"d": d, "d_concept": dc} for d in int_list(cfg.eval.grid_d) for dc in int_list(cfg.eval.grid_d_concept)]
    if axis == "kem-dim":
        return [{"d_concept": dc} for dc in int_list(cfg.eval.kem_dims)]
    if axis == "ablation":
        return [{"prior": a, "target": b, "item": c} for a, b, c in LATTICE]
    raise ValueError(f"unknown sweep axis {axis!r}; choose from {', '.join(SWEEP_AXES)}")


_SHARED: dict = {}


def _pretrained(cfg: ExperimentConfig, prep: Prepared, d: int | None = None, d_concept: int | None = None):
    """KEM and BEM for the sweep's base split, cached per dimension pair within a process."""
    bem_cfg = dataclasses.replace(cfg.bem, dim=d or cfg.bem.dim)
    kem_cfg = dataclasses.replace(cfg.kem, dim=d_concept or cfg.kem.dim)
    key = (cfg.hash(), bem_cfg.dim, kem_cfg.dim)
    if key not in _SHARED:
        data, _ = recommendation_data(cfg, prep)
        kem = train_kem(prep.graph, kem_cfg, cfg.seed, prep.n_concepts).model
        bem, _ = train_bem(data, bem_cfg, cfg.seed)
        _SHARED[key] = (kem, bem)
    return _SHARED[key]


def run_point(cfg: ExperimentConfig, axis: str, point: dict, prep: Prepared | None = None) -> dict:
    prep = prep or prepare(cfg)
    ks = cfg.eval.k_list()
    row = dict(point)
    if axis == "kem-dim":
        res = train_kem(prep.graph, dataclasses.replace(cfg.kem, dim=point["d_concept"]), cfg.seed, prep.n_concepts)
        row.update(rmse=res.rmse, r2=res.r2)
        return row
    if axis == "layers":
        kem, bem = _pretrained(cfg, prep) if point["pretrain"] else (None, None)
        model, _, tasks = _train_variant(cfg, prep, None, (True, True, True), kem, bem,
                                         layers=point["layers"], pretrain=point["pretrain"])
    elif axis == "grid":
        kem, bem = _pretrained(cfg, prep, point["d"], point["d_concept"])
        cfg2 = cfg.replace(bem={"dim": point["d"]}, kem={"dim": point["d_concept"]})
        model, _, tasks = _train_variant(cfg2, prep, None, (True, True, True), kem, bem)
    else:
        kem, bem = _pretrained(cfg, prep) if cfg.pdrs.pretrain else (None, None)
        model, _, tasks = _train_variant(cfg, prep, None, (point["prior"], point["target"], point["item"]), kem, bem)
    rep = evaluate(model.score, tasks, ks)
    for k in ks:
        row[f"HR@{k}"] = rep.get("HR", k)
        row[f"NDCG@{k}"] = rep.get("NDCG", k)
    return row


def _point_worker(args):
    cfg, axis, point = args
    try:
        return run_point(cfg, axis, point)
    except Exception as exc:  # recorded, the sweep carries on
        log.error("sweep point %s failed: %s", point, exc)
        return {**point, "error": f"{type(exc).__name__}: {exc}"}


def run_sweep(cfg: ExperimentConfig, axis: str, jobs: int = 1, prep: Prepared | None = None) -> list[dict]:
    points = sweep_points(cfg, axis)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_point_worker, [(cfg, axis, p) for p in points]))
    else:
        prep = prep or prepare(cfg)
        rows = []
        for p in points:
            try:
                rows.append(run_point(cfg, axis, p, prep))
            except Exception as exc:
                log.error("sweep point %s failed: %s", p, exc)
                rows.append({**p, "error": f"{type(exc).__name__}: {exc}"})
    write_sweep(Path(out_dir(cfg)) / f"sweep_{axis}.tsv", rows, cfg)
    return rows


def write_sweep(path, rows, cfg: ExperimentConfig):
    cols = []
    for r in rows:
        for k in r:
            if k not in cols and k != "error":
                cols.append(k)
    cols.append("error")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(cols + ["config_hash", "seed"]) + "\n")
        for r in rows:
            vals = [_cell(r.get(c, "")) for c in cols]
            fh.write("\t".join(vals + [cfg.hash(), str(cfg.seed)]) + "\n")


def _cell(v) -> str:
    if isinstance(v, bool):
        return "on" if v else "off"
    if isinstance(v, float):
        return repr(v)
    return str(v)
