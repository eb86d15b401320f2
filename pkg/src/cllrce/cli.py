"""Command-line entry point: ``cllrce <command> ...``.

Commands: synth, train, embed, trials, score, eval, compare, report, run.
Failures exit with status 1 and print one line ``error: <Type>: <message>``
to stderr.
"""

import argparse
import logging
import sys
from collections import defaultdict
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import formats as fmt
from .config import BACKENDS, load_config
from .errors import ContractError, require
from .experiment import embed_corpus
from .losses import LOSSES
from .metrics import DcfParams, evaluate, mcnemar
from .scoring import build_trial_grid, enroll_all, fit_two_cov, score_trials
from .synthdata import CorpusSpec, generate_corpus
from .trainer import train

log = logging.getLogger("cllrce")


# -- commands ------------------------------------------------------------------

def cmd_synth(config, out_path, seed=None):
    spec = config.corpus if seed is None else replace(config.corpus, seed=seed)
    corpus = generate_corpus(spec)
    fmt.write_corpus(out_path, corpus, spec)
    return corpus


def cmd_train(config, corpus_path, loss_kind, out_checkpoint, pooling=None, seed=None, epochs=None):
    header, corpus = fmt.read_corpus(corpus_path)
    spec_dict = header.get("corpus_spec")
    spec = CorpusSpec(**spec_dict) if spec_dict else config.corpus
    overrides = {"pooling": pooling} if pooling else {}
    mcfg = config.model.build(spec, **overrides)
    tkw = {"loss_kind": loss_kind or config.train.loss_kind}
    if seed is not None:
        tkw["seed"] = seed
    if epochs is not None:
        tkw["epochs"] = epochs
    tcfg = replace(config.train, **tkw)
    params, history, state = train(corpus, mcfg, tcfg)
    log.info("trained %s: final loss %.4f in %.1fs", tcfg.loss_kind, history.epoch_loss[-1], history.wall_time)
    fmt.write_checkpoint(out_checkpoint, params, mcfg, state.step, tcfg)
    history_path = history_path_for(out_checkpoint)
    fmt.write_json(history_path, history.to_dict())
    return params, history


def history_path_for(checkpoint):
    p = Path(checkpoint)
    return p.with_name(p.stem + ".history.json")


def cmd_embed(checkpoint, corpus_path, out_path):
    params, mcfg, step, _ = fmt.read_checkpoint(checkpoint)
    _, corpus = fmt.read_corpus(corpus_path)
    embeddings = embed_corpus(params, mcfg, corpus)
    fmt.write_embeddings(out_path, corpus, embeddings, {"step": step})
    return embeddings


def cmd_trials(corpus_path, out_path):
    _, corpus = fmt.read_corpus(corpus_path)
    trials = build_trial_grid(corpus)
    fmt.write_trials(out_path, trials)
    return trials


def cmd_score(embeddings_path, trial_list, backend, out_path):
    require(backend in BACKENDS, f"unknown backend {backend!r}")
    _, meta, emb = fmt.read_embeddings(embeddings_path)
    trials = fmt.read_trials(trial_list)
    enrollments = enroll_all(meta, emb)
    two_cov = None
    if backend == "twocov":
        train_keys = [u for u in meta if u.split == "train"]
        require(train_keys, "twocov backend needs training-split embeddings in the archive")
        x = np.stack([emb[u.key] for u in train_keys])
        x = x / np.linalg.norm(x, axis=1, keepdims=True)
        two_cov = fit_two_cov(x, [u.speaker_id for u in train_keys])
    _, records = score_trials(trials, enrollments, emb, backend, two_cov)
    fmt.write_scores(out_path, records)
    return records


def _conditions(trials):
    groups = defaultdict(list)
    for i, t in enumerate(trials):
        groups[(fmt.style_of_key(t.enroll_id), fmt.style_of_key(t.test_utt_id))].append(i)
    return dict(sorted(groups.items(), key=lambda kv: (str(kv[0][0]), str(kv[0][1]))))


def cmd_eval(score_file, trial_list, p_target=0.01, c_miss=1.0, c_fa=1.0):
    """Metrics record: overall plus one entry per (enroll style, test style)."""
    dcf = DcfParams(p_target, c_miss, c_fa)
    trials = fmt.read_trials(trial_list)
    scores, labels = fmt.align_scores(trials, fmt.read_scores(score_file), score_file)
    record = {
        "dcf": {"p_target": p_target, "c_miss": c_miss, "c_fa": c_fa},
        "overall": evaluate(scores, labels, dcf).to_dict(),
        "conditions": [],
    }
    for (e, t), idx in _conditions(trials).items():
        row = {"enroll_style": e, "test_style": t}
        row.update(evaluate(scores[idx], labels[idx], dcf).to_dict())
        record["conditions"].append(row)
    return record


def significance_marker(result):
    if not result.significant:
        return "n.s."
    # n01 counts trials system A got wrong and B got right
    return "better" if result.n01 > result.n10 else "worse"


def _mcnemar_row(scores_a, scores_b, labels):
    ra, rb = evaluate(scores_a, labels), evaluate(scores_b, labels)
    res = mcnemar(ra.decisions, rb.decisions)
    return {
        "n01": res.n01, "n10": res.n10, "statistic": res.statistic, "p_value": res.p_value,
        "method": res.method, "marker": significance_marker(res),
        "eer_a": ra.eer, "eer_b": rb.eer, "threshold_a": ra.eer_threshold, "threshold_b": rb.eer_threshold,
    }


def cmd_compare(score_file_a, score_file_b, trial_list):
    """McNemar comparison of system B against system A, per condition and overall."""
    trials = fmt.read_trials(trial_list)
    sa, labels = fmt.align_scores(trials, fmt.read_scores(score_file_a), score_file_a)
    sb, _ = fmt.align_scores(trials, fmt.read_scores(score_file_b), score_file_b)
    out = {"overall": _mcnemar_row(sa, sb, labels), "conditions": []}
    for (e, t), idx in _conditions(trials).items():
        row = {"enroll_style": e, "test_style": t}
        row.update(_mcnemar_row(sa[idx], sb[idx], labels[idx]))
        out["conditions"].append(row)
    return out


def cmd_report(systems, baseline=None, comparisons=None):
    """Style-grid table: one row per style pair, a column group per system.

    ``systems`` and ``comparisons`` map system name to a metrics record
    and to a comparison record against ``baseline``. Returns
    ``(text, csv)``.
    """
    require(len(systems) >= 1, "report needs at least one system")
    comparisons = comparisons or {}
    if baseline is not None:
        require(baseline in systems, f"baseline {baseline!r} is not among the systems")
    names = list(systems)
    keyed = {n: {(c["enroll_style"], c["test_style"]): c for c in systems[n]["conditions"]} for n in names}
    sig = {n: {(c["enroll_style"], c["test_style"]): c["marker"] for c in comparisons[n]["conditions"]}
           for n in comparisons}
    cells = sorted({k for n in names for k in keyed[n]}, key=lambda k: (str(k[0]), str(k[1])))

    def marker(name, cell):
        if name == baseline:
            return "base"
        return sig.get(name, {}).get(cell, "")

    header = ["enroll_style", "test_style", "n_target", "n_nontarget"]
    for n in names:
        header += [f"{n}_eer_pct", f"{n}_min_dcf", f"{n}_cllr", f"{n}_sig"]
    rows = []
    for cell in cells:
        first = next(keyed[n][cell] for n in names if cell in keyed[n])
        row = [str(cell[0]), str(cell[1]), str(first["n_target"]), str(first["n_nontarget"])]
        for n in names:
            c = keyed[n].get(cell)
            if c is None:
                row += ["", "", "", ""]
            else:
                row += [f"{100 * c['eer']:.2f}", f"{c['min_dcf']:.3f}", f"{c['cllr']:.3f}", marker(n, cell)]
        rows.append(row)
    csv = "\n".join(",".join(r) for r in [header] + rows) + "\n"
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    text = "\n".join("  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in [header] + rows) + "\n"
    return text, csv


def cmd_run(config, losses=("ce", "cllr_ce"), baseline="ce", out_dir=None):
    """Full pipeline for each loss: synth, trials, train, embed, score, eval, compare, report."""
    for loss in losses:
        require(loss in LOSSES, f"unknown loss {loss!r}")
    require(baseline in losses, "baseline must be one of the trained losses")
    out = Path(out_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    sc = config.scoring
    cmd_synth(config, out / "corpus.arc")
    cmd_trials(out / "corpus.arc", out / "trials.txt")
    metrics, comps = {}, {}
    for loss in losses:
        d = out / loss
        d.mkdir(exist_ok=True)
        cmd_train(config, out / "corpus.arc", loss, d / "model.ckpt")
        cmd_embed(d / "model.ckpt", out / "corpus.arc", d / "embeddings.arc")
        cmd_score(d / "embeddings.arc", out / "trials.txt", sc.backend, d / "scores.txt")
        metrics[loss] = cmd_eval(d / "scores.txt", out / "trials.txt", sc.p_target, sc.c_miss, sc.c_fa)
        fmt.write_json(d / "metrics.json", metrics[loss])
    for loss in losses:
        if loss == baseline:
            continue
        comps[loss] = cmd_compare(out / baseline / "scores.txt", out / loss / "scores.txt", out / "trials.txt")
        fmt.write_json(out / f"compare_{loss}_vs_{baseline}.json", comps[loss])
    text, csv = cmd_report(metrics, baseline, comps)
    (out / "report.txt").write_text(text, encoding="utf-8")
    (out / "report.csv").write_text(csv, encoding="utf-8")
    return text


# -- argument parsing --------------------------------------------------------------

def _pairs(items, what):
    out = {}
    for item in items or []:
        name, sep, path = item.partition("=")
        if not sep or not name or not path:
            raise ContractError(f"{what} must look like NAME=PATH, got {item!r}")
        out[name] = fmt.read_json(path)
    return out


def _emit(obj, out):
    if out:
        fmt.write_json(out, obj)
    else:
        import json
        print(json.dumps(obj, sort_keys=True, indent=2))


def build_parser():
    ap = argparse.ArgumentParser(prog="cllrce", description="CllrCE speaker-verification experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic feature archive")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train an embedding extractor")
    p.add_argument("--config")
    p.add_argument("--corpus", required=True)
    p.add_argument("--loss", choices=sorted(LOSSES))
    p.add_argument("--pooling", choices=["stats", "attn"])
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("embed", help="extract embeddings for every utterance")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("trials", help="write the enroll-style x test-style trial list")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("score", help="score a trial list")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--trials", required=True)
    p.add_argument("--backend", choices=BACKENDS, default="cosine")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="EER / minDCF / Cllr of a score file")
    p.add_argument("--scores", required=True)
    p.add_argument("--trials", required=True)
    p.add_argument("--p-target", type=float, default=0.01)
    p.add_argument("--c-miss", type=float, default=1.0)
    p.add_argument("--c-fa", type=float, default=1.0)
    p.add_argument("--out")

    p = sub.add_parser("compare", help="McNemar test of system B against system A")
    p.add_argument("--scores-a", required=True)
    p.add_argument("--scores-b", required=True)
    p.add_argument("--trials", required=True)
    p.add_argument("--out")

    p = sub.add_parser("report", help="style-grid table from metrics records")
    p.add_argument("--system", action="append", required=True, metavar="NAME=METRICS_JSON")
    p.add_argument("--baseline")
    p.add_argument("--compare", action="append", metavar="NAME=COMPARE_JSON")
    p.add_argument("--csv")

    p = sub.add_parser("run", help="full pipeline from a config file")
    p.add_argument("--config")
    p.add_argument("--losses", nargs="+", choices=sorted(LOSSES), default=["ce", "cllr_ce"])
    p.add_argument("--baseline", default="ce")
    p.add_argument("--seed", type=int, help="overrides both corpus and training seeds")
    p.add_argument("--out-dir")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        _dispatch(args)
    except (ContractError, FloatingPointError, OSError, ValueError, KeyError) as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


def _dispatch(args):
    c = args.command
    if c == "synth":
        cmd_synth(load_config(args.config), args.out, args.seed)
    elif c == "train":
        cmd_train(load_config(args.config), args.corpus, args.loss, args.out, args.pooling, args.seed, args.epochs)
    elif c == "embed":
        cmd_embed(args.checkpoint, args.corpus, args.out)
    elif c == "trials":
        cmd_trials(args.corpus, args.out)
    elif c == "score":
        cmd_score(args.embeddings, args.trials, args.backend, args.out)
    elif c == "eval":
        _emit(cmd_eval(args.scores, args.trials, args.p_target, args.c_miss, args.c_fa), args.out)
    elif c == "compare":
        _emit(cmd_compare(args.scores_a, args.scores_b, args.trials), args.out)
    elif c == "report":
        text, csv = cmd_report(_pairs(args.system, "--system"), args.baseline, _pairs(args.compare, "--compare"))
        print(text, end="")
        if args.csv:
            Path(args.csv).write_text(csv, encoding="utf-8")
    elif c == "run":
        config = load_config(args.config)
        if args.seed is not None:
            config = replace(config, corpus=replace(config.corpus, seed=args.seed),
                             train=replace(config.train, seed=args.seed))
        print(cmd_run(config, args.losses, args.baseline, args.out_dir), end="")


if __name__ == "__main__":
    sys.exit(main())
