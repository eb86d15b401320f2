"""On-disk formats: binary array archives, trial lists and score files.

Archive layout (all integers little-endian uint64)::

    b"CLLRARC\\n"  version  meta_len  meta_json  n_entries
    then per entry: rows  cols  rows*cols float64 (row-major, little-endian)

``meta_json`` is UTF-8 JSON ``{"header": {...}, "entries": [{...}, ...]}``
with sorted keys, so identical content always serializes to identical
bytes. Each entry's metadata records ``ndim`` so 1-D arrays round-trip.
"""

import json
import re
import struct
from pathlib import Path

import numpy as np

from .errors import ContractError, require
from .scoring import Trial

MAGIC = b"CLLRARC\n"
VERSION = 1
_U64 = struct.Struct("<Q")


def _dumps(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def write_archive(path, header, entries):
    """Write ``entries`` (a list of ``(meta_dict, array)``) with a header dict."""
    metas, arrays = [], []
    for meta, arr in entries:
        arr = np.asarray(arr, dtype=np.float64)
        require(arr.ndim in (1, 2), f"archive entries must be 1-D or 2-D, got {arr.ndim}-D")
        metas.append(dict(meta, ndim=arr.ndim))
        arrays.append(np.atleast_2d(arr))
    blob = _dumps({"header": header, "entries": metas}).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(_U64.pack(VERSION))
        f.write(_U64.pack(len(blob)))
        f.write(blob)
        f.write(_U64.pack(len(arrays)))
        for arr in arrays:
            f.write(_U64.pack(arr.shape[0]))
            f.write(_U64.pack(arr.shape[1]))
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_archive(path):
    """Returns ``(header, [(meta, array), ...])``."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ContractError(f"{path}: not an archive (bad magic)")
    pos = 8

    def u64():
        nonlocal pos
        if pos + 8 > len(data):
            raise ContractError(f"{path}: truncated archive")
        (v,) = _U64.unpack_from(data, pos)
        pos += 8
        return v

    version = u64()
    if version != VERSION:
        raise ContractError(f"{path}: unsupported archive version {version}")
    meta_len = u64()
    meta = json.loads(data[pos:pos + meta_len].decode("utf-8"))
    pos += meta_len
    n = u64()
    require(n == len(meta["entries"]), f"{path}: entry count mismatch")
    entries = []
    for m in meta["entries"]:
        rows, cols = u64(), u64()
        nbytes = rows * cols * 8
        if pos + nbytes > len(data):
            raise ContractError(f"{path}: truncated archive")
        arr = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=pos).reshape(rows, cols).astype(np.float64)
        pos += nbytes
        m = dict(m)
        if m.pop("ndim") == 1:
            arr = arr[0]
        entries.append((m, arr))
    require(pos == len(data), f"{path}: trailing bytes")
    return meta["header"], entries


# -- corpus, embeddings, checkpoints ----------------------------------------

def write_corpus(path, corpus, spec=None):
    header = {"kind": "features", "corpus_spec": spec.to_dict() if spec is not None else None}
    entries = [({"key": u.key, "speaker": u.speaker_id, "style": u.style_id, "split": u.split}, u.features)
               for u in corpus]
    write_archive(path, header, entries)


def read_corpus(path):
    from .synthdata import Utterance

    header, entries = read_archive(path)
    require(header.get("kind") == "features", f"{path}: not a feature archive")
    corpus = [Utterance(m["key"], a, m["speaker"], m["style"], m["split"]) for m, a in entries]
    return header, corpus


def write_embeddings(path, corpus, embeddings, header_extra=None):
    header = {"kind": "embeddings", **(header_extra or {})}
    entries = [({"key": u.key, "speaker": u.speaker_id, "style": u.style_id, "split": u.split}, embeddings[u.key])
               for u in corpus]
    write_archive(path, header, entries)


def read_embeddings(path):
    """Returns ``(header, corpus_meta, {key: vector})``; corpus_meta has no features."""
    from .synthdata import Utterance

    header, entries = read_archive(path)
    require(header.get("kind") == "embeddings", f"{path}: not an embedding archive")
    meta = [Utterance(m["key"], None, m["speaker"], m["style"], m["split"]) for m, _ in entries]
    return header, meta, {m["key"]: a for m, a in entries}


def write_checkpoint(path, params, model_config, step, train_config=None):
    header = {
        "kind": "checkpoint",
        "model_config": model_config.to_dict(),
        "train_config": train_config.to_dict() if train_config is not None else None,
        "step": int(step),
    }
    write_archive(path, header, [({"name": k}, v) for k, v in params.items()])


def read_checkpoint(path):
    """Returns ``(params, ModelConfig, step, header)``."""
    from .model import ModelConfig, check_params

    header, entries = read_archive(path)
    require(header.get("kind") == "checkpoint", f"{path}: not a checkpoint")
    config = ModelConfig(**header["model_config"])
    params = {m["name"]: a for m, a in entries}
    check_params(params, config)
    return params, config, header["step"], header


# -- text formats ------------------------------------------------------------

def _check_token(tok):
    require(tok and not any(c.isspace() for c in tok), f"key {tok!r} must be non-empty without whitespace")


def write_trials(path, trials):
    lines = []
    for t in trials:
        _check_token(t.enroll_id)
        _check_token(t.test_utt_id)
        lines.append(f"{t.enroll_id} {t.test_utt_id} {'target' if t.is_target else 'nontarget'}\n")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.writelines(lines)


def read_trials(path):
    trials = []
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3 or parts[2] not in ("target", "nontarget"):
                raise ContractError(f"{path}:{n}: expected '<enroll> <test> target|nontarget'")
            trials.append(Trial(parts[0], parts[1], parts[2] == "target"))
    return trials


def format_score(x):
    return f"{x:.17g}"


def write_scores(path, records):
    """``records`` yields objects with ``enroll_id``, ``test_utt_id``, ``score``."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for r in records:
            f.write(f"{r.enroll_id} {r.test_utt_id} {format_score(r.score)}\n")


def read_scores(path):
    """Returns a list of ``(enroll_id, test_id, score)`` in file order."""
    out = []
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise ContractError(f"{path}:{n}: expected '<enroll> <test> <score>'")
            try:
                out.append((parts[0], parts[1], float(parts[2])))
            except ValueError:
                raise ContractError(f"{path}:{n}: bad score {parts[2]!r}") from None
    return out


def align_scores(trials, scores, source="score file"):
    """Scores in trial order, plus target labels. Every trial must be scored."""
    lookup = {(e, t): s for e, t, s in scores}
    vals = []
    for tr in trials:
        try:
            vals.append(lookup[(tr.enroll_id, tr.test_utt_id)])
        except KeyError:
            raise ContractError(f"{source} has no score for trial {tr.enroll_id} {tr.test_utt_id}") from None
    return np.array(vals, dtype=np.float64), np.array([t.is_target for t in trials], dtype=bool)


_STYLE = re.compile(r"-s(\d+)(?:-|$)")


def style_of_key(key):
    """Style index encoded in an enrollment or utterance key, or None."""
    m = _STYLE.search(key)
    return int(m.group(1)) if m else None


def write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps(obj, sort_keys=True, indent=2, allow_nan=False))
        f.write("\n")


def read_json(path):
    with open(path, encoding="utf-8") as f:
        return json.load(f)
