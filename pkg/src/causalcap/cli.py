"""Command line entry point: generation, training, evaluation, labeling, serving.

Every command reads --config <json> merged over per-command defaults, then
applies repeated --set key=value overrides (dotted keys reach nested tables).
Unknown keys are rejected. Each run writes resolved_config.json into its
output directory so the run can be reproduced from that file alone.

Exit codes: 0 ok, 1 config error, 2 runtime failure, 3 partial results
(at least one video exhausted its generation attempts).
"""
from __future__ import annotations

import argparse
import copy
import json
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Sequence

from .data import (
    CtnCaption,
    DatasetManifest,
    VideoRecord,
    combine_caption,
    load_ctn,
    load_manifest,
    save_ctn,
)
from .filtering import (
    FilterDeps,
    FilterOutcome,
    HashingBackend,
    emscore,
    filter_loop,
    score_histogram,
    write_audit_log,
    write_histogram_csv,
)
from .llm import HttpBackend, LlmClient, StubBackend
from .metrics import (
    EvalPair,
    ReportRow,
    aggregate_judge,
    cider,
    judge_pair,
    rouge_l,
    spice_adapter,
    write_report_csv,
    write_summary_json,
)
from .prompts import captions_from_frame_texts, render
from .video import (
    FrameDecoder,
    FrameSequence,
    OpenCvDecoder,
    SyntheticDecoder,
    sample_equally_spaced,
    sample_frames,
)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_PARTIAL = 0, 1, 2, 3

COMMANDS = (
    "gen",
    "filter-stats",
    "train-stage1",
    "train-stage2",
    "ablate",
    "eval",
    "judge",
    "label",
    "humaneval-serve",
    "export-embeddings",
)


class ConfigError(Exception):
    pass


_BACKEND_DEFAULTS = {
    "kind": "stub",
    "script": [],
    "url": None,
    "model": None,
    "api_key_env": "LLM_API_KEY",
    "max_retries": 3,
}
_SCORER_DEFAULTS = {"kind": "emscore", "dim": 64, "value": 0.5, "decoder": "synthetic"}

# Tables whose keys pass straight through to a constructor are left open;
# everything else rejects unknown keys here.
_OPEN_TABLES = ("encoder", "stage2", "checkpoints")

_COMMAND_DEFAULTS: dict[str, dict] = {
    "gen": {
        "manifest": None,
        "captions": None,
        "out_dir": None,
        "split": None,
        "template_id": "fewshot_v1",
        "theta": 0.2,
        "max_attempts": 10,
        "seed": 0,
        "workers": 1,
        "max_tokens": 256,
        "temperature": 0.7,
        "backend": dict(_BACKEND_DEFAULTS),
        "scorer": dict(_SCORER_DEFAULTS),
    },
    "filter-stats": {
        "audit": None,
        "out_dir": None,
        "bin_width": 0.05,
        "theta": 0.2,
        "source": "attempts",  # attempts | accepted
    },
    "train-stage1": {
        "manifest": None,
        "ctn": None,
        "split": "train",
        "out_dir": None,
        "decoder": "synthetic",
        "seed": 0,
        "learning_rate": None,
        "epochs": None,
        "batch_size": 64,
        "roles": ["cause", "effect"],
        "encoder": {},
    },
    "train-stage2": {
        "manifest": None,
        "ctn": None,
        "split": "train",
        "val_split": None,
        "predict_split": None,
        "out_dir": None,
        "cause_ckpt": None,
        "effect_ckpt": None,
        "decoder": "synthetic",
        "seed": 0,
        "learning_rate": None,
        "epochs": None,
        "batch_size": 64,
        "stage2": {},
    },
    "ablate": {
        "id": None,
        "manifest": None,
        "ctn": None,
        "split": "train",
        "val_split": None,
        "predict_split": None,
        "out_dir": None,
        "decoder": "synthetic",
        "seed": 0,
        "learning_rate": None,
        "epochs": None,
        "batch_size": 64,
        "encoder": {},
        "stage2": {},
        "checkpoints": {},
    },
    "eval": {
        "predictions": None,
        "references": None,
        "out_dir": None,
        "spice_tool": None,
        "judge_results": None,
    },
    "judge": {
        "predictions": None,
        "references": None,
        "out_dir": None,
        "max_tokens": 8,
        "backend": dict(_BACKEND_DEFAULTS),
    },
    "label": {
        "video": None,
        "video_id": "unlabeled",
        "duration_s": None,
        "k": 5,
        "decoder": "opencv",
        "out_dir": None,
        "template_id": "fewshot_v1",
        "theta": 0.2,
        "max_attempts": 10,
        "seed": 0,
        "max_tokens": 256,
        "temperature": 0.7,
        "captioner": dict(_BACKEND_DEFAULTS),
        "backend": dict(_BACKEND_DEFAULTS),
        "scorer": dict(_SCORER_DEFAULTS),
    },
    "humaneval-serve": {
        "manifest": None,
        "ctn": None,
        "out_dir": None,
        "raters": [],
        "n_videos": None,
        "seed": 0,
        "store": None,
        "host": "127.0.0.1",
        "port": 8008,
    },
    "export-embeddings": {
        "manifest": None,
        "split": "train",
        "out_dir": None,
        "checkpoints": {},
        "decoder": "synthetic",
    },
}

# CLI flag -> config key, applied only when the command's schema has the key
_FLAG_KEYS = {
    "seed": "seed",
    "workers": "workers",
    "theta": "theta",
    "max_attempts": "max_attempts",
    "id": "id",
    "out": "out_dir",
}


def _merge(defaults: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(defaults)
    for key, value in override.items():
        dotted = f"{path}{key}"
        if key not in out:
            if path.rstrip(".").split(".")[-1] in _OPEN_TABLES:
                out[key] = value
                continue
            raise ConfigError(f"unknown config key {dotted!r}")
        if isinstance(out[key], dict) and isinstance(value, dict):
            out[key] = _merge(out[key], value, f"{dotted}.")
        else:
            out[key] = value
    return out


def _apply_set(cfg: dict, expr: str) -> None:
    if "=" not in expr:
        raise ConfigError(f"--set expects key=value, got {expr!r}")
    dotted, raw = expr.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    keys = dotted.split(".")
    node = cfg
    for i, key in enumerate(keys[:-1]):
        if key not in node or not isinstance(node[key], dict):
            raise ConfigError(f"unknown config table {'.'.join(keys[: i + 1])!r}")
        node = node[key]
    leaf = keys[-1]
    if leaf not in node and (len(keys) < 2 or keys[-2] not in _OPEN_TABLES):
        raise ConfigError(f"unknown config key {dotted!r}")
    node[leaf] = value


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    defaults = _COMMAND_DEFAULTS[command]
    file_cfg = {}
    if args.config is not None:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            file_cfg = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc.msg}")
        if not isinstance(file_cfg, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
    cfg = _merge(defaults, file_cfg)
    for expr in args.set or []:
        _apply_set(cfg, expr)
    for flag, key in _FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        if key not in defaults:
            raise ConfigError(f"--{flag.replace('_', '-')} does not apply to {command!r}")
        cfg[key] = value
    return cfg


def _require(cfg: dict, *keys: str) -> None:
    for key in keys:
        if cfg.get(key) in (None, "", []):
            raise ConfigError(f"config key {key!r} is required")


def _snapshot(cfg: dict, command: str, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"command": command, **cfg}
    (out_dir / "resolved_config.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _build_decoder(name: str) -> FrameDecoder:
    if name == "synthetic":
        return SyntheticDecoder()
    if name == "opencv":
        return OpenCvDecoder()
    raise ConfigError(f"unknown decoder {name!r}")


def _build_client(cfg: dict) -> LlmClient:
    kind = cfg.get("kind")
    if kind == "stub":
        script = cfg.get("script") or []
        if not script:
            raise ConfigError("stub backend needs a non-empty script")
        return LlmClient(StubBackend(script=list(script)), backend_id="stub")
    if kind == "http":
        if not cfg.get("url") or not cfg.get("model"):
            raise ConfigError("http backend needs url and model")
        backend = HttpBackend(cfg["url"], cfg["model"], api_key_env=cfg["api_key_env"])
        return LlmClient(backend, backend_id="http", max_retries=cfg.get("max_retries", 3))
    raise ConfigError(f"unknown backend kind {kind!r}")


def _build_scorer(cfg: dict, decoder: FrameDecoder) -> Callable[[VideoRecord, str], float]:
    kind = cfg.get("kind")
    if kind == "constant":
        value = float(cfg["value"])
        return lambda video, text: value
    if kind == "emscore":
        backend = HashingBackend(dim=int(cfg["dim"]))
        cache: dict[str, FrameSequence] = {}

        def score(video: VideoRecord, text: str) -> float:
            if video.video_id not in cache:
                cache[video.video_id] = sample_frames(video, decoder)
            return emscore(text, cache[video.video_id], backend)

        return score
    raise ConfigError(f"unknown scorer kind {kind!r}")


def cmd_gen(cfg: dict) -> int:
    _require(cfg, "manifest", "captions", "out_dir")
    manifest = load_manifest(cfg["manifest"], captions_path=cfg["captions"])
    out_dir = Path(cfg["out_dir"])
    _snapshot(cfg, "gen", out_dir)
    ctn_path = out_dir / "ctn.json"
    audit_path = out_dir / "audit.jsonl"

    accepted: dict[str, CtnCaption] = load_ctn(ctn_path) if ctn_path.exists() else {}
    records = manifest.records if cfg["split"] is None else manifest.by_split(cfg["split"])
    todo = [r for r in records if r.video_id not in accepted]
    for record in todo:
        if record.video_id not in manifest.caption_index:
            raise ConfigError(f"{record.video_id}: no descriptive captions in {cfg['captions']}")

    client = _build_client(cfg["backend"])
    scorer = _build_scorer(cfg["scorer"], _build_decoder(cfg["scorer"]["decoder"]))
    deps = FilterDeps(
        client=client,
        score=scorer,
        template_id=cfg["template_id"],
        max_tokens=cfg["max_tokens"],
        temperature=cfg["temperature"],
        seed=cfg["seed"],
    )

    lock = threading.Lock()
    exhausted: list[str] = []

    def handle(record: VideoRecord) -> None:
        outcome = filter_loop(
            record,
            manifest.caption_index[record.video_id],
            cfg["theta"],
            cfg["max_attempts"],
            deps,
        )
        with lock:
            write_audit_log([outcome], audit_path, append=True)
            if outcome.accepted is not None:
                accepted[record.video_id] = outcome.accepted
                save_ctn(accepted, ctn_path)
            else:
                exhausted.append(record.video_id)

    workers = max(1, int(cfg["workers"]))
    if workers == 1:
        for record in todo:
            handle(record)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(handle, todo))

    skipped = len(records) - len(todo)
    print(
        f"gen: accepted {len(accepted)}/{len(records)} "
        f"(skipped {skipped} already done, exhausted {len(exhausted)})"
    )
    if exhausted:
        print("exhausted: " + ", ".join(sorted(exhausted)), file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_filter_stats(cfg: dict) -> int:
    _require(cfg, "audit", "out_dir")
    audit_path = Path(cfg["audit"])
    if not audit_path.exists():
        raise ConfigError(f"audit log not found: {audit_path}")
    out_dir = Path(cfg["out_dir"])
    _snapshot(cfg, "filter-stats", out_dir)

    scores: list[float] = []
    for line in audit_path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        if cfg["source"] == "accepted":
            if obj.get("accepted") and obj["accepted"].get("emscore") is not None:
                scores.append(float(obj["accepted"]["emscore"]))
        else:
            scores.extend(
                float(a["score"]) for a in obj.get("attempts", []) if a.get("score") is not None
            )
    hist = score_histogram(scores, cfg["bin_width"], theta=cfg["theta"])
    write_histogram_csv(hist, out_dir / "histogram.csv")
    stats = {
        "n_scores": len(scores),
        "theta": cfg["theta"],
        "fraction_above": hist.fraction_above,
        "bin_width": cfg["bin_width"],
    }
    (out_dir / "stats.json").write_text(json.dumps(stats, indent=2) + "\n", encoding="utf-8")
    print(
        f"filter-stats: {len(scores)} scores, "
        f"{100.0 * hist.fraction_above:.1f}% at or above theta={cfg['theta']}"
    )
    return EXIT_OK


def _load_training_set(cfg: dict, split: str, image_size: int, vocab=None):
    from .training import build_training_set

    manifest = load_manifest(cfg["manifest"], ctn_path=cfg["ctn"])
    decoder = _build_decoder(cfg["decoder"])
    return build_training_set(manifest, decoder, split=split, resize_to=image_size, vocab=vocab)


def cmd_train_stage1(cfg: dict) -> int:
    from .training import TrainConfig, train_stage1

    _require(cfg, "manifest", "ctn", "out_dir")
    out_dir = Path(cfg["out_dir"])
    _snapshot(cfg, "train-stage1", out_dir)
    image_size = int(cfg["encoder"].get("image_size", 224))
    data = _load_training_set(cfg, cfg["split"], image_size)
    train_cfg = TrainConfig(
        stage="stage1",
        learning_rate=cfg["learning_rate"],
        batch_size=cfg["batch_size"],
        epochs=cfg["epochs"],
        seed=cfg["seed"],
        dataset=str(cfg["manifest"]),
    )
    paths = train_stage1(train_cfg, data, out_dir, cfg["encoder"], roles=tuple(cfg["roles"]))
    for role, path in paths.items():
        print(f"train-stage1: {role} -> {path}")
    return EXIT_OK


def _write_split_predictions(model, cfg: dict, split: str, out_dir: Path, vocab) -> None:
    from .stage2 import PredictionRecord, write_predictions
    from .training import predict_captions

    image_size = model.cause_encoder.cfg.image_size if model.cause_encoder else model.effect_encoder.cfg.image_size
    data = _load_training_set(cfg, split, image_size, vocab=vocab)
    captions = predict_captions(model, data)
    write_predictions(
        [PredictionRecord(vid, text) for vid, text in sorted(captions.items())],
        out_dir / "predictions.jsonl",
    )
    print(f"predictions for split {split!r} -> {out_dir / 'predictions.jsonl'}")


def cmd_train_stage2(cfg: dict) -> int:
    from .stage1 import load_pair
    from .training import TrainConfig, train_stage2

    _require(cfg, "manifest", "ctn", "out_dir", "cause_ckpt", "effect_ckpt")
    out_dir = Path(cfg["out_dir"])
    _snapshot(cfg, "train-stage2", out_dir)
    image_size = load_pair(cfg["cause_ckpt"]).cfg.image_size
    data = _load_training_set(cfg, cfg["split"], image_size)
    val = (
        _load_training_set(cfg, cfg["val_split"], image_size, vocab=data.vocab)
        if cfg["val_split"]
        else None
    )
    train_cfg = TrainConfig(
        stage="stage2",
        learning_rate=cfg["learning_rate"],
        batch_size=cfg["batch_size"],
        epochs=cfg["epochs"],
        seed=cfg["seed"],
        dataset=str(cfg["manifest"]),
    )
    model = train_stage2(
        train_cfg,
        cfg["cause_ckpt"],
        cfg["effect_ckpt"],
        data,
        out_dir,
        stage2_sizes=cfg["stage2"],
        val_data=val,
    )
    if cfg["predict_split"]:
        _write_split_predictions(model, cfg, cfg["predict_split"], out_dir, data.vocab)
    print(f"train-stage2: run dir {out_dir}")
    return EXIT_OK


def cmd_ablate(cfg: dict) -> int:
    from .training import (
        ABLATION_VARIANTS,
        AblationAssets,
        TrainConfig,
        build_ablation,
        train_caption_model,
    )

    _require(cfg, "id", "manifest", "ctn", "out_dir")
    variant = cfg["id"]
    if variant not in ABLATION_VARIANTS:
        raise ConfigError(f"unknown ablation id {variant!r}; choose from {ABLATION_VARIANTS}")
    out_dir = Path(cfg["out_dir"])
    _snapshot(cfg, "ablate", out_dir)

    ckpts = {k: Path(v) for k, v in (cfg["checkpoints"] or {}).items()}
    image_size = int(cfg["encoder"].get("image_size", 224))
    if "cause" in ckpts or "effect" in ckpts or "combined" in ckpts:
        from .stage1 import load_pair

        probe = next(iter(ckpts[k] for k in ("cause", "effect", "combined") if k in ckpts))
        image_size = load_pair(probe).cfg.image_size
    data = _load_training_set(cfg, cfg["split"], image_size)

    assets = AblationAssets(
        vocab=data.vocab,
        cause_ckpt=ckpts.get("cause"),
        effect_ckpt=ckpts.get("effect"),
        combined_ckpt=ckpts.get("combined"),
        caption_ckpt=ckpts.get("caption"),
        encoder_sizes=cfg["encoder"],
        stage2_sizes=cfg["stage2"],
        seed=cfg["seed"],
    )
    model = build_ablation(variant, assets)

    if variant == "zero_shot_x":
        # evaluation-only transfer: any parameter update is a bug
        assert model.update_count == 0
    else:
        stage = "finetune_x" if variant == "finetune_x" else "stage2"
        train_cfg = TrainConfig(
            stage=stage,
            learning_rate=cfg["learning_rate"],
            batch_size=cfg["batch_size"],
            epochs=cfg["epochs"],
            seed=cfg["seed"],
            dataset=str(cfg["manifest"]),
        )
        val = (
            _load_training_set(cfg, cfg["val_split"], image_size, vocab=data.vocab)
            if cfg["val_split"]
            else None
        )
        train_caption_model(train_cfg, model, data, out_dir, val_data=val)

    predict_split = cfg["predict_split"] or cfg["split"]
    _write_split_predictions(model, cfg, predict_split, out_dir, data.vocab)
    print(f"ablate[{variant}]: updates={model.update_count}, run dir {out_dir}")
    return EXIT_OK


def _load_eval_pairs(cfg: dict) -> list[EvalPair]:
    predictions_path = Path(cfg["predictions"])
    if not predictions_path.exists():
        raise ConfigError(f"predictions not found: {predictions_path}")
    references = load_ctn(cfg["references"])
    pairs = []
    for line in predictions_path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        vid = obj["video_id"]
        if vid not in references:
            raise ConfigError(f"{vid}: prediction has no reference CTN caption")
        pairs.append(EvalPair(vid, obj["caption"], [combine_caption(references[vid])]))
    if not pairs:
        raise ConfigError("predictions file is empty")
    return pairs


def cmd_eval(cfg: dict) -> int:
    _require(cfg, "predictions", "references", "out_dir")
    out_dir = Path(cfg["out_dir"])
    _snapshot(cfg, "eval", out_dir)
    pairs = _load_eval_pairs(cfg)

    cider_report = cider(pairs)
    spice = spice_adapter(pairs, cfg["spice_tool"])
    judge_by_vid: dict[str, dict] = {}
    if cfg["judge_results"]:
        judge_by_vid = json.loads(Path(cfg["judge_results"]).read_text(encoding="utf-8")).get(
            "per_video", {}
        )

    rows = []
    for pair in pairs:
        verdict = judge_by_vid.get(pair.video_id, {})
        rows.append(
            ReportRow(
                video_id=pair.video_id,
                rouge_l=rouge_l(pair.candidate, pair.references),
                cider=cider_report.per_pair[pair.video_id],
                spice=None if spice.skipped else spice.scores.get(pair.video_id),
                temporal=verdict.get("temporal_order"),
                causal=verdict.get("causal_chain"),
            )
        )
    write_report_csv(rows, out_dir / "report.csv")
    summary = write_summary_json(rows, cider_report, out_dir / "summary.json")
    print(
        f"eval: {len(rows)} pairs, ROUGE_L {summary['ROUGE_L']:.2f}, CIDEr {summary['CIDEr']:.2f}"
        + (" (SPICE skipped)" if spice.skipped else "")
    )
    return EXIT_OK


def cmd_judge(cfg: dict) -> int:
    _require(cfg, "predictions", "references", "out_dir")
    out_dir = Path(cfg["out_dir"])
    _snapshot(cfg, "judge", out_dir)
    references = load_ctn(cfg["references"])
    client = _build_client(cfg["backend"])

    per_video = {}
    results = []
    for line in Path(cfg["predictions"]).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        vid = obj["video_id"]
        if vid not in references:
            raise ConfigError(f"{vid}: prediction has no reference CTN caption")
        result = judge_pair(references[vid], obj["caption"], client)
        results.append(result)
        per_video[vid] = {
            "temporal_order": result.temporal_order,
            "causal_chain": result.causal_chain,
            "flags": list(result.flags),
        }
    if not results:
        raise ConfigError("predictions file is empty")
    payload = {"aggregate": aggregate_judge(results), "per_video": per_video}
    (out_dir / "judge.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    agg = payload["aggregate"]
    print(
        f"judge: {len(results)} pairs, temporal {agg['temporal_order']:.1f}, "
        f"causal {agg['causal_chain']:.1f}"
    )
    return EXIT_OK


def _caption_frames(cfg: dict, frames: FrameSequence) -> list[str]:
    """Pluggable image-captioner backend: scripted, or an HTTP vision model."""
    kind = cfg.get("kind")
    if kind == "stub":
        script = cfg.get("script") or []
        if not script:
            raise ConfigError("stub captioner needs a non-empty script")
        return [script[min(i, len(script) - 1)] for i in range(len(frames))]
    if kind == "http":
        import base64

        import cv2
        import httpx

        if not cfg.get("url") or not cfg.get("model"):
            raise ConfigError("http captioner needs url and model")
        texts = []
        for frame in frames.frames:
            ok, buf = cv2.imencode(".png", frame[:, :, ::-1])  # RGB -> BGR for the encoder
            if not ok:
                raise RuntimeError("frame PNG encoding failed")
            image_url = "data:image/png;base64," + base64.b64encode(buf.tobytes()).decode()
            resp = httpx.post(
                cfg["url"],
                json={
                    "model": cfg["model"],
                    "messages": [
                        {
                            "role": "user",
                            "content": [
                                {"type": "text", "text": "Describe this frame in one sentence."},
                                {"type": "image_url", "image_url": {"url": image_url}},
                            ],
                        }
                    ],
                },
                timeout=120.0,
            )
            resp.raise_for_status()
            texts.append(resp.json()["choices"][0]["message"]["content"])
        return texts
    raise ConfigError(f"unknown captioner kind {kind!r}")


def _probe_duration(media_path: str) -> float:
    import cv2

    cap = cv2.VideoCapture(media_path)
    try:
        fps = cap.get(cv2.CAP_PROP_FPS)
        n = cap.get(cv2.CAP_PROP_FRAME_COUNT)
    finally:
        cap.release()
    if fps <= 0 or n <= 0:
        raise RuntimeError(f"cannot determine duration of {media_path}")
    return n / fps


def cmd_label(cfg: dict) -> int:
    _require(cfg, "video", "out_dir")
    out_dir = Path(cfg["out_dir"])
    _snapshot(cfg, "label", out_dir)

    duration = cfg["duration_s"] if cfg["duration_s"] is not None else _probe_duration(cfg["video"])
    record = VideoRecord(
        video_id=cfg["video_id"],
        media_path=cfg["video"],
        duration_s=float(duration),
        dataset_tag="custom",
        split="test",
    )
    decoder = _build_decoder(cfg["decoder"])
    frames, flagged = sample_equally_spaced(record, int(cfg["k"]), decoder)
    if flagged:
        print(f"label: media holds fewer than {cfg['k']} distinct frames", file=sys.stderr)

    frame_texts = _caption_frames(cfg["captioner"], frames)
    caps = captions_from_frame_texts(frame_texts, video_id=record.video_id)
    prompt = render(cfg["template_id"], caps)
    (out_dir / "prompt.txt").write_text(prompt, encoding="utf-8")

    deps = FilterDeps(
        client=_build_client(cfg["backend"]),
        score=_build_scorer(cfg["scorer"], decoder),
        template_id=cfg["template_id"],
        max_tokens=cfg["max_tokens"],
        temperature=cfg["temperature"],
        seed=cfg["seed"],
    )
    outcome: FilterOutcome = filter_loop(record, caps, cfg["theta"], cfg["max_attempts"], deps)
    write_audit_log([outcome], out_dir / "audit.jsonl")
    if outcome.accepted is None:
        print(f"label: exhausted after {cfg['max_attempts']} attempts", file=sys.stderr)
        return EXIT_PARTIAL
    save_ctn({record.video_id: outcome.accepted}, out_dir / "ctn.json")
    print(
        f"label: {record.video_id} Cause={outcome.accepted.cause!r} "
        f"Effect={outcome.accepted.effect!r} (emscore {outcome.accepted.emscore:.3f})"
    )
    return EXIT_OK


def _ctn_videos(manifest: DatasetManifest) -> list[tuple[str, str, str]]:
    return [
        (vid, ctn.cause, ctn.effect)
        for vid, ctn in sorted(manifest.ctn_index.items())
        if any(r.video_id == vid for r in manifest.records)
    ]


def cmd_humaneval_serve(cfg: dict) -> int:
    import uvicorn

    from .humaneval import RatingStore, build_eval_batch, stratified_sample
    from .service import create_app

    _require(cfg, "manifest", "ctn", "out_dir", "raters")
    out_dir = Path(cfg["out_dir"])
    _snapshot(cfg, "humaneval-serve", out_dir)
    manifest = load_manifest(cfg["manifest"], ctn_path=cfg["ctn"])

    videos = _ctn_videos(manifest)
    if cfg["n_videos"] is not None and cfg["n_videos"] < len(videos):
        by_tag: dict[str, list[str]] = {}
        for vid, _, _ in videos:
            by_tag.setdefault(manifest.record(vid).dataset_tag, []).append(vid)
        sample = stratified_sample(sorted(by_tag.items()), int(cfg["n_videos"]), seed=cfg["seed"])
        keep = {vid for ids in sample.sampled.values() for vid in ids}
        videos = [v for v in videos if v[0] in keep]

    batch = build_eval_batch(videos, list(cfg["raters"]))
    store = RatingStore(Path(cfg["store"]) if cfg["store"] else out_dir / "ratings.jsonl")
    media_paths = {r.video_id: Path(r.media_path) for r in manifest.records}
    app = create_app(batch, store, media_paths)
    print(
        f"humaneval-serve: {len(videos)} videos x {len(cfg['raters'])} raters "
        f"on {cfg['host']}:{cfg['port']}"
    )
    uvicorn.run(app, host=cfg["host"], port=int(cfg["port"]), log_level="warning")
    return EXIT_OK


def cmd_export_embeddings(cfg: dict) -> int:
    from .stage1 import load_pair, resize_frames
    from .training import export_embeddings

    _require(cfg, "manifest", "out_dir", "checkpoints")
    out_dir = Path(cfg["out_dir"])
    _snapshot(cfg, "export-embeddings", out_dir)
    pairs = {role: load_pair(path) for role, path in cfg["checkpoints"].items()}
    image_size = next(iter(pairs.values())).cfg.image_size

    manifest = load_manifest(cfg["manifest"])
    decoder = _build_decoder(cfg["decoder"])
    items = [
        (r.video_id, resize_frames(sample_frames(r, decoder), image_size))
        for r in manifest.by_split(cfg["split"])
    ]
    count = export_embeddings(pairs, items, out_dir / "embeddings.jsonl")
    print(f"export-embeddings: {count} rows -> {out_dir / 'embeddings.jsonl'}")
    return EXIT_OK


_HANDLERS: dict[str, Callable[[dict], int]] = {
    "gen": cmd_gen,
    "filter-stats": cmd_filter_stats,
    "train-stage1": cmd_train_stage1,
    "train-stage2": cmd_train_stage2,
    "ablate": cmd_ablate,
    "eval": cmd_eval,
    "judge": cmd_judge,
    "label": cmd_label,
    "humaneval-serve": cmd_humaneval_serve,
    "export-embeddings": cmd_export_embeddings,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="causalcap",
        description="caption generation, filtering, training, and evaluation pipeline",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--theta", type=float)
    parser.add_argument("--max-attempts", type=int, dest="max_attempts")
    parser.add_argument("--id", help="ablation variant id")
    parser.add_argument("--out", help="output directory")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args.command, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return _HANDLERS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - boundary: map to contract exit code
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
