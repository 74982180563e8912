"""
Semantic Inpainting Lab - Command Line
属性・セグメンテーションで正則化した GAN インペインティングの実験用 CLI

サブコマンド: gen-data / pretrain-attr / pretrain-seg / train / inpaint /
eval-pixel / eval-retrieval / ablate

バージョンは src/config.py の APP_VERSION を正とする
"""
import argparse
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from src.config import APP_NAME, APP_VERSION, ExperimentConfig, parse_config, parse_set_flags
from src.core import Mask, apply_mask, stack_masks, validate_image
from src.data_loader import load_dataset, load_image_png
from src.errors import InpaintLabError, RejectedInputError
from src.experiments import (
    evaluate_pixel,
    load_inpainter,
    run_ablation,
    save_grid,
    write_report,
)
from src.logging_utils import configure_logging, get_logger
from src.metrics import build_corpus, semantic_map_protocol
from src.nets import AttributeNet
from src.synth import build_dataset
from src.training import (
    load_checkpoint,
    pretrain_attribute,
    pretrain_segmentation,
    restore_modules,
    save_checkpoint,
    train,
)

logger = get_logger("app")


# =============================================
# 設定の組み立て
# =============================================
def load_config(args, **flags) -> ExperimentConfig:
    """--config・--set・専用フラグの順に上書きした設定（専用フラグが最優先）"""
    overrides = parse_set_flags(args.set)
    overrides.update({key: value for key, value in flags.items() if value is not None})
    return parse_config(args.config, overrides)


def emit(summary: dict) -> None:
    """結果の要約を標準出力に JSON で出す"""
    print(json.dumps(summary, indent=2, sort_keys=True, ensure_ascii=False, default=str))


# =============================================
# サブコマンド
# =============================================
def cmd_gen_data(args) -> dict:
    config = load_config(args, canvas=args.size, seed=args.seed)
    result = build_dataset(
        n=args.n,
        seed=config.seed,
        canvas=(config.canvas, config.canvas),
        out_dir=args.out,
        purpose=args.purpose,
        workers=args.workers,
        progress=not args.quiet,
    )
    return {"out": args.out, "n": result["n"], "splits": result["splits"], "purpose": args.purpose}


def _pretrain(args, kind: str) -> dict:
    data_key = "attr_data_dir" if kind == "attribute" else "seg_data_dir"
    ckpt_key = "attr_ckpt" if kind == "attribute" else "seg_ckpt"
    config = load_config(args, **{data_key: args.data, ckpt_key: args.out, "seed": args.seed,
                                  "pretrain_epochs": args.epochs})
    dataset = load_dataset(getattr(config, data_key))
    # チェックポイントの指紋はデータの大きさに合わせる
    config = config.replace(canvas=int(dataset.images.shape[-1]))
    if kind == "attribute":
        net, metrics = pretrain_attribute(dataset, config, progress=not args.quiet)
        modules = {"attr_net": net}
    else:
        net, metrics = pretrain_segmentation(dataset, config, progress=not args.quiet)
        modules = {"seg_net": net}
    path = save_checkpoint(getattr(config, ckpt_key), modules, config, kind=kind, seed=config.seed,
                           trained=net.trained, extra={"metrics": metrics})
    summary = {key: value for key, value in metrics.items() if key != "loss_history"}
    return {"checkpoint": str(path), "fingerprint": config.fingerprint(), **summary}


def cmd_pretrain_attr(args) -> dict:
    return _pretrain(args, "attribute")


def cmd_pretrain_seg(args) -> dict:
    return _pretrain(args, "segmentation")


def cmd_train(args) -> dict:
    config = load_config(args, data_dir=args.data, attr_ckpt=args.attr_ckpt, seg_ckpt=args.seg_ckpt,
                         steps=args.steps, seed=args.seed, out_dir=args.out)
    return train(config, resume=args.resume, progress=not args.quiet)


def parse_mask(text: str, canvas: tuple) -> Mask:
    """`top,left,height,width` またはマスク画像（非ゼロ画素の外接矩形）から Mask を作る"""
    parts = text.split(",")
    if len(parts) == 4:
        try:
            top, left, height, width = (int(p) for p in parts)
        except ValueError:
            raise RejectedInputError(f"INVALID_MASK: {text!r}（top,left,height,width）")
        return Mask(top, left, height, width, canvas)
    with Image.open(text) as image:
        bits = np.asarray(image.convert("L")) > 0
    if bits.shape != canvas:
        raise RejectedInputError(f"DIMENSION_MISMATCH: マスク {bits.shape} と画像 {canvas}")
    if not bits.any():
        return Mask.empty(canvas)
    rows, cols = np.nonzero(bits)
    return Mask(int(rows.min()), int(cols.min()), int(rows.max() - rows.min() + 1),
                int(cols.max() - cols.min() + 1), canvas)


def cmd_inpaint(args) -> dict:
    inpainter = load_inpainter(args.ckpt)
    y = load_image_png(args.image)
    validate_image(y)
    canvas = tuple(y.shape[-2:])
    if canvas != (inpainter.config.canvas, inpainter.config.canvas):
        raise RejectedInputError(
            f"DIMENSION_MISMATCH: 画像 {canvas[0]}x{canvas[1]} ≠ モデルの canvas {inpainter.config.canvas}"
        )
    mask = parse_mask(args.mask, canvas)
    masks = stack_masks([mask])
    x = apply_mask(y.unsqueeze(0), masks)
    z, composited = inpainter.restore(x, masks)
    out_dir = Path(args.out)
    columns = [x, z, composited]
    if args.truth:
        columns.append(load_image_png(args.truth).unsqueeze(0))
    paths = {
        "raw": save_grid(out_dir / "raw.png", [z]),
        "composite": save_grid(out_dir / "composite.png", [composited]),
        "grid": save_grid(out_dir / "grid.png", columns),
    }
    return {key: str(path) for key, path in paths.items()} | {"mask": list(mask.bbox)}


def cmd_eval_pixel(args) -> dict:
    inpainter = load_inpainter(args.ckpt)
    dataset = load_dataset(args.data, split=args.split)
    evaluation = evaluate_pixel(inpainter, dataset, seed=args.seed)
    payload = {
        "fingerprint": inpainter.config.fingerprint(),
        "checkpoint": args.ckpt,
        "split": args.split,
        "n": len(dataset),
        "summary": evaluation["summary"],
        "attribute_consistency": evaluation["attribute_consistency"],
        "rows": evaluation["rows"].to_dict(orient="records"),
    }
    write_report(args.out, payload)
    return {"out": args.out, "summary": evaluation["summary"],
            "attribute_consistency": evaluation["attribute_consistency"]}


def cmd_eval_retrieval(args) -> dict:
    k = load_config(args, retrieval_k=args.k).retrieval_k
    inpainter = load_inpainter(args.ckpt, composite_output=False)
    attr_net = inpainter.attr_net
    if args.attr_ckpt:
        data = load_checkpoint(args.attr_ckpt, kind="attribute")
        config = data.config()
        attr_net = AttributeNet(config.n_attributes, channels=config.embed_channels)
        restore_modules(data, {"attr_net": attr_net})
        attr_net.eval()
    corpus_set = load_dataset(args.corpus)
    query_set = load_dataset(args.queries, split=args.query_split)
    if args.max_queries:
        query_set = query_set.take(range(min(args.max_queries, len(query_set))))
    corpus = build_corpus(corpus_set.ids, corpus_set.images, attr_net, progress=not args.quiet)
    # 主結果は生の出力 z。欠損内だけ z を使った合成画像の mAP も並べる
    result = semantic_map_protocol(query_set.ids, query_set.images, corpus, inpainter, attr_net,
                                   k=k, progress=not args.quiet)
    inpainter.composite_output = True
    composited = semantic_map_protocol(query_set.ids, query_set.images, corpus, inpainter, attr_net,
                                       k=k, progress=False)
    payload = {
        "fingerprint": inpainter.config.fingerprint(),
        "checkpoint": args.ckpt,
        **result.to_dict(),
        "composited": {"map": composited.map, "per_query_ap": composited.per_query_ap,
                       "variant": composited.variant},
    }
    write_report(args.out, payload)
    return {"out": args.out, "map": result.map, "composited_map": composited.map,
            "masked_map": result.masked_map, "k": result.k}


def cmd_ablate(args) -> dict:
    config = load_config(args, seed=args.seed)
    seeds = [config.seed + i for i in range(args.seeds)] if args.seeds else None
    result = run_ablation(config, args.out, seeds=seeds)
    failed = int((result.long["status"] != "ok").sum())
    return {**result.paths, "runs": len(result.long), "failed": failed}


# =============================================
# 引数
# =============================================
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="app.py", description=f"{APP_NAME} v{APP_VERSION}")
    parser.add_argument("--version", action="version", version=f"{APP_NAME} {APP_VERSION}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI形式の設定ファイル")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="設定の上書き（複数可）")
    common.add_argument("--verbose", action="store_true", help="DEBUGログを出す")
    common.add_argument("--quiet", action="store_true", help="進捗バーを出さない")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="合成データセットを生成する")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--size", type=int, help="キャンバスの一辺（16の倍数）")
    p.add_argument("--out", required=True)
    p.add_argument("--purpose", choices=["inpaint", "attribute", "segmentation"], default="inpaint")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(handler=cmd_gen_data)

    for name, handler, help_text in (
        ("pretrain-attr", cmd_pretrain_attr, "属性ネットを事前学習する"),
        ("pretrain-seg", cmd_pretrain_seg, "セグメンテーションネットを事前学習する"),
    ):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--data")
        p.add_argument("--epochs", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="チェックポイントの出力パス")
        p.set_defaults(handler=handler)

    p = sub.add_parser("train", parents=[common], help="インペインティングを学習する")
    p.add_argument("--data")
    p.add_argument("--attr-ckpt")
    p.add_argument("--seg-ckpt")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="出力ディレクトリ")
    p.add_argument("--resume", help="再開する inpaint チェックポイント")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("inpaint", parents=[common], help="1枚の画像を復元する")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True, help="top,left,height,width またはマスク画像")
    p.add_argument("--truth", help="比較用の正解画像")
    p.add_argument("--out", required=True, help="出力ディレクトリ")
    p.set_defaults(handler=cmd_inpaint)

    p = sub.add_parser("eval-pixel", parents=[common], help="画素指標を計算する")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="report.json")
    p.set_defaults(handler=cmd_eval_pixel)

    p = sub.add_parser("eval-retrieval", parents=[common], help="検索ベースの mAP を計算する")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--attr-ckpt", help="特徴抽出に使う属性ネット（省略時は inpaint チェックポイント内のもの）")
    p.add_argument("--corpus", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--query-split", default="test")
    p.add_argument("--max-queries", type=int)
    p.add_argument("--k", type=int, help="正解集合の大きさ（既定は retrieval_k）")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_eval_retrieval)

    p = sub.add_parser("ablate", parents=[common], help="λa・λs の比較実験")
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", type=int, help="シード数（既定は ablation_seeds）")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        summary = args.handler(args)
    except (InpaintLabError, OSError) as e:
        print(f"[{args.command}] エラー: {e}", file=sys.stderr)
        return 1
    emit(summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
