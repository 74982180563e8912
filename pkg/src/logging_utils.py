"""
Semantic Inpainting Lab - Logging
`[関数名] メッセージ` 形式のサーバーログを出すロガー
"""
import logging
import sys

_FORMAT = "%(asctime)s %(levelname)s [%(name)s] %(message)s"
_configured = False


def configure_logging(verbose: bool = False) -> None:
    """ルートロガーを一度だけ設定する（CLI起動時に呼ぶ）"""
    global _configured
    level = logging.DEBUG if verbose else logging.INFO
    root = logging.getLogger("inpaint_lab")
    if not _configured:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(_FORMAT, datefmt="%H:%M:%S"))
        root.addHandler(handler)
        root.propagate = False
        _configured = True
    root.setLevel(level)


def get_logger(name: str) -> logging.Logger:
    """`inpaint_lab.<name>` ロガーを返す。表示名は関数名・モジュール名そのもの"""
    logger = logging.getLogger(f"inpaint_lab.{name}")
    return logger
