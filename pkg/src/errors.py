"""
Semantic Inpainting Lab - Errors
例外の階層。メッセージは `CODE: 詳細` 形式で先頭にコードを置く
"""


class InpaintLabError(Exception):
    """本パッケージが送出する例外の基底クラス（CLIはこれを捕捉して終了コード1）"""


class RejectedInputError(InpaintLabError, ValueError):
    """前提条件を満たさない入力（形状不一致・範囲外ラベル等）"""


class ConfigurationError(InpaintLabError):
    """設定・前提ファイルの不備（計算開始前に検出する）"""


class NumericalError(InpaintLabError, ArithmeticError):
    """損失やスコアが非有限になった

    Attributes:
        batch_index: 最初に非有限値が見つかったバッチ内の位置（不明ならNone）
        losses: その時点の損失成分（train_stepから送出された場合）
    """

    def __init__(self, message: str, batch_index=None, losses=None):
        super().__init__(message)
        self.batch_index = batch_index
        self.losses = dict(losses or {})


class CheckpointError(InpaintLabError):
    """チェックポイントの破損・読み込み失敗"""


class IncompatibleCheckpointError(CheckpointError):
    """設定の指紋・フォーマット版数・種別が一致しない"""
