import typing as tp

import numpy as np

ArrayDict = tp.Dict[str, np.ndarray]
ConfusionTyping = tp.List[tp.List[int]]
HistoryRecord = tp.Dict[str, tp.Union[int, str, float]]
ReportRow = tp.Dict[str, tp.Union[int, str, float]]
FlowPair = tp.Tuple[np.ndarray, np.ndarray]
ScaleDict = tp.Dict[str, float]
