from typing import Optional

from Util import setup_logger
from metrics.abc_distance import AbstractDistanceSvc, DistanceError
from metrics.feature import FeatureDistanceSvc, FeatureExtractor
from metrics.mse import MseDistanceSvc
from metrics.roc import roc_auc
from metrics.ssim import SsimDistanceSvc

logger = setup_logger('Metrics')
support_metric_kind = ['mse', 'ssim_distance', 'feature_distance']


class DistanceFactory:
    @staticmethod
    def create_distance(kind: str, params: Optional[dict] = None, channels: int = 1) -> AbstractDistanceSvc:
        params = params or {}
        if kind == 'mse':
            return MseDistanceSvc()
        elif kind == 'ssim_distance':
            return SsimDistanceSvc(window=params.get('ssim_window', 7))
        elif kind == 'feature_distance':
            extractor = FeatureExtractor(channels=channels,
                                         widths=params.get('feature_widths', (8, 16, 32)),
                                         seed=params.get('feature_seed', 0))
            return FeatureDistanceSvc(extractor)
        else:
            logger.error(f'Distance for {kind} is not yet implemented.')
            raise NotImplementedError(f'Distance - {kind} - is not supported. Valid metrics: {support_metric_kind}')
