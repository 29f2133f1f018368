"""scikit-learn transformer for the label-merging preprocessing step."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .coverage import EdgeBitmap, bitmap_matrix, build_reduction, reduce_matrix


def _as_bool_matrix(bitmaps):
    if isinstance(bitmaps, np.ndarray):
        return np.asarray(bitmaps, dtype=bool)
    bitmaps = list(bitmaps)
    if bitmaps and isinstance(bitmaps[0], EdgeBitmap):
        return bitmap_matrix(bitmaps)
    return np.asarray(bitmaps, dtype=bool)


class EdgeMerger(TransformerMixin, BaseEstimator):
    """Drop never-covered edges and merge edges that always co-occur.

    ``fit`` takes EdgeBitmaps or an ``(n_samples, edge_count)`` 0/1 matrix;
    ``transform`` returns the ``(n_samples, label_count)`` label matrix.
    """

    def fit(self, bitmaps, y=None):
        mat = _as_bool_matrix(bitmaps)
        self.reduction_ = build_reduction(mat)
        self.n_features_in_ = mat.shape[1]
        return self

    def transform(self, bitmaps):
        check_is_fitted(self, "reduction_")
        return reduce_matrix(_as_bool_matrix(bitmaps), self.reduction_)

    @property
    def label_count_(self):
        check_is_fitted(self, "reduction_")
        return self.reduction_.label_count
