from pmb_nll.data.coco import Dataset, ImageInfo, read_ground_truth
from pmb_nll.data.filtering import inference_filter, nms_keep
from pmb_nll.data.predictions import read_predictions, write_predictions

__all__ = [
    "Dataset",
    "ImageInfo",
    "inference_filter",
    "nms_keep",
    "read_ground_truth",
    "read_predictions",
    "write_predictions",
]
