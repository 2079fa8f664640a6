"""SegImgNet: segmentation-guided dual-branch retinal image classifier."""
