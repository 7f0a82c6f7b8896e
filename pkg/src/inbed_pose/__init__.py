"""Cross-domain in-bed pose estimation toolkit."""
