# Computational services: geometry, warping, masks, losses, synthesis, refinement, metrics.
