"""Desk-scale map-augmented driving pipeline on synthetic worlds.

Subsystems: road graphs and routes (road_graph), HMM map matching
(path_matcher), semantic map features (semantic_features), heading-up map
rasters (map_render), synthetic worlds and logs (sim_world), a minimal
reverse-mode autodiff stack (learncore), driving policies (driving_models),
adversarial human-like training (human_like), scenario-filtered evaluation
(evaluation), and the batch CLI (cli).
"""

__version__ = "0.1.0"
