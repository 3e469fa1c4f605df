"""Tiny suite configurations shared by the suite, CLI and plot-data tests."""

TINY = {
    "seed": 7,
    "seeds": 2,
    "problem": {"num_train": 30, "num_test": 60, "hidden": 8},
    "active": {"candidate_batch": 30, "steps": 30, "eval_every": 5, "eval_index_samples": 10},
    "baseline": {"fractions": [0.5, 1.0], "batch_sizes": [8], "learning_rates": [1e-3],
                 "l2_weights": [0.0], "epochs": 3, "seeds": 2, "hidden": [8]},
    "agents": {
        "mlp": {"arch": "mlp", "priorities": ["uniform", "entropy"], "hidden": [8]},
        "epinet": {"arch": "epinet", "priorities": ["variance"], "hidden": [8],
                   "epinet_hidden": [6], "index_dim": 3},
    },
}
