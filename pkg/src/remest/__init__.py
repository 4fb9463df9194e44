"""Decentralized sampling and remote estimation over multi-hop collision networks.

Library layout:
    topology    -- communication graphs and per-agent local views
    envsim      -- the synchronous collision-channel simulator (sources, AoI, rewards)
    baselines   -- closed-form transmission policies (uniform, adaptive age-based)
    autodiff    -- reverse-mode gradient tape on numpy arrays
    neuralcore  -- graph filters, GRNN forward pass, checkpoints, optimizers
    policy      -- graph-RNN actor, bilinear action head, IPPO/MAPPO critics
    training    -- rollout collection, GAE, clipped-surrogate updates
    graphon     -- graphon sampling, filters, WNN/WRNN limits, transfer bounds
    cli         -- command-line entry points and experiment orchestration
"""

__version__ = "0.1.0"
