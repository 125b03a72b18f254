"""Edit-distance reinforcement learning for RNN-T transducers at desk scale."""
