"""Neural co-state regulator: unsupervised co-state network training,
box-constrained Hamiltonian input extraction, and an MPC baseline."""

__version__ = "0.1.0"
