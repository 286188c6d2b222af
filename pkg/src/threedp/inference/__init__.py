"""MCMC kernels, pose initialisation and the end-to-end inference loop."""
