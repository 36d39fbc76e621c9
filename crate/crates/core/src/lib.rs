//! Generative-modeling toolkit for continuous and mixed tabular data.
//!
//! Three decoder families built from scratch on a small dense-math core:
//! the diagonal-covariance Gaussian VAE, the rank-one-covariance VAE
//! (`vae-roc`) whose local covariance is `omega*I + a*a^T`, and the Gaussian
//! copula VAE (`gcvae`) that couples Gaussian and categorical marginals
//! through a rank-one Gaussian copula. Training uses manually derived
//! gradients of the regularized variational lower bound and ADAM updates;
//! evaluation is sample-based (Parzen windows and a mixed
//! continuous/categorical product kernel).

pub mod copula;
pub mod data;
pub mod dist;
pub mod evalkit;
pub mod models;
pub mod ndcore;
pub mod nn;
pub mod optim;
