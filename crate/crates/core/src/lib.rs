//! Two-stage quasi-likelihood estimation for mixed-effects stochastic
//! differential equations with individual time scales.
//!
//! ```text
//! dYᵢ(t) = τᵢ (a_f(Yᵢ)·φ_f + a_r(Yᵢ)·φ_{r,i}) dt + √τᵢ c(t, Yᵢ; η) dWᵢ(t)
//! ```
//!
//! Stage one profiles the time scales τᵢ out of a Gaussian quasi-likelihood
//! to estimate η, then fits the τ distribution to the profiled τ̂ᵢ. Stage two
//! fits the mean μ and covariance Σ_r of the drift effects through a
//! marginal Gaussian quasi-likelihood built from per-individual sufficient
//! statistics.

pub mod cholesky;
pub mod error;
pub mod io;
pub mod mc;
pub mod model;
pub mod optim;
pub mod presets;
pub mod reduce;
pub mod rng;
pub mod serde_matrix;
pub mod sim;
pub mod stage1;
pub mod stage2;
pub mod tau;

pub use error::{Error, Result};
pub use mc::{run_mc, Cell, McDesign, McSummary};
pub use model::{BoxBounds, ModelBounds, ModelSpec, PanelData, ParamSet};
pub use optim::{maximize, OptimOptions, OptimResult};
pub use presets::Preset;
pub use sim::{simulate_panel, SimConfig};
pub use stage1::{fit_stage1, Stage1Estimate, Stage1Options};
pub use stage2::{fit_stage2, Stage2Estimate, Stage2Method, Stage2Options};
pub use tau::TauFamily;
