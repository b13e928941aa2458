//! Precision bounds for squeezed, non-Hermitian bosonic sensors.
//!
//! A chain of coupled modes with loss, gain and two-photon drive is probed by
//! a coherent tone; a small detuning `θ` is to be estimated from the output
//! light. The crate computes the output Gaussian state in a four-quadrature
//! sideband basis, the quantum and classical Fisher information about `θ`,
//! and tools to find and certify exceptional points where the bound scales
//! anomalously fast.
//!
//! ```
//! use epsqueeze::{qfi, Scenario, ScenarioName};
//!
//! let s = Scenario::preset(ScenarioName::Fig2Po);
//! let near = qfi(&s.config.clone().with_theta(0.02)).unwrap();
//! let far = qfi(&s.config.clone().with_theta(0.04)).unwrap();
//! // the bound grows like θ² at a parametric-oscillation threshold
//! let slope = (far.crb / near.crb).ln() / 2f64.ln();
//! assert!((slope - 2.0).abs() < 0.1);
//! ```

pub mod config;
pub mod ep;
pub mod error;
pub mod fisher;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod scenarios;

pub use config::{emit_config, parse_config, ConfigError};
pub use ep::{
    classify_degeneracy, degeneracy_diagnostic, ep_po_conditions, lasing_ep_reference, solve_ep, EpReport, FreeParam,
    Verdict,
};
pub use error::{Error, Result};
pub use fisher::{cfi, dmu_dtheta, dv_dtheta, qfi, DetectionSpec, FisherOptions, FisherReport, Flag, PhiChoice};
pub use linalg::{Ext, Mat, Real};
pub use model::{
    build_green_set, build_m, eigvals_annihilation, po_threshold_detuning, propagate, GaussianState, GreenSet,
    ModeParams, SensorConfig,
};
pub use num_complex::Complex64;
pub use scenarios::{fit_slope, run_sweep, Field, Scenario, ScenarioName, SweepRecord, ThetaGrid};

/// Guide chapters, compiled as doc-tests so their snippets stay current.
#[cfg(doctest)]
pub mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    pub mod model {}
    #[doc = include_str!("../../../book/src/fisher.md")]
    pub mod fisher {}
    #[doc = include_str!("../../../book/src/exceptional-points.md")]
    pub mod exceptional_points {}
    #[doc = include_str!("../../../book/src/sweeps.md")]
    pub mod sweeps {}
    #[doc = include_str!("../../../book/src/oracles.md")]
    pub mod oracles {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    pub mod configuration {}
}
