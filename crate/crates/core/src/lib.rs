//! Classical post-processing for Gaussian-modulated coherent-state
//! continuous-variable QKD with reverse reconciliation.
//!
//! The pipeline runs rates → simulation → estimation → reconciliation →
//! privacy amplification, with [`session`] tying them together over an
//! authenticated byte stream. The guide in `book/` walks through each stage.

#[cfg(test)]
macro_rules! assert_close {
    ($a:expr, $b:expr, $tol:expr) => {{
        let (a, b, tol) = ($a as f64, $b as f64, $tol as f64);
        assert!((a - b).abs() <= tol, "{} != {} (tol {})", a, b, tol);
    }};
}

pub mod rates;
pub mod simkit;
pub mod estimator;
pub mod privamp;
pub mod recon;
pub mod session;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/rates.md")]
    mod rates {}
    #[doc = include_str!("../../../book/src/estimation.md")]
    mod estimation {}
    #[doc = include_str!("../../../book/src/reconciliation.md")]
    mod reconciliation {}
    #[doc = include_str!("../../../book/src/privacy-amplification.md")]
    mod privacy_amplification {}
    #[doc = include_str!("../../../book/src/sessions.md")]
    mod sessions {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
