//! Scalar functions fed to the functional calculus.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// Decay envelope `|F(z)| <= C z^tau / (1 + z^{tau + delta})`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayClass {
    pub tau: f64,
    pub delta: f64,
    pub cbound: f64,
}

impl DecayClass {
    pub fn envelope(&self, z: f64) -> f64 {
        self.cbound * z.powf(self.tau) / (1.0 + z.powf(self.tau + self.delta))
    }

    /// Samples `z` in `[1e-6, 1e6]` and checks the envelope.
    pub fn admits(&self, f: &dyn Fn(f64) -> f64) -> bool {
        if !(self.tau > 0.0 && self.delta > 0.0 && self.cbound > 0.0) {
            return false;
        }
        (0..=1200).all(|i| {
            let z = 10f64.powf(-6.0 + 12.0 * i as f64 / 1200.0);
            let v = f(z);
            v.is_finite() && v.abs() <= self.envelope(z) * (1.0 + 1e-12)
        })
    }
}

/// A real function of the spectral variable, optionally with known structure.
#[derive(Clone)]
pub struct SpectralFn {
    name: String,
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    decay: Option<DecayClass>,
    /// `F(z) = z^a e^{-b z}` when known; unlocks the exact engine.
    monomial_exp: Option<(f64, f64)>,
}

impl fmt::Debug for SpectralFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralFn")
            .field("name", &self.name)
            .field("decay", &self.decay)
            .field("monomial_exp", &self.monomial_exp)
            .finish()
    }
}

impl SpectralFn {
    pub fn new(name: &str, f: impl Fn(f64) -> f64 + Send + Sync + 'static, decay: Option<DecayClass>) -> Self {
        SpectralFn { name: name.to_string(), f: Arc::new(f), decay, monomial_exp: None }
    }

    /// `z^a e^{-b z}`.
    pub fn monomial_exp(a: f64, b: f64) -> Self {
        let name = format!("z^{a} exp(-{b} z)");
        let f = move |z: f64| if a == 0.0 { (-b * z).exp() } else { z.powf(a) * (-b * z).exp() };
        let decay = if a > 0.0 && b > 0.0 {
            // sup over z of z^a e^{-bz} (1 + z^{a+1}) / z^a bounds the constant
            let c = envelope_constant(&f, a, 1.0);
            Some(DecayClass { tau: a, delta: 1.0, cbound: c })
        } else {
            None
        };
        SpectralFn { name, f: Arc::new(f), decay, monomial_exp: Some((a, b)) }
    }

    /// `e^{-z}`: recovers the conical heat functional.
    pub fn heat() -> Self {
        let mut s = Self::monomial_exp(0.0, 1.0);
        s.name = "exp(-z)".into();
        s
    }

    /// `sqrt(z) e^{-z}`.
    pub fn phi0() -> Self {
        let mut s = Self::monomial_exp(0.5, 1.0);
        s.name = "sqrt(z) exp(-z)".into();
        s
    }

    /// `z e^{-z}`: recovers the horizontal heat functional.
    pub fn z_exp() -> Self {
        let mut s = Self::monomial_exp(1.0, 1.0);
        s.name = "z exp(-z)".into();
        s
    }

    /// `z / (1 + z^2)`, decay class `tau = delta = 1`, `C = 1`.
    pub fn rational() -> Self {
        Self::new("z/(1+z^2)", |z| z / (1.0 + z * z), Some(DecayClass { tau: 1.0, delta: 1.0, cbound: 1.0 }))
    }

    /// `e^{-sqrt z} - e^{-z}`.
    pub fn poisson_heat_difference() -> Self {
        Self::new("exp(-sqrt z) - exp(-z)", |z: f64| (-z.max(0.0).sqrt()).exp() - (-z).exp(), None)
    }

    pub fn zero() -> Self {
        let mut s = Self::new("0", |_| 0.0, None);
        s.monomial_exp = None;
        s
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, z: f64) -> f64 {
        (self.f)(z)
    }

    pub fn decay(&self) -> Option<DecayClass> {
        self.decay
    }

    pub fn structure(&self) -> Option<(f64, f64)> {
        self.monomial_exp
    }

    /// Shared handle to the underlying closure.
    pub fn closure(&self) -> Arc<dyn Fn(f64) -> f64 + Send + Sync> {
        Arc::clone(&self.f)
    }

    /// True when no decay class is declared or the declared one holds on samples.
    pub fn is_admissible(&self) -> bool {
        match &self.decay {
            Some(d) => d.admits(&|z| self.eval(z)),
            None => true,
        }
    }
}

fn envelope_constant(f: &dyn Fn(f64) -> f64, tau: f64, delta: f64) -> f64 {
    let mut c: f64 = 0.0;
    for i in 0..=2400 {
        let z = 10f64.powf(-6.0 + 12.0 * i as f64 / 2400.0);
        c = c.max(f(z).abs() * (1.0 + z.powf(tau + delta)) / z.powf(tau));
    }
    // the sampled supremum of a smooth ratio, padded for points between samples
    c * 1.01
}
