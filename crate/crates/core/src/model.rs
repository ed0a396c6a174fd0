//! The TB-HIV/AIDS coinfection dynamics.
//!
//! Eleven mutually exclusive compartments, two forces of infection, and two
//! treatment controls acting on the coinfected class `I_TH`. The total
//! population `N(t)` is always the sum of the compartments; the scaling
//! constant `N0` only enters through [`initial_state`].

use std::fmt;
use std::ops::{Index, IndexMut};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound shared by each control and by their sum.
pub const U_MAX: f64 = 0.95;

/// Model constants. [`Parameters::default`] returns the reference parameter set.
///
/// Serialized names (and the names accepted by [`Parameters::set`]) follow
/// the usual symbols: `beta1`, `etaC`, `dTA`, `T`, `N0`, ...
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Parameters {
    pub beta1: f64,
    pub beta2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    #[serde(rename = "etaC")]
    pub eta_c: f64,
    #[serde(rename = "etaA")]
    pub eta_a: f64,
    pub delta: f64,
    pub psi: f64,
    pub mu: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub phi: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub r: f64,
    #[serde(rename = "dN")]
    pub d_n: f64,
    #[serde(rename = "dT")]
    pub d_t: f64,
    #[serde(rename = "dA")]
    pub d_a: f64,
    #[serde(rename = "dTA")]
    pub d_ta: f64,
    /// Horizon in years.
    #[serde(rename = "T")]
    pub horizon: f64,
    /// Population scaling constant for the initial condition.
    #[serde(rename = "N0")]
    pub n0: f64,
}

impl Default for Parameters {
    fn default() -> Self {
        let k1 = 1.0 / 2.0;
        Parameters {
            beta1: 0.6,
            beta2: 0.1,
            gamma1: 0.9,
            gamma2: 1.1,
            eta_c: 0.9,
            eta_a: 1.05,
            delta: 1.03,
            psi: 1.07,
            mu: 430.0,
            k1,
            k2: 1.3 * k1,
            k3: 2.0,
            rho1: 0.1,
            rho2: 1.0,
            omega1: 0.09,
            omega2: 0.15,
            tau1: 2.0,
            tau2: 1.0,
            phi: 1.0,
            alpha1: 0.33,
            alpha2: 0.33,
            r: 0.3,
            d_n: 1.0 / 70.0,
            d_t: 1.0 / 10.0,
            d_a: 0.3,
            d_ta: 0.33,
            horizon: 10.0,
            n0: 30000.0,
        }
    }
}

macro_rules! parameter_table {
    ($($name:literal => $field:ident),* $(,)?) => {
        /// Every name accepted by [`Parameters::get`] and [`Parameters::set`].
        pub const PARAMETER_NAMES: &[&str] = &[$($name),*];

        impl Parameters {
            /// Looks a parameter up by its symbol.
            pub fn get(&self, name: &str) -> Option<f64> {
                match name {
                    $($name => Some(self.$field),)*
                    _ => None,
                }
            }

            /// Overrides one parameter by its symbol. Derived values (such as
            /// `k2 = 1.3 k1` in the defaults) are not recomputed.
            pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
                match name {
                    $($name => self.$field = value,)*
                    _ => {
                        return Err(Error::invalid(
                            "parameter name",
                            format!("unknown parameter `{name}`"),
                        ))
                    }
                }
                Ok(())
            }
        }
    };
}

parameter_table! {
    "beta1" => beta1, "beta2" => beta2, "gamma1" => gamma1, "gamma2" => gamma2,
    "etaC" => eta_c, "etaA" => eta_a, "delta" => delta, "psi" => psi,
    "mu" => mu, "k1" => k1, "k2" => k2, "k3" => k3,
    "rho1" => rho1, "rho2" => rho2, "omega1" => omega1, "omega2" => omega2,
    "tau1" => tau1, "tau2" => tau2, "phi" => phi, "alpha1" => alpha1,
    "alpha2" => alpha2, "r" => r, "dN" => d_n, "dT" => d_t,
    "dA" => d_a, "dTA" => d_ta, "T" => horizon, "N0" => n0,
}

impl Parameters {
    /// Checks nonnegativity of all rates, `r` in `[0, 1]`, and positive `T`, `N0`.
    pub fn validate(&self) -> Result<()> {
        for &name in PARAMETER_NAMES {
            let v = self.get(name).expect("name comes from the table");
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(
                    format!("parameter `{name}`"),
                    format!("must be finite and nonnegative, got {v}"),
                ));
            }
        }
        if self.r > 1.0 {
            return Err(Error::invalid("parameter `r`", format!("must lie in [0, 1], got {}", self.r)));
        }
        if self.horizon <= 0.0 {
            return Err(Error::invalid("parameter `T`", "must be positive"));
        }
        if self.n0 <= 0.0 {
            return Err(Error::invalid("parameter `N0`", "must be positive"));
        }
        Ok(())
    }
}

/// Compartment labels, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Compartment {
    S,
    LT,
    IT,
    R,
    IH,
    A,
    CH,
    LTH,
    ITH,
    RH,
    AT,
}

impl Compartment {
    pub const ALL: [Compartment; 11] = [
        Compartment::S,
        Compartment::LT,
        Compartment::IT,
        Compartment::R,
        Compartment::IH,
        Compartment::A,
        Compartment::CH,
        Compartment::LTH,
        Compartment::ITH,
        Compartment::RH,
        Compartment::AT,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Compartment::S => "S",
            Compartment::LT => "L_T",
            Compartment::IT => "I_T",
            Compartment::R => "R",
            Compartment::IH => "I_H",
            Compartment::A => "A",
            Compartment::CH => "C_H",
            Compartment::LTH => "L_TH",
            Compartment::ITH => "I_TH",
            Compartment::RH => "R_H",
            Compartment::AT => "A_T",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Compartment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Compartment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Compartment::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid("compartment name", format!("unknown compartment `{s}`")))
    }
}

/// Population counts of the eleven compartments. Also used for derivatives.
///
/// Serializes as a map keyed by compartment name, in compartment order.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateVector(pub [f64; 11]);

impl Serialize for StateVector {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(Some(11))?;
        for c in Compartment::ALL {
            map.serialize_entry(c.name(), &self[c])?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for StateVector {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = std::collections::BTreeMap::<String, f64>::deserialize(deserializer)?;
        let mut out = StateVector::zeros();
        for (name, value) in &raw {
            let c: Compartment = name.parse().map_err(D::Error::custom)?;
            out[c] = *value;
        }
        if let Some(missing) = Compartment::ALL.into_iter().find(|c| !raw.contains_key(c.name())) {
            return Err(D::Error::custom(format!("missing compartment `{missing}`")));
        }
        Ok(out)
    }
}

impl StateVector {
    pub fn zeros() -> Self {
        StateVector([0.0; 11])
    }

    /// `N(t)`.
    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn as_array(&self) -> &[f64; 11] {
        &self.0
    }

    /// Smallest component; used by the post-hoc nonnegativity checks.
    pub fn min_component(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        StateVector(self.0.map(|v| v * factor))
    }

    pub fn iter(&self) -> impl Iterator<Item = (Compartment, f64)> + '_ {
        Compartment::ALL.into_iter().zip(self.0.iter().copied())
    }
}

impl Index<Compartment> for StateVector {
    type Output = f64;
    fn index(&self, c: Compartment) -> &f64 {
        &self.0[c.index()]
    }
}

impl IndexMut<Compartment> for StateVector {
    fn index_mut(&mut self, c: Compartment) -> &mut f64 {
        &mut self.0[c.index()]
    }
}

/// Pointwise control pair: `u1` is combined HIV+TB treatment of `I_TH`,
/// `u2` is TB-only treatment of `I_TH`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlValue {
    pub u1: f64,
    pub u2: f64,
}

impl ControlValue {
    pub const ZERO: ControlValue = ControlValue { u1: 0.0, u2: 0.0 };

    /// Checked constructor: both components in `[0, 0.95]` and `u1 + u2 <= 0.95`.
    pub fn new(u1: f64, u2: f64) -> Result<Self> {
        let c = ControlValue { u1, u2 };
        if c.is_admissible(0.0) {
            Ok(c)
        } else {
            Err(Error::InadmissibleControl { u1, u2 })
        }
    }

    pub fn is_admissible(&self, tol: f64) -> bool {
        self.u1.is_finite()
            && self.u2.is_finite()
            && self.u1 >= -tol
            && self.u2 >= -tol
            && self.u1 <= U_MAX + tol
            && self.u2 <= U_MAX + tol
            && self.u1 + self.u2 <= U_MAX + tol
    }
}

/// TB force of infection `lambda_T = beta1 (I_T + I_TH + A_T) / N`.
pub fn force_of_infection_tb(state: &StateVector, params: &Parameters) -> Result<f64> {
    use Compartment::*;
    let n = population(state)?;
    Ok(params.beta1 * (state[IT] + state[ITH] + state[AT]) / n)
}

/// HIV force of infection
/// `lambda_H = beta2 [I_H + I_TH + L_TH + R_H + etaC C_H + etaA (A + A_T)] / N`.
pub fn force_of_infection_hiv(state: &StateVector, params: &Parameters) -> Result<f64> {
    use Compartment::*;
    let n = population(state)?;
    let infectious = state[IH]
        + state[ITH]
        + state[LTH]
        + state[RH]
        + params.eta_c * state[CH]
        + params.eta_a * (state[A] + state[AT]);
    Ok(params.beta2 * infectious / n)
}

fn population(state: &StateVector) -> Result<f64> {
    let n = state.total();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroPopulation);
    }
    Ok(n)
}

/// Right-hand side of the coinfection system.
///
/// Negative components are not clamped.
pub fn rhs(state: &StateVector, control: ControlValue, p: &Parameters) -> Result<StateVector> {
    use Compartment::*;
    let lt = force_of_infection_tb(state, p)?;
    let lh = force_of_infection_hiv(state, p)?;
    let x = state;
    let ControlValue { u1, u2 } = control;

    let mut d = StateVector::zeros();
    d[S] = p.mu - lt * x[S] - lh * x[S] - p.d_n * x[S];
    d[LT] = lt * x[S] + p.gamma1 * lt * x[R] - (p.k1 + p.tau1 + p.d_n) * x[LT];
    d[IT] = p.k1 * x[LT] - (p.tau2 + p.d_t + p.d_n + p.delta * lh) * x[IT];
    d[R] = p.tau1 * x[LT] + p.tau2 * x[IT] - (p.gamma1 * lt + lh + p.d_n) * x[R];
    d[IH] = lh * x[S] - (p.rho1 + p.phi + p.psi * lt + p.d_n) * x[IH]
        + p.alpha1 * x[A]
        + lh * x[R]
        + p.omega1 * x[CH];
    d[A] = p.rho1 * x[IH] + p.omega2 * x[RH] - p.alpha1 * x[A] - (p.d_n + p.d_a) * x[A];
    d[CH] = p.phi * x[IH] + u1 * p.rho2 * x[ITH] + p.r * p.k3 * x[LTH] - (p.omega1 + p.d_n) * x[CH];
    d[LTH] = p.gamma2 * lt * x[RH] - (p.k2 + p.k3 + p.d_n) * x[LTH];
    d[ITH] = p.delta * lh * x[IT] + p.psi * lt * x[IH] + p.alpha2 * x[AT] + p.k2 * x[LTH]
        - (p.rho2 + p.d_n + p.d_t) * x[ITH];
    d[RH] = u2 * p.rho2 * x[ITH] + (1.0 - p.r) * p.k3 * x[LTH]
        - (p.gamma2 * lt + p.omega2 + p.d_n) * x[RH];
    d[AT] = (1.0 - (u1 + u2)) * p.rho2 * x[ITH] - (p.alpha2 + p.d_n + p.d_ta) * x[AT];
    Ok(d)
}

/// Initial condition as fractions of `N0`.
///
/// The fractions sum to `191/120`, so `total(initial_state) != N0`.
pub fn initial_state(params: &Parameters) -> StateVector {
    const NUMERATORS: [f64; 11] = [66.0, 37.0, 5.0, 37.0, 2.0, 37.0, 1.0, 2.0, 2.0, 1.0, 1.0];
    StateVector(NUMERATORS.map(|k| k * params.n0 / 120.0))
}

/// Net population balance implied by the system: recruitment minus all deaths.
pub fn net_population_change(state: &StateVector, p: &Parameters) -> f64 {
    use Compartment::*;
    p.mu - p.d_n * state.total()
        - p.d_t * (state[IT] + state[ITH])
        - p.d_a * state[A]
        - p.d_ta * state[AT]
}
