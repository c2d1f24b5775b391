//! Physical device parameters and the scalar fidelity algebra used everywhere else.
//!
//! The canonical internal quantity is fidelity; a reported "error probability"
//! is `2 * (1 - f)`, inverting the first-order gate-fidelity convention
//! `f = 1 - p/2`. All closed forms downstream use the linearized form.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::circuit::GateKind;

/// Scalar fidelity in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Fidelity(f64);

impl Fidelity {
    pub const ONE: Fidelity = Fidelity(1.0);

    /// Clamps into `[0, 1]`.
    pub fn new(value: f64) -> Fidelity {
        Fidelity(value.clamp(0.0, 1.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Error probability `2(1 - f)` clamped to `[0, 1]`.
    pub fn error_probability(self) -> f64 {
        (2.0 * (1.0 - self.0)).clamp(0.0, 1.0)
    }
}

impl fmt::Display for Fidelity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// First-order gate fidelity `1 - p/2` for a gate with error probability `p`.
///
/// The exact bit-flip-channel value is `sqrt(1-p)`; the linearized form
/// upper-bounds it and is the convention every closed form here uses.
pub fn gate_fidelity(p: f64) -> Result<Fidelity, ParamError> {
    if !(0.0..1.0).contains(&p) {
        return Err(ParamError::ProbabilityRange(p));
    }
    Ok(Fidelity(1.0 - p / 2.0))
}

/// Worst-case combination of two fidelities: the plain product.
pub fn combine(f1: Fidelity, f2: Fidelity) -> Fidelity {
    Fidelity(f1.0 * f2.0)
}

/// Memory decay over an idle window: `f * exp(-lambda * dt)`.
pub fn apply_decoherence(f: Fidelity, dt: f64, lambda: f64) -> Fidelity {
    debug_assert!(dt >= 0.0 && lambda >= 0.0);
    Fidelity(f.0 * (-lambda * dt).exp())
}

#[derive(Debug, thiserror::Error)]
pub enum ParamError {
    #[error("probability {0} outside [0, 1)")]
    ProbabilityRange(f64),
    #[error("duration {0} must be non-negative")]
    NegativeDuration(f64),
    #[error("{path}:{line}: unknown key `{key}`")]
    UnknownKey {
        path: String,
        line: usize,
        key: String,
    },
    #[error("{path}:{line}: {msg}")]
    Malformed {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("cannot read parameter file: {0}")]
    Io(#[from] std::io::Error),
}

/// Per-gate-kind durations and error probabilities plus measurement,
/// preparation and decoherence parameters.
///
/// Defaults reproduce the evaluation normalization: every physical gate takes
/// 1 time unit, measurement takes 200, all error probabilities equal a single
/// `p`, and the decoherence rate is 0. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalParams {
    gate_duration: BTreeMap<GateKind, f64>,
    gate_error: BTreeMap<GateKind, f64>,
    pub measurement_duration: f64,
    pub measurement_error: f64,
    pub prep_error: f64,
    pub decoherence_rate: f64,
}

/// Gate kinds that carry their own duration/error entry.
const GATE_KINDS: [GateKind; 7] = [
    GateKind::PrepZero,
    GateKind::X,
    GateKind::Y,
    GateKind::Z,
    GateKind::H,
    GateKind::Cnot,
    GateKind::Toffoli,
];

impl PhysicalParams {
    /// Uniform parameter set: every gate error equals `p`, measurement and
    /// preparation errors equal `p`, unit gate times, 200-unit measurement,
    /// zero decoherence.
    pub fn uniform(p: f64) -> Result<PhysicalParams, ParamError> {
        if !(0.0..1.0).contains(&p) {
            return Err(ParamError::ProbabilityRange(p));
        }
        let mut gate_duration = BTreeMap::new();
        let mut gate_error = BTreeMap::new();
        for kind in GATE_KINDS {
            gate_duration.insert(kind, 1.0);
            gate_error.insert(kind, p);
        }
        Ok(PhysicalParams {
            gate_duration,
            gate_error,
            measurement_duration: 200.0,
            measurement_error: p,
            prep_error: p,
            decoherence_rate: 0.0,
        })
    }

    pub fn with_decoherence(mut self, lambda: f64) -> PhysicalParams {
        self.decoherence_rate = lambda;
        self
    }

    pub fn set_gate_error(&mut self, kind: GateKind, p: f64) -> Result<(), ParamError> {
        if !(0.0..1.0).contains(&p) {
            return Err(ParamError::ProbabilityRange(p));
        }
        self.gate_error.insert(kind, p);
        Ok(())
    }

    pub fn set_gate_duration(&mut self, kind: GateKind, t: f64) -> Result<(), ParamError> {
        if t < 0.0 {
            return Err(ParamError::NegativeDuration(t));
        }
        self.gate_duration.insert(kind, t);
        Ok(())
    }

    /// Duration of one physical instruction of the given kind.
    pub fn duration(&self, kind: GateKind) -> f64 {
        match kind {
            GateKind::MeasureZ => self.measurement_duration,
            GateKind::ErrorCorrect => 0.0,
            k => *self.gate_duration.get(&k).unwrap_or(&1.0),
        }
    }

    /// Error probability of one physical instruction of the given kind.
    pub fn error(&self, kind: GateKind) -> f64 {
        match kind {
            GateKind::MeasureZ => self.measurement_error,
            GateKind::PrepZero => self.prep_error,
            GateKind::ErrorCorrect => 0.0,
            k => *self.gate_error.get(&k).unwrap_or(&0.0),
        }
    }

    /// First-order fidelity of one physical instruction.
    pub fn fidelity(&self, kind: GateKind) -> Fidelity {
        Fidelity(1.0 - self.error(kind) / 2.0)
    }

    /// Loads parameters from a flat `key=value` text file.
    ///
    /// Keys: `gate_time.<kind>`, `gate_error.<kind>`, `meas_time`,
    /// `meas_error`, `prep_error`, `lambda`, with `<kind>` one of
    /// `prep,x,y,z,h,cnot,toffoli`. Unknown keys are an error. Values not
    /// present keep the uniform defaults built from `base_p`.
    pub fn load(path: &Path, base_p: f64) -> Result<PhysicalParams, ParamError> {
        let text = std::fs::read_to_string(path)?;
        let mut params = PhysicalParams::uniform(base_p)?;
        let path_str = path.display().to_string();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let stripped = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if stripped.is_empty() {
                continue;
            }
            let (key, value) = stripped.split_once('=').ok_or_else(|| ParamError::Malformed {
                path: path_str.clone(),
                line,
                msg: format!("expected key=value, got `{stripped}`"),
            })?;
            let key = key.trim();
            let value: f64 = value.trim().parse().map_err(|e| ParamError::Malformed {
                path: path_str.clone(),
                line,
                msg: format!("bad numeric value: {e}"),
            })?;
            let unknown = || ParamError::UnknownKey {
                path: path_str.clone(),
                line,
                key: key.to_string(),
            };
            if let Some(kind_name) = key.strip_prefix("gate_time.") {
                let kind = gate_kind_key(kind_name).ok_or_else(unknown)?;
                params.set_gate_duration(kind, value)?;
            } else if let Some(kind_name) = key.strip_prefix("gate_error.") {
                let kind = gate_kind_key(kind_name).ok_or_else(unknown)?;
                params.set_gate_error(kind, value)?;
            } else {
                match key {
                    "meas_time" => {
                        if value < 0.0 {
                            return Err(ParamError::NegativeDuration(value));
                        }
                        params.measurement_duration = value;
                    }
                    "meas_error" => {
                        if !(0.0..1.0).contains(&value) {
                            return Err(ParamError::ProbabilityRange(value));
                        }
                        params.measurement_error = value;
                    }
                    "prep_error" => {
                        if !(0.0..1.0).contains(&value) {
                            return Err(ParamError::ProbabilityRange(value));
                        }
                        params.prep_error = value;
                    }
                    "lambda" => {
                        if value < 0.0 {
                            return Err(ParamError::NegativeDuration(value));
                        }
                        params.decoherence_rate = value;
                    }
                    _ => return Err(unknown()),
                }
            }
        }
        Ok(params)
    }
}

fn gate_kind_key(name: &str) -> Option<GateKind> {
    Some(match name {
        "prep" => GateKind::PrepZero,
        "x" => GateKind::X,
        "y" => GateKind::Y,
        "z" => GateKind::Z,
        "h" => GateKind::H,
        "cnot" => GateKind::Cnot,
        "toffoli" => GateKind::Toffoli,
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gate_fidelity_linearized() {
        assert_eq!(gate_fidelity(0.0).unwrap().value(), 1.0);
        assert_relative_eq!(gate_fidelity(1e-3).unwrap().value(), 0.9995);
        assert_relative_eq!(gate_fidelity(2e-5).unwrap().value(), 0.99999);
        assert!(gate_fidelity(1.0).is_err());
        assert!(gate_fidelity(-0.1).is_err());
    }

    #[test]
    fn gate_fidelity_bounds_exact_form() {
        for &p in &[0.0, 1e-6, 1e-3, 0.1, 0.5, 0.99] {
            assert!(gate_fidelity(p).unwrap().value() >= (1.0 - p).sqrt());
        }
    }

    #[test]
    fn combine_is_product() {
        let f = |v| Fidelity::new(v);
        assert_eq!(combine(f(1.0), f(1.0)).value(), 1.0);
        assert_relative_eq!(combine(f(0.9995), f(0.9995)).value(), 0.99900025);
        assert_eq!(combine(f(0.7), f(1.0)).value(), 0.7);
        // commutative
        assert_eq!(combine(f(0.3), f(0.8)).value(), combine(f(0.8), f(0.3)).value());
    }

    #[test]
    fn decoherence_factor() {
        let f = Fidelity::new(1.0);
        assert_eq!(apply_decoherence(f, 200.0, 0.0).value(), 1.0);
        assert_relative_eq!(
            apply_decoherence(f, 200.0, 1e-6).value(),
            (-2e-4f64).exp(),
            epsilon = 1e-15
        );
        assert_eq!(apply_decoherence(Fidelity::new(0.5), 0.0, 1.0).value(), 0.5);
    }

    #[test]
    fn decoherence_composes_over_windows() {
        let f = Fidelity::new(0.9);
        let lambda = 3e-4;
        let once = apply_decoherence(f, 70.0, lambda);
        let twice = apply_decoherence(apply_decoherence(f, 30.0, lambda), 40.0, lambda);
        assert_relative_eq!(once.value(), twice.value(), epsilon = 1e-14);
    }

    #[test]
    fn error_probability_conversion() {
        assert_eq!(Fidelity::new(1.0).error_probability(), 0.0);
        assert_relative_eq!(Fidelity::new(0.9995).error_probability(), 1e-3);
        assert_eq!(Fidelity::new(0.2).error_probability(), 1.0);
    }

    #[test]
    fn uniform_defaults() {
        let p = PhysicalParams::uniform(1e-3).unwrap();
        assert_eq!(p.duration(GateKind::H), 1.0);
        assert_eq!(p.duration(GateKind::MeasureZ), 200.0);
        assert_eq!(p.error(GateKind::Cnot), 1e-3);
        assert_eq!(p.error(GateKind::PrepZero), 1e-3);
        assert_eq!(p.measurement_error, 1e-3);
        assert_eq!(p.decoherence_rate, 0.0);
    }

    #[test]
    fn param_file_roundtrip_and_unknown_key() {
        let dir = std::env::temp_dir();
        let path = dir.join("qperf_params_test.txt");
        std::fs::write(
            &path,
            "# comment\ngate_error.cnot = 2e-3\nmeas_time = 150\nlambda = 1e-6\n",
        )
        .unwrap();
        let p = PhysicalParams::load(&path, 1e-3).unwrap();
        assert_eq!(p.error(GateKind::Cnot), 2e-3);
        assert_eq!(p.error(GateKind::H), 1e-3);
        assert_eq!(p.measurement_duration, 150.0);
        assert_eq!(p.decoherence_rate, 1e-6);

        std::fs::write(&path, "gate_error.swap = 1e-3\n").unwrap();
        assert!(matches!(
            PhysicalParams::load(&path, 1e-3),
            Err(ParamError::UnknownKey { .. })
        ));
        std::fs::remove_file(&path).ok();
    }
}
