//! Declarative experiment scenarios.
//!
//! A scenario is one TOML document. Every physical quantity carries its unit
//! and the file states how MHz map to rad/ns, so a record can always be
//! traced back to the convention that produced it.

mod run;
pub mod units;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::baseline::StepRule;
use crate::derivative::DerivativeScheme;
use crate::error::Error;
use crate::forward::IntegratorConfig;
use crate::inversion::{HoldPolicy, InversionConfig, WINDOW_DILATION};
use crate::model::{build_two_qubit_model, equator_state, reference_two_qubit_state, Coefficient, ProbeModel};
use crate::noise::{NoiseBand, NoiseTarget};
use crate::operator::{pauli_string, product_state, DensityState, GeneratorTerm, HERMITIAN_TOL};
use crate::signal::SignalSpec;

pub use run::{
    execute, run_scenario, write_artifacts, InversionOutcome, LsqOutcome, Manifest, ManifestEntry,
    RamseyOutcome, ReplicateRun, ScenarioRun, VariantRun,
};
use units::{Dimension, FrequencyConvention, Quantity};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "QINVERT_OUT";

#[derive(Debug)]
pub enum ScenarioError {
    /// The file does not parse or fails a static check.
    Validation(String),
    /// A pipeline stage failed while running.
    Runtime { stage: &'static str, variant: String, source: Error },
    Io(std::io::Error),
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioError::Validation(msg) => write!(f, "invalid scenario: {msg}"),
            ScenarioError::Runtime { stage, variant, source } => {
                write!(f, "stage `{stage}` failed (variant `{variant}`): {source}")
            }
            ScenarioError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for ScenarioError {}

impl From<std::io::Error> for ScenarioError {
    fn from(e: std::io::Error) -> Self {
        ScenarioError::Io(e)
    }
}

fn invalid(field: &str, msg: impl fmt::Display) -> ScenarioError {
    ScenarioError::Validation(format!("{field}: {msg}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    Verdict,
    ForwardRecord,
    InversionReport,
    RamseyBranches,
    LsqResult,
}

// ---- file schema -------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: String,
    #[serde(default)]
    description: String,
    frequency_convention: FrequencyConvention,
    #[serde(default)]
    seed: u64,
    #[serde(default = "one")]
    replicates: usize,
    horizon: Quantity,
    model: RawModel,
    observables: Vec<String>,
    #[serde(default)]
    signals: BTreeMap<String, RawSignal>,
    #[serde(default)]
    integrator: RawIntegrator,
    #[serde(default)]
    inversion: RawInversion,
    #[serde(default)]
    noise: Vec<RawNoise>,
    lsq: Option<RawLsq>,
    #[serde(default)]
    variants: Vec<RawVariant>,
    outputs: Vec<OutputKind>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum RawModel {
    /// `H = ω1/2 σ1z + ω2/2 σ2z + g (σ1+σ2− + σ1−σ2+)`; each coefficient is a
    /// frequency or `"unknown"`.
    TwoQubit {
        w1: Quantity,
        w2: Quantity,
        g: Quantity,
        initial_state: RawState,
        #[serde(default)]
        dissipators: Vec<RawDissipator>,
    },
    /// Generators given as Pauli strings.
    Pauli {
        qubits: usize,
        #[serde(default)]
        drift: Vec<RawTerm>,
        controls: Vec<RawControl>,
        #[serde(default)]
        dissipators: Vec<RawDissipator>,
        initial_state: RawState,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTerm {
    op: String,
    coefficient: Quantity,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawControl {
    name: String,
    op: String,
}

/// Lindblad term with `L = √rate · op`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDissipator {
    op: String,
    rate: Quantity,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum RawState {
    /// The two-transmon starting state used throughout the examples.
    Reference,
    /// `(|0⟩ + e^{iφ}|1⟩)/√2` on one qubit.
    Equator { phase: Quantity },
    /// One `[re0, im0, re1, im1]` amplitude list per qubit, normalised.
    Product { amplitudes: Vec<[f64; 4]> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
enum RawSignal {
    Constant {
        value: Quantity,
    },
    Sinusoid {
        amplitude: Quantity,
        frequency: Quantity,
        phase: Option<Quantity>,
    },
    DistortedStep {
        amplitude: Quantity,
        step_time: Option<Quantity>,
        time_constant: Option<Quantity>,
    },
    PiecewiseConstant {
        width: Quantity,
        values: Vec<f64>,
        unit: String,
        t0: Option<Quantity>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIntegrator {
    dt: Quantity,
    #[serde(default = "one")]
    sample_every: usize,
}

impl Default for RawIntegrator {
    fn default() -> Self {
        RawIntegrator { dt: Quantity::Text("0.1 ns".into()), sample_every: 5 }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInversion {
    singular_threshold: Option<f64>,
    hold_policy: Option<HoldPolicyName>,
    derivative: Option<RawDerivative>,
    output_gain: Option<Quantity>,
    dilation: Option<usize>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum HoldPolicyName {
    HoldLast,
    Zero,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
enum RawDerivative {
    ThreePoint,
    SavitzkyGolay { window: usize, degree: usize },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNoise {
    target: TargetName,
    band: BandName,
    variance: Quantity,
    /// Control receiving evolution noise; defaults to the first.
    channel: Option<String>,
    fundamental: Option<Quantity>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TargetName {
    Evolution,
    Measurement,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum BandName {
    Low,
    High,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLsq {
    #[serde(default = "default_bins")]
    n_bins: usize,
    #[serde(default = "default_iters")]
    max_iters: usize,
    fixed_step: Option<f64>,
    #[serde(default = "default_tol")]
    tol: f64,
    /// Replace every true signal by its bin-centre samples, so the truth is
    /// exactly representable by the fit.
    #[serde(default)]
    bin_truth: bool,
    guesses: Vec<RawGuess>,
}

fn default_bins() -> usize {
    50
}
fn default_iters() -> usize {
    200
}
fn default_tol() -> f64 {
    1e-12
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGuess {
    label: String,
    values: BTreeMap<String, Quantity>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVariant {
    name: String,
    observables: Option<Vec<String>>,
    initial_state: Option<RawState>,
    inversion: Option<RawInversion>,
    noise: Option<Vec<RawNoise>>,
    outputs: Option<Vec<OutputKind>>,
}

// ---- validated scenario -------------------------------------------------

#[derive(Debug, Clone)]
pub struct NoisePlan {
    pub target: NoiseTarget,
    pub band: NoiseBand,
    pub variance: f64,
    pub fundamental: f64,
    pub channel: usize,
}

#[derive(Debug, Clone)]
pub struct LsqPlan {
    pub n_bins: usize,
    pub max_iters: usize,
    pub step_rule: StepRule,
    pub tol: f64,
    pub guesses: Vec<(String, Vec<SignalSpec>)>,
}

#[derive(Debug, Clone)]
pub struct Variant {
    pub name: String,
    pub model: ProbeModel,
    pub observable_names: Vec<String>,
    pub inversion: InversionConfig,
    pub dilation: usize,
    pub noise: Vec<NoisePlan>,
    pub outputs: BTreeSet<OutputKind>,
}

/// A parsed and statically checked scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub convention: FrequencyConvention,
    pub seed: u64,
    pub replicates: usize,
    pub horizon: f64,
    pub integrator: IntegratorConfig,
    pub control_names: Vec<String>,
    /// True inputs in control order, rad/ns.
    pub truth: Vec<SignalSpec>,
    pub variants: Vec<Variant>,
    pub lsq: Option<LsqPlan>,
    /// SHA-256 of the scenario text.
    pub config_hash: String,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| ScenarioError::Validation(e.to_string()))?;
        resolve(raw, text)
    }

    /// Reads a scenario file, or a bundled scenario when `path` is one of
    /// the bundled names.
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        if !path.exists() {
            if let Some(text) = path.to_str().and_then(bundled) {
                return Scenario::from_toml(text);
            }
        }
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::Validation(format!("cannot read {}: {e}", path.display())))?;
        Scenario::from_toml(&text)
    }

    /// Human-readable summary of what a run would do.
    pub fn describe(&self) -> String {
        let mut s = format!(
            "scenario `{}`: {} control(s) [{}], horizon {} ns, dt {} ns, {} variant(s), {} replicate(s)\n",
            self.name,
            self.control_names.len(),
            self.control_names.join(", "),
            self.horizon,
            self.integrator.dt,
            self.variants.len(),
            self.replicates
        );
        for v in &self.variants {
            let outs: Vec<String> = v.outputs.iter().map(|o| format!("{o:?}")).collect();
            s += &format!(
                "  variant `{}`: observables [{}], outputs [{}]\n",
                v.name,
                v.observable_names.join(", "),
                outs.join(", ")
            );
        }
        s
    }
}

/// Bundled scenario sources, by name.
pub const BUNDLED: &[(&str, &str)] = &[
    ("ramsey_ambiguity", include_str!("../../scenarios/ramsey_ambiguity.toml")),
    ("biased_qubit", include_str!("../../scenarios/biased_qubit.toml")),
    ("open_system_dephasing", include_str!("../../scenarios/open_system_dephasing.toml")),
    ("two_qubit_single_g", include_str!("../../scenarios/two_qubit_single_g.toml")),
    ("two_qubit_redundant", include_str!("../../scenarios/two_qubit_redundant.toml")),
    ("mimo_three_signals", include_str!("../../scenarios/mimo_three_signals.toml")),
    ("noise_study", include_str!("../../scenarios/noise_study.toml")),
    ("lsq_baseline", include_str!("../../scenarios/lsq_baseline.toml")),
];

pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

/// One line per bundled scenario: name and description.
pub fn list_scenarios() -> Vec<(String, String)> {
    BUNDLED
        .iter()
        .map(|(name, text)| {
            let desc = Scenario::from_toml(text).map(|s| s.description).unwrap_or_else(|e| e.to_string());
            (name.to_string(), desc)
        })
        .collect()
}

/// Full static check without running anything.
pub fn validate(path: &Path) -> Result<String, ScenarioError> {
    Scenario::load(path).map(|s| s.describe())
}

// ---- resolution --------------------------------------------------------

struct Ctx {
    conv: FrequencyConvention,
}

impl Ctx {
    fn q(&self, field: &str, q: &Quantity, dim: Dimension) -> Result<f64, ScenarioError> {
        q.resolve(dim, self.conv).map_err(|e| invalid(field, e))
    }

    fn positive(&self, field: &str, q: &Quantity, dim: Dimension) -> Result<f64, ScenarioError> {
        let v = self.q(field, q, dim)?;
        if v > 0.0 {
            Ok(v)
        } else {
            Err(invalid(field, format!("{q} must be positive")))
        }
    }
}

fn is_unknown(q: &Quantity) -> bool {
    matches!(q, Quantity::Text(s) if s.trim() == "unknown")
}

fn resolve(raw: RawScenario, text: &str) -> Result<Scenario, ScenarioError> {
    use sha2::{Digest, Sha256};

    let ctx = Ctx { conv: raw.frequency_convention };
    if raw.name.is_empty() || !raw.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        return Err(invalid("name", "must be non-empty and use only letters, digits, `_` or `-`"));
    }
    if raw.replicates == 0 {
        return Err(invalid("replicates", "must be at least 1"));
    }
    let horizon = ctx.positive("horizon", &raw.horizon, Dimension::Time)?;
    let integrator = IntegratorConfig::new(
        ctx.positive("integrator.dt", &raw.integrator.dt, Dimension::Time)?,
        raw.integrator.sample_every,
    )
    .map_err(|e| invalid("integrator", e))?;
    let steps = integrator.steps(horizon).map_err(|e| invalid("horizon", e))?;
    if steps % integrator.sample_every != 0 {
        return Err(invalid(
            "integrator.sample_every",
            format!("{steps} steps are not a multiple of sample_every = {}", integrator.sample_every),
        ));
    }

    let control_names = control_names(&raw.model)?;
    for name in raw.signals.keys() {
        if !control_names.contains(name) {
            return Err(invalid(
                &format!("signals.{name}"),
                format!("no unknown control of that name (controls: {})", control_names.join(", ")),
            ));
        }
    }
    let mut truth = Vec::new();
    for name in &control_names {
        let sig = raw
            .signals
            .get(name)
            .ok_or_else(|| invalid("signals", format!("missing true signal for control `{name}`")))?;
        truth.push(resolve_signal(&ctx, &format!("signals.{name}"), sig)?);
    }

    let lsq = match &raw.lsq {
        None => None,
        Some(l) => Some(resolve_lsq(&ctx, l, &control_names, steps)?),
    };
    if let (Some(l), Some(raw_lsq)) = (&lsq, &raw.lsq) {
        if raw_lsq.bin_truth {
            let width = horizon / l.n_bins as f64;
            truth = truth
                .iter()
                .map(|s| SignalSpec::PiecewiseConstant {
                    t0: 0.0,
                    width,
                    values: (0..l.n_bins).map(|k| s.eval((k as f64 + 0.5) * width)).collect(),
                })
                .collect();
        }
    }

    let base = RawVariant {
        name: "base".into(),
        observables: None,
        initial_state: None,
        inversion: None,
        noise: None,
        outputs: None,
    };
    let raw_variants: Vec<&RawVariant> =
        if raw.variants.is_empty() { vec![&base] } else { raw.variants.iter().collect() };
    let mut seen = BTreeSet::new();
    let mut variants = Vec::new();
    for rv in raw_variants {
        if !seen.insert(rv.name.clone()) {
            return Err(invalid("variants", format!("duplicate variant name `{}`", rv.name)));
        }
        if rv.name.is_empty() || !rv.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(invalid("variants.name", format!("`{}` is not a valid directory name", rv.name)));
        }
        variants.push(resolve_variant(&ctx, &raw, rv, &control_names, &truth, lsq.is_some())?);
    }

    Ok(Scenario {
        name: raw.name,
        description: raw.description,
        convention: raw.frequency_convention,
        seed: raw.seed,
        replicates: raw.replicates,
        horizon,
        integrator,
        control_names,
        truth,
        variants,
        lsq,
        config_hash: hex::encode(Sha256::digest(text.as_bytes())),
    })
}

fn control_names(model: &RawModel) -> Result<Vec<String>, ScenarioError> {
    let names: Vec<String> = match model {
        RawModel::TwoQubit { w1, w2, g, .. } => [("w1", w1), ("w2", w2), ("g", g)]
            .iter()
            .filter(|(_, q)| is_unknown(q))
            .map(|(n, _)| n.to_string())
            .collect(),
        RawModel::Pauli { controls, .. } => controls.iter().map(|c| c.name.clone()).collect(),
    };
    if names.is_empty() {
        return Err(invalid("model", "no unknown signals to identify"));
    }
    let unique: BTreeSet<&String> = names.iter().collect();
    if unique.len() != names.len() {
        return Err(invalid("model.controls", "control names must be unique"));
    }
    Ok(names)
}

fn resolve_signal(ctx: &Ctx, field: &str, sig: &RawSignal) -> Result<SignalSpec, ScenarioError> {
    let f = |k: &str| format!("{field}.{k}");
    Ok(match sig {
        RawSignal::Constant { value } => SignalSpec::Constant(ctx.q(&f("value"), value, Dimension::Frequency)?),
        RawSignal::Sinusoid { amplitude, frequency, phase } => SignalSpec::Sinusoid {
            amplitude: ctx.q(&f("amplitude"), amplitude, Dimension::Frequency)?,
            frequency: ctx.q(&f("frequency"), frequency, Dimension::Frequency)?,
            phase: match phase {
                Some(p) => ctx.q(&f("phase"), p, Dimension::Angle)?,
                None => 0.0,
            },
        },
        RawSignal::DistortedStep { amplitude, step_time, time_constant } => SignalSpec::DistortedStep {
            amplitude: ctx.q(&f("amplitude"), amplitude, Dimension::Frequency)?,
            step_time: match step_time {
                Some(t) => ctx.q(&f("step_time"), t, Dimension::Time)?,
                None => 0.0,
            },
            time_constant: match time_constant {
                Some(t) => {
                    let v = ctx.q(&f("time_constant"), t, Dimension::Time)?;
                    if v < 0.0 {
                        return Err(invalid(&f("time_constant"), "must not be negative"));
                    }
                    v
                }
                None => crate::signal::DEFAULT_RISE_TIME,
            },
        },
        RawSignal::PiecewiseConstant { width, values, unit, t0 } => {
            if values.is_empty() {
                return Err(invalid(&f("values"), "needs at least one bin"));
            }
            let scale = Quantity::Text(format!("1 {unit}"))
                .resolve(Dimension::Frequency, ctx.conv)
                .map_err(|e| invalid(&f("unit"), e))?;
            SignalSpec::PiecewiseConstant {
                t0: match t0 {
                    Some(t) => ctx.q(&f("t0"), t, Dimension::Time)?,
                    None => 0.0,
                },
                width: ctx.positive(&f("width"), width, Dimension::Time)?,
                values: values.iter().map(|v| v * scale).collect(),
            }
        }
    })
}

fn resolve_lsq(ctx: &Ctx, l: &RawLsq, controls: &[String], steps: usize) -> Result<LsqPlan, ScenarioError> {
    if l.n_bins == 0 || steps % l.n_bins != 0 {
        return Err(invalid("lsq.n_bins", format!("{steps} integration steps do not split into {} equal bins", l.n_bins)));
    }
    if l.max_iters == 0 {
        return Err(invalid("lsq.max_iters", "must be at least 1"));
    }
    if !(l.tol >= 0.0) {
        return Err(invalid("lsq.tol", "must not be negative"));
    }
    let step_rule = match l.fixed_step {
        None => StepRule::Backtracking,
        Some(eta) if eta > 0.0 && eta.is_finite() => StepRule::FixedStep(eta),
        Some(eta) => return Err(invalid("lsq.fixed_step", format!("{eta} must be positive"))),
    };
    if l.guesses.is_empty() {
        return Err(invalid("lsq.guesses", "needs at least one initial guess"));
    }
    let mut guesses = Vec::new();
    for (i, g) in l.guesses.iter().enumerate() {
        if g.label.is_empty() || !g.label.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(invalid(&format!("lsq.guesses[{i}].label"), "must be a plain identifier"));
        }
        for k in g.values.keys() {
            if !controls.contains(k) {
                return Err(invalid(&format!("lsq.guesses[{i}].values.{k}"), "not an unknown control"));
            }
        }
        let mut sig = Vec::new();
        for c in controls {
            let q = g
                .values
                .get(c)
                .ok_or_else(|| invalid(&format!("lsq.guesses[{i}].values"), format!("missing value for `{c}`")))?;
            sig.push(SignalSpec::Constant(ctx.q(&format!("lsq.guesses[{i}].values.{c}"), q, Dimension::Frequency)?));
        }
        guesses.push((g.label.clone(), sig));
    }
    Ok(LsqPlan { n_bins: l.n_bins, max_iters: l.max_iters, step_rule, tol: l.tol, guesses })
}

fn resolve_state(ctx: &Ctx, field: &str, s: &RawState, qubits: usize) -> Result<DensityState, ScenarioError> {
    match s {
        RawState::Reference => {
            if qubits != 2 {
                return Err(invalid(field, "the reference state is a two-qubit state"));
            }
            Ok(reference_two_qubit_state())
        }
        RawState::Equator { phase } => {
            if qubits != 1 {
                return Err(invalid(field, "equator states are single-qubit states"));
            }
            Ok(equator_state(ctx.q(&format!("{field}.phase"), phase, Dimension::Angle)?))
        }
        RawState::Product { amplitudes } => {
            if amplitudes.len() != qubits {
                return Err(invalid(
                    &format!("{field}.amplitudes"),
                    format!("{} amplitude pairs for {qubits} qubit(s)", amplitudes.len()),
                ));
            }
            let pairs: Vec<[Complex64; 2]> = amplitudes
                .iter()
                .map(|a| [Complex64::new(a[0], a[1]), Complex64::new(a[2], a[3])])
                .collect();
            let psi = product_state(&pairs).map_err(|e| invalid(field, e))?;
            DensityState::pure(&psi).map_err(|e| invalid(field, e))
        }
    }
}

fn pauli_op(field: &str, s: &str, qubits: usize) -> Result<crate::operator::Operator, ScenarioError> {
    if s.chars().count() != qubits {
        return Err(invalid(field, format!("Pauli string {s:?} must have one letter per qubit ({qubits})")));
    }
    pauli_string(s).map_err(|e| invalid(field, e))
}

fn build_model(
    ctx: &Ctx,
    model: &RawModel,
    observables: &[String],
    state_override: Option<&RawState>,
    field: &str,
) -> Result<ProbeModel, ScenarioError> {
    let qubits = match model {
        RawModel::TwoQubit { .. } => 2,
        RawModel::Pauli { qubits, .. } => *qubits,
    };
    if !(1..=4).contains(&qubits) {
        return Err(invalid("model.qubits", "supported range is 1 to 4 qubits"));
    }
    if observables.is_empty() {
        return Err(invalid(&format!("{field}observables"), "needs at least one observable"));
    }
    let obs = observables
        .iter()
        .enumerate()
        .map(|(i, o)| pauli_op(&format!("{field}observables[{i}]"), o, qubits))
        .collect::<Result<Vec<_>, _>>()?;

    let (state_raw, dissipators) = match model {
        RawModel::TwoQubit { initial_state, dissipators, .. } => (initial_state, dissipators),
        RawModel::Pauli { initial_state, dissipators, .. } => (initial_state, dissipators),
    };
    let state_field = if state_override.is_some() { format!("{field}initial_state") } else { "model.initial_state".into() };
    let state = resolve_state(ctx, &state_field, state_override.unwrap_or(state_raw), qubits)?;

    let mut built = match model {
        RawModel::TwoQubit { w1, w2, g, .. } => {
            let coef = |name: &str, q: &Quantity| -> Result<Coefficient, ScenarioError> {
                if is_unknown(q) {
                    Ok(Coefficient::Unknown)
                } else {
                    Ok(Coefficient::Known(ctx.q(&format!("model.{name}"), q, Dimension::Frequency)?))
                }
            };
            build_two_qubit_model(coef("w1", w1)?, coef("w2", w2)?, coef("g", g)?, obs.clone(), state)
        }
        RawModel::Pauli { drift, controls, .. } => {
            let mut h = crate::operator::Operator::zeros(1 << qubits);
            for (i, t) in drift.iter().enumerate() {
                let op = pauli_op(&format!("model.drift[{i}].op"), &t.op, qubits)?;
                let c = ctx.q(&format!("model.drift[{i}].coefficient"), &t.coefficient, Dimension::Frequency)?;
                h = &h + &op.scale(c);
            }
            let drift_terms = if h.norm() > 0.0 {
                vec![GeneratorTerm::hamiltonian(h, HERMITIAN_TOL).map_err(|e| invalid("model.drift", e))?]
            } else {
                Vec::new()
            };
            let mut ctrl = Vec::new();
            for (i, c) in controls.iter().enumerate() {
                let op = pauli_op(&format!("model.controls[{i}].op"), &c.op, qubits)?;
                ctrl.push(GeneratorTerm::hamiltonian(op, HERMITIAN_TOL).map_err(|e| invalid("model.controls", e))?);
            }
            let labels = controls.iter().map(|c| c.name.clone()).collect();
            ProbeModel::new(drift_terms, ctrl, obs.clone(), state)
                .and_then(|m| m.with_labels(labels, observables.to_vec()))
        }
    }
    .map_err(|e| invalid("model", e))?;
    let controls = built.control_labels().to_vec();
    built = built
        .with_labels(controls, observables.to_vec())
        .map_err(|e| invalid("model", e))?;

    for (i, d) in dissipators.iter().enumerate() {
        let op = pauli_op(&format!("model.dissipators[{i}].op"), &d.op, qubits)?;
        let rate = ctx.q(&format!("model.dissipators[{i}].rate"), &d.rate, Dimension::Rate)?;
        if rate < 0.0 {
            return Err(invalid(&format!("model.dissipators[{i}].rate"), "must not be negative"));
        }
        built = built
            .with_drift_term(GeneratorTerm::lindblad(op.scale(rate.sqrt())))
            .map_err(|e| invalid("model.dissipators", e))?;
    }
    if built.num_outputs() < built.num_inputs() {
        return Err(invalid(
            &format!("{field}observables"),
            Error::UnderInstrumented { observables: built.num_outputs(), inputs: built.num_inputs() },
        ));
    }
    Ok(built)
}

fn resolve_inversion(ctx: &Ctx, base: &RawInversion, over: Option<&RawInversion>, field: &str) -> Result<(InversionConfig, usize), ScenarioError> {
    let pick = |f: fn(&RawInversion) -> bool| over.filter(|o| f(o)).unwrap_or(base);
    let mut cfg = InversionConfig::default();
    if let Some(t) = pick(|o| o.singular_threshold.is_some()).singular_threshold {
        cfg.singular_threshold = t;
    }
    if let Some(h) = pick(|o| o.hold_policy.is_some()).hold_policy {
        cfg.hold_policy = match h {
            HoldPolicyName::HoldLast => HoldPolicy::HoldLast,
            HoldPolicyName::Zero => HoldPolicy::Zero,
        };
    }
    if let Some(d) = &pick(|o| o.derivative.is_some()).derivative {
        cfg.derivative_scheme = match d {
            RawDerivative::ThreePoint => DerivativeScheme::ThreePoint,
            RawDerivative::SavitzkyGolay { window, degree } => {
                DerivativeScheme::SavitzkyGolay { window: *window, degree: *degree }
            }
        };
    }
    if let Some(g) = &pick(|o| o.output_gain.is_some()).output_gain {
        cfg.output_gain = ctx.q(&format!("{field}inversion.output_gain"), g, Dimension::Rate)?;
    }
    let dilation = pick(|o| o.dilation.is_some()).dilation.unwrap_or(WINDOW_DILATION);
    cfg.validate(1).map_err(|e| invalid(&format!("{field}inversion"), e))?;
    Ok((cfg, dilation))
}

fn resolve_noise(
    ctx: &Ctx,
    raw: &[RawNoise],
    controls: &[String],
    truth: &[SignalSpec],
    field: &str,
) -> Result<Vec<NoisePlan>, ScenarioError> {
    let mut out = Vec::new();
    for (i, n) in raw.iter().enumerate() {
        let f = |k: &str| format!("{field}noise[{i}].{k}");
        let channel = match &n.channel {
            None => 0,
            Some(c) => controls
                .iter()
                .position(|x| x == c)
                .ok_or_else(|| invalid(&f("channel"), format!("`{c}` is not an unknown control")))?,
        };
        let target = match n.target {
            TargetName::Evolution => NoiseTarget::Evolution,
            TargetName::Measurement => NoiseTarget::Measurement,
        };
        let dim = match target {
            NoiseTarget::Evolution => Dimension::FrequencySquared,
            NoiseTarget::Measurement => Dimension::Dimensionless,
        };
        let variance = ctx.q(&f("variance"), &n.variance, dim)?;
        if variance < 0.0 {
            return Err(invalid(&f("variance"), "must not be negative"));
        }
        let fundamental = match &n.fundamental {
            Some(q) => ctx.positive(&f("fundamental"), q, Dimension::Frequency)?,
            None => truth[channel]
                .fundamental_frequency()
                .or_else(|| truth.iter().find_map(|s| s.fundamental_frequency()))
                .ok_or_else(|| invalid(&f("fundamental"), "no signal has a natural frequency; give one explicitly"))?,
        };
        out.push(NoisePlan {
            target,
            band: match n.band {
                BandName::Low => NoiseBand::Low,
                BandName::High => NoiseBand::High,
            },
            variance,
            fundamental,
            channel,
        });
    }
    Ok(out)
}

fn resolve_variant(
    ctx: &Ctx,
    raw: &RawScenario,
    rv: &RawVariant,
    controls: &[String],
    truth: &[SignalSpec],
    has_lsq: bool,
) -> Result<Variant, ScenarioError> {
    let field = if raw.variants.is_empty() { String::new() } else { format!("variants.{}.", rv.name) };
    let observable_names = rv.observables.clone().unwrap_or_else(|| raw.observables.clone());
    let model = build_model(ctx, &raw.model, &observable_names, rv.initial_state.as_ref(), &field)?;
    let (inversion, dilation) = resolve_inversion(ctx, &raw.inversion, rv.inversion.as_ref(), &field)?;
    let noise = resolve_noise(ctx, rv.noise.as_deref().unwrap_or(&raw.noise), controls, truth, &field)?;
    let outputs: BTreeSet<OutputKind> = rv.outputs.clone().unwrap_or_else(|| raw.outputs.clone()).into_iter().collect();
    if outputs.is_empty() {
        return Err(invalid(&format!("{field}outputs"), "request at least one output"));
    }
    if outputs.contains(&OutputKind::LsqResult) && !has_lsq {
        return Err(invalid(&format!("{field}outputs"), "lsq_result needs an [lsq] section"));
    }
    if outputs.contains(&OutputKind::RamseyBranches)
        && (model.dim() != 2 || model.num_inputs() != 1 || model.num_outputs() != 1)
    {
        return Err(invalid(
            &format!("{field}outputs"),
            "ramsey_branches needs a single-qubit model with one control and one observable",
        ));
    }
    Ok(Variant { name: rv.name.clone(), model, observable_names, inversion, dilation, noise, outputs })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "mini"
frequency_convention = "angular"
horizon = "10 ns"
observables = ["X"]
outputs = ["verdict", "forward_record"]

[model]
kind = "pauli"
qubits = 1
controls = [{ name = "u", op = "Z" }]
initial_state = { kind = "equator", phase = "0 deg" }

[signals.u]
shape = "constant"
value = "1 MHz"
"#;

    #[test]
    fn minimal_parses() {
        let s = Scenario::from_toml(MINIMAL).unwrap();
        assert_eq!(s.control_names, vec!["u"]);
        assert_eq!(s.variants.len(), 1);
        assert_eq!(s.variants[0].name, "base");
        assert!((s.truth[0].eval(0.0) - crate::signal::mhz(1.0)).abs() < 1e-15);
        assert_eq!(s.config_hash.len(), 64);
    }

    #[test]
    fn missing_observables_names_the_field() {
        let text = MINIMAL.replace("observables = [\"X\"]\n", "");
        let e = Scenario::from_toml(&text).unwrap_err().to_string();
        assert!(e.contains("missing field `observables`"), "{e}");
    }

    #[test]
    fn unitless_horizon_is_rejected() {
        let text = MINIMAL.replace("\"10 ns\"", "10");
        let e = Scenario::from_toml(&text).unwrap_err().to_string();
        assert!(e.contains("horizon") && e.contains("needs a unit"), "{e}");
    }

    #[test]
    fn stray_signal_is_rejected() {
        let text = format!("{MINIMAL}\n[signals.v]\nshape = \"constant\"\nvalue = \"1 MHz\"\n");
        let e = Scenario::from_toml(&text).unwrap_err().to_string();
        assert!(e.contains("signals.v"), "{e}");
    }

    #[test]
    fn every_bundled_scenario_validates() {
        for (name, text) in BUNDLED {
            let s = Scenario::from_toml(text).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(&s.name, name);
        }
        assert!(list_scenarios().len() >= 5);
    }
}
