//! Scenario execution and artifact writing.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use super::{OutputKind, Scenario, ScenarioError, Variant};
use crate::baseline::{lsq_identify, LsqConfig, LsqResult};
use crate::error::Error;
use crate::forward::simulate;
use crate::inversion::{invert, ramsey_direct, relative_l2, InversionReport, RamseyBranches};
use crate::invertibility::{transform_observables, InvertibilityVerdict};
use crate::io::{fmt_num, write_cost_history, write_inversion, write_record, write_series, write_windows};
use crate::noise::{inject_evolution_noise, inject_measurement_noise, NoiseSpec, NoiseTarget};
use crate::signal::{MeasurementRecord, SignalSpec, TimeSeries};

#[derive(Debug, Clone)]
pub struct InversionOutcome {
    pub report: InversionReport,
    /// Per-channel relative L2 error outside the dilated singular windows.
    pub errors_clear: Vec<f64>,
    /// Per-channel relative L2 error over the whole record.
    pub errors_full: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RamseyOutcome {
    pub branches: RamseyBranches,
    /// Record produced by the sign-flipped input.
    pub mirror_record: MeasurementRecord,
    /// Largest pointwise gap between the two records.
    pub record_gap: f64,
    pub plus_error: f64,
    pub minus_error: f64,
}

#[derive(Debug, Clone)]
pub struct LsqOutcome {
    pub label: String,
    pub result: LsqResult,
    /// Terminal cost over record energy.
    pub relative_cost: f64,
    pub relative_errors: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ReplicateRun {
    pub seed: u64,
    pub record: MeasurementRecord,
    pub inversion: Option<InversionOutcome>,
    pub ramsey: Option<RamseyOutcome>,
    pub lsq: Vec<LsqOutcome>,
}

#[derive(Debug, Clone)]
pub struct VariantRun {
    pub name: String,
    pub verdict: Option<InvertibilityVerdict>,
    pub replicates: Vec<ReplicateRun>,
}

impl VariantRun {
    /// Per-channel median of the full-record inversion error over replicates.
    pub fn median_errors_full(&self) -> Option<Vec<f64>> {
        median_by(self, |o| &o.errors_full)
    }

    pub fn median_errors_clear(&self) -> Option<Vec<f64>> {
        median_by(self, |o| &o.errors_clear)
    }
}

fn median_by(v: &VariantRun, f: impl Fn(&InversionOutcome) -> &Vec<f64>) -> Option<Vec<f64>> {
    let outs: Vec<&Vec<f64>> = v.replicates.iter().filter_map(|r| r.inversion.as_ref().map(&f)).collect();
    let width = outs.first()?.len();
    Some((0..width).map(|j| median(outs.iter().map(|e| e[j]).collect())).collect())
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub scenario: String,
    pub seed: u64,
    pub truth_trace: TimeSeries,
    pub variants: Vec<VariantRun>,
}

impl ScenarioRun {
    pub fn variant(&self, name: &str) -> Option<&VariantRun> {
        self.variants.iter().find(|v| v.name == name)
    }
}

fn stage<T>(stage: &'static str, variant: &str, r: crate::error::Result<T>) -> Result<T, ScenarioError> {
    r.map_err(|source| ScenarioError::Runtime { stage, variant: variant.to_string(), source })
}

/// Noise seed for noise section `k` of replicate `r`; sections draw from
/// disjoint seeds so they are independent.
fn noise_seed(base: u64, k: usize, r: usize) -> u64 {
    base.wrapping_add(r as u64).wrapping_add((k as u64) << 32)
}

/// Runs every variant and replicate in memory.
pub fn execute(sc: &Scenario, seed: Option<u64>) -> Result<ScenarioRun, ScenarioError> {
    let seed = seed.unwrap_or(sc.seed);
    let samples = sc.integrator.steps(sc.horizon).unwrap_or(0) / sc.integrator.sample_every + 1;
    let truth_channels: Vec<Vec<f64>> =
        sc.truth.iter().map(|s| s.sample(0.0, sc.integrator.sample_dt(), samples)).collect();
    let truth_trace = stage("forward", "", TimeSeries::from_channels(0.0, sc.integrator.sample_dt(), &truth_channels))?;
    let mut variants = Vec::new();
    for v in &sc.variants {
        variants.push(run_variant(sc, v, seed)?);
    }
    Ok(ScenarioRun { scenario: sc.name.clone(), seed, truth_trace, variants })
}

fn run_variant(sc: &Scenario, v: &Variant, seed: u64) -> Result<VariantRun, ScenarioError> {
    let name = v.name.as_str();
    let needs_verdict = v.outputs.contains(&OutputKind::Verdict) || v.outputs.contains(&OutputKind::InversionReport);
    let verdict = if needs_verdict { Some(stage("verdict", name, transform_observables(&v.model))?) } else { None };
    if v.outputs.contains(&OutputKind::InversionReport) {
        if let Some(vd) = &verdict {
            if !vd.invertible {
                return Err(ScenarioError::Runtime {
                    stage: "verdict",
                    variant: name.into(),
                    source: Error::NotInvertible(vd.notes.clone()),
                });
            }
        }
    }

    let mut replicates = Vec::new();
    for r in 0..sc.replicates {
        let rep_seed = seed.wrapping_add(r as u64);
        let mut inputs = sc.truth.clone();
        for (k, n) in v.noise.iter().enumerate().filter(|(_, n)| n.target == NoiseTarget::Evolution) {
            let spec = noise_spec(n, noise_seed(seed, k, r));
            inputs = stage("noise", name, inject_evolution_noise(&inputs, &spec))?;
        }
        let traj = stage("forward", name, simulate(&v.model, &inputs, sc.horizon, &sc.integrator))?;
        let mut record = traj.record;
        for (k, n) in v.noise.iter().enumerate().filter(|(_, n)| n.target == NoiseTarget::Measurement) {
            let spec = noise_spec(n, noise_seed(seed, k, r));
            record = stage("noise", name, inject_measurement_noise(&record, &spec))?;
        }

        let inversion = match (&verdict, v.outputs.contains(&OutputKind::InversionReport)) {
            (Some(vd), true) => {
                let report = stage("invert", name, invert(&v.model, vd, &record, &v.inversion))?;
                let mask = report.clear_mask(v.dilation);
                let errors_clear = report.relative_errors(&sc.truth, &mask);
                let errors_full = report.relative_errors(&sc.truth, &vec![true; mask.len()]);
                Some(InversionOutcome { report, errors_clear, errors_full })
            }
            _ => None,
        };

        let ramsey = if v.outputs.contains(&OutputKind::RamseyBranches) {
            Some(ramsey_outcome(sc, v, &record, &inputs)?)
        } else {
            None
        };

        let mut lsq = Vec::new();
        if let (Some(plan), true) = (&sc.lsq, v.outputs.contains(&OutputKind::LsqResult)) {
            let energy = record.energy();
            for (label, guess) in &plan.guesses {
                let cfg = LsqConfig {
                    n_bins: plan.n_bins,
                    initial_guess: guess.clone(),
                    max_iters: plan.max_iters,
                    step_rule: plan.step_rule,
                    tol: plan.tol,
                };
                let result = stage("baseline", name, lsq_identify(&v.model, &record, &cfg, &sc.integrator))?;
                let relative_errors = (0..sc.truth.len())
                    .map(|j| {
                        let tru = sc.truth[j].sample(record.t0(), record.dt(), record.len());
                        relative_l2(&result.trace.channel(j), &tru, &vec![true; tru.len()])
                    })
                    .collect();
                lsq.push(LsqOutcome {
                    label: label.clone(),
                    relative_cost: result.best_cost / energy,
                    result,
                    relative_errors,
                });
            }
        }
        replicates.push(ReplicateRun { seed: rep_seed, record, inversion, ramsey, lsq });
    }
    Ok(VariantRun { name: v.name.clone(), verdict, replicates })
}

fn noise_spec(n: &super::NoisePlan, seed: u64) -> NoiseSpec {
    NoiseSpec {
        target: n.target,
        band: n.band,
        variance: n.variance,
        seed,
        fundamental: n.fundamental,
        channel: n.channel,
    }
}

fn ramsey_outcome(
    sc: &Scenario,
    v: &Variant,
    record: &MeasurementRecord,
    inputs: &[SignalSpec],
) -> Result<RamseyOutcome, ScenarioError> {
    let name = v.name.as_str();
    let mirrored: Vec<SignalSpec> = inputs.iter().map(|s| s.negated()).collect();
    let mirror_record = stage("forward", name, simulate(&v.model, &mirrored, sc.horizon, &sc.integrator))?.record;
    let record_gap = record
        .samples()
        .iter()
        .zip(mirror_record.samples())
        .map(|(a, b)| (a[0] - b[0]).abs())
        .fold(0.0, f64::max);
    let branches = stage("ramsey", name, ramsey_direct(record))?;
    let tru = sc.truth[0].sample(record.t0(), record.dt(), record.len());
    let all = vec![true; tru.len()];
    Ok(RamseyOutcome {
        plus_error: relative_l2(&branches.plus.channel(0), &tru, &all),
        minus_error: relative_l2(&branches.minus.channel(0), &tru, &all),
        branches,
        mirror_record,
        record_gap,
    })
}

// ---- artifacts ---------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub scenario: String,
    pub config_sha256: String,
    pub seed: u64,
    pub frequency_convention: super::units::FrequencyConvention,
    pub replicates: usize,
    pub artifacts: Vec<ManifestEntry>,
}

struct Writer {
    root: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl Writer {
    fn put(&mut self, rel: &str, bytes: Vec<u8>) -> Result<(), ScenarioError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, &bytes)?;
        self.entries.push(ManifestEntry {
            path: rel.to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
            bytes: bytes.len(),
        });
        Ok(())
    }

    fn put_with(
        &mut self,
        rel: &str,
        f: impl FnOnce(&mut Vec<u8>) -> crate::error::Result<()>,
    ) -> Result<(), ScenarioError> {
        let mut buf = Vec::new();
        f(&mut buf).map_err(|source| ScenarioError::Runtime { stage: "write", variant: rel.into(), source })?;
        self.put(rel, buf)
    }
}

fn json_bytes(v: &serde_json::Value) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(v).expect("serialisable json");
    b.push(b'\n');
    b
}

/// Writes every requested artifact under `dir` plus `summary.json` and
/// `manifest.json`.
pub fn write_artifacts(sc: &Scenario, run: &ScenarioRun, dir: &Path) -> Result<Manifest, ScenarioError> {
    let mut w = Writer { root: dir.to_path_buf(), entries: Vec::new() };
    let wants = |o: OutputKind| sc.variants.iter().any(|v| v.outputs.contains(&o));
    if wants(OutputKind::ForwardRecord) {
        w.put_with("truth.csv", |b| write_series(b, &run.truth_trace, "u"))?;
    }

    let mut summary_variants = Vec::new();
    for (v, vr) in sc.variants.iter().zip(&run.variants) {
        let base = format!("{}/", v.name);
        if let (Some(vd), true) = (&vr.verdict, v.outputs.contains(&OutputKind::Verdict)) {
            w.put_with(&format!("{base}verdict.json"), |b| {
                b.extend(vd.to_json()?.into_bytes());
                b.push(b'\n');
                Ok(())
            })?;
        }
        let mut reps = Vec::new();
        for (r, rep) in vr.replicates.iter().enumerate() {
            let p = if sc.replicates > 1 { format!("{base}r{r:02}/") } else { base.clone() };
            if v.outputs.contains(&OutputKind::ForwardRecord) {
                w.put_with(&format!("{p}record.csv"), |b| write_record(b, &rep.record))?;
            }
            let mut rep_json = json!({ "seed": rep.seed });
            if let Some(inv) = &rep.inversion {
                w.put_with(&format!("{p}inversion.csv"), |b| write_inversion(b, &inv.report))?;
                w.put_with(&format!("{p}inversion_windows.json"), |b| {
                    write_windows(&mut *b, &inv.report, v.inversion.singular_threshold)?;
                    b.push(b'\n');
                    Ok(())
                })?;
                rep_json["inversion"] = json!({
                    "singular_windows": inv.report.singular_windows,
                    "relative_error_clear": inv.errors_clear,
                    "relative_error_full": inv.errors_full,
                });
            }
            if let Some(ra) = &rep.ramsey {
                w.put_with(&format!("{p}ramsey_branches.csv"), |b| write_ramsey(b, rep, ra, &run.truth_trace))?;
                rep_json["ramsey"] = json!({
                    "record_gap": ra.record_gap,
                    "plus_error": ra.plus_error,
                    "minus_error": ra.minus_error,
                    "branch_points": ra.branches.branch_points,
                });
            }
            let mut lsq_json = Vec::new();
            for l in &rep.lsq {
                w.put_with(&format!("{p}lsq_{}_cost.csv", l.label), |b| write_cost_history(b, &l.result.history))?;
                w.put_with(&format!("{p}lsq_{}_signal.csv", l.label), |b| write_series(b, &l.result.trace, "u"))?;
                lsq_json.push(json!({
                    "label": l.label,
                    "iterations": l.result.iterations,
                    "terminal_cost": l.result.best_cost,
                    "relative_cost": l.relative_cost,
                    "relative_error": l.relative_errors,
                }));
            }
            if !lsq_json.is_empty() {
                rep_json["lsq"] = json!(lsq_json);
            }
            reps.push(rep_json);
        }
        let mut vj = json!({ "name": v.name, "observables": v.observable_names, "replicates": reps });
        if let Some(vd) = &vr.verdict {
            vj["invertible"] = json!(vd.invertible);
            vj["relative_degree"] = serde_json::to_value(vd.relative_degree).expect("serialisable");
        }
        if let Some(m) = vr.median_errors_full() {
            vj["median_relative_error_full"] = json!(m);
            vj["median_relative_error_clear"] = json!(vr.median_errors_clear());
        }
        summary_variants.push(vj);
    }
    let summary = json!({
        "scenario": sc.name,
        "seed": run.seed,
        "horizon_ns": sc.horizon,
        "dt_ns": sc.integrator.dt,
        "controls": sc.control_names,
        "variants": summary_variants,
    });
    w.put("summary.json", json_bytes(&summary))?;

    w.entries.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest {
        scenario: sc.name.clone(),
        config_sha256: sc.config_hash.clone(),
        seed: run.seed,
        frequency_convention: sc.convention,
        replicates: sc.replicates,
        artifacts: w.entries,
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("serialisable manifest");
    bytes.push(b'\n');
    fs::write(dir.join("manifest.json"), bytes)?;
    Ok(manifest)
}

/// `t,y,y_mirror,u_plus,u_minus,u_true`.
fn write_ramsey(out: &mut Vec<u8>, rep: &ReplicateRun, ra: &RamseyOutcome, truth: &TimeSeries) -> crate::error::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "y", "y_mirror", "u_plus", "u_minus", "u_true"])?;
    for i in 0..rep.record.len() {
        w.write_record([
            fmt_num(rep.record.time(i)),
            fmt_num(rep.record.sample(i)[0]),
            fmt_num(ra.mirror_record.sample(i)[0]),
            fmt_num(ra.branches.plus.sample(i)[0]),
            fmt_num(ra.branches.minus.sample(i)[0]),
            fmt_num(truth.sample(i)[0]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Loads, runs and writes a scenario into `out_root/<name>/`.
pub fn run_scenario(path: &Path, out_root: &Path, seed: Option<u64>) -> Result<(Manifest, PathBuf), ScenarioError> {
    let sc = Scenario::load(path)?;
    let run = execute(&sc, seed)?;
    let dir = out_root.join(&sc.name);
    fs::create_dir_all(&dir)?;
    let manifest = write_artifacts(&sc, &run, &dir)?;
    Ok((manifest, dir))
}
