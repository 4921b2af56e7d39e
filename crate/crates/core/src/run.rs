//! Run configuration and the command pipeline behind the `epilab` binary.
//! Commands return file contents; writing them is left to the caller.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::competitor::{run_ensemble, Case, EpiParams, EpiRecord};
use crate::decay::{fit_rate, integrate_excess, DecayParams};
use crate::error::{Error, Result};
use crate::functional::second_variation_assemble;
use crate::geometry::{build_cross_section, ConeFamily, ConeSpec, CrossSection};
use crate::reduction::{
    integrability_test, lojasiewicz_fit, samples_csv, Quartic, ReducedFunction, ReducedMap, Saddle, Verdict,
    INTEGRABILITY_TOL,
};
use crate::sampler::{TraceClass, TraceEnsembleSpec};
use crate::spectral::{eigendecompose, SpectralBasis};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INCONCLUSIVE: i32 = 3;
pub const EXIT_DEGENERATE_GAP: i32 = 4;

/// Largest admissible trace bound accepted by the competitor.
pub const MAX_ADMISSIBLE_DELTA: f64 = 0.2499;

/// Share of rho_K used as the sampling radius of `reduce`.
pub const SAMPLE_RADIUS_FRACTION: f64 = 0.6;

pub const MODULE_VERSIONS: [(&str, &str); 8] = [
    ("geometry", "1"),
    ("functional", "1"),
    ("spectral", "1"),
    ("reduction", "1"),
    ("competitor", "1"),
    ("decay", "1"),
    ("trace_sampler", "1"),
    ("cli", "1"),
];

/// Everything that determines the numbers a run produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub cone: String,
    pub resolution: Option<usize>,
    pub seed: u64,
    pub ensemble_size: usize,
    /// Norm target of the trace ensemble.
    pub delta: f64,
    /// Exponent of the epiperimetric check and of the decay model.
    pub gamma: Option<f64>,
    pub trace_class: TraceClass,
    pub rho_k: f64,
    pub reduce_samples: usize,
    pub loj_directions: usize,
    /// "quartic" or "saddle" replaces the cone's reduced function.
    pub synthetic: Option<String>,
    pub epi: EpiParams,
    pub decay: DecayParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            cone: "clifford".into(),
            resolution: None,
            seed: 1,
            ensemble_size: 100,
            delta: 0.02,
            gamma: None,
            trace_class: TraceClass::NonNegative,
            rho_k: crate::reduction::DEFAULT_RHO_K,
            reduce_samples: 64,
            loj_directions: 16,
            synthetic: None,
            epi: EpiParams::default(),
            decay: DecayParams::default(),
        }
    }
}

impl RunConfig {
    /// Hex SHA-256 of the JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).unwrap_or_default();
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn family(&self) -> Result<ConeFamily> {
        self.cone.parse()
    }

    pub fn cone_spec(&self) -> Result<ConeSpec> {
        let fam = self.family()?;
        Ok(match self.resolution {
            Some(n) => ConeSpec::with_resolution(fam, n),
            None => ConeSpec::new(fam),
        })
    }
}

/// A configuration file: run settings plus output options.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfigFile {
    #[serde(flatten)]
    pub run: RunConfig,
    pub out: Option<String>,
    pub jobs: Option<usize>,
    pub no_timestamp: Option<bool>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidParameter(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub modules: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<EnsembleManifest>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub seed: u64,
    pub spec_hash: String,
}

impl Manifest {
    pub fn new(command: &str, cfg: &RunConfig, timestamp: Option<u64>) -> Self {
        Manifest {
            tool: "epilab".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            modules: MODULE_VERSIONS.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
            ensemble: None,
            timestamp,
        }
    }

    /// Comment lines heading every CSV file.
    pub fn csv_header(&self) -> String {
        let modules: Vec<String> = self.modules.iter().map(|(k, v)| format!("{k}/{v}")).collect();
        let mut out = format!(
            "# {} {} {} config={} seed={} modules={}\n",
            self.tool,
            self.version,
            self.command,
            self.config_hash,
            self.seed,
            modules.join(";")
        );
        if let Some(e) = &self.ensemble {
            out.push_str(&format!("# ensemble seed={} spec={}\n", e.seed, e.spec_hash));
        }
        if let Some(t) = self.timestamp {
            out.push_str(&format!("# timestamp={t}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, Default)]
pub struct CommandOutput {
    /// (file name, contents), written in order.
    pub files: Vec<(String, String)>,
    pub exit_code: i32,
    pub warnings: Vec<String>,
    /// Short human-readable summary.
    pub summary: String,
}

fn json_file(manifest: &Manifest, body: Value) -> String {
    let mut map = serde_json::Map::new();
    map.insert("manifest".into(), serde_json::to_value(manifest).unwrap_or(Value::Null));
    if let Value::Object(b) = body {
        map.extend(b);
    }
    let mut s = serde_json::to_string_pretty(&Value::Object(map)).unwrap_or_default();
    s.push('\n');
    s
}

/// Maps library errors to process exit codes.
pub fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::UnsupportedFamily(_) | Error::InvalidParameter(_) => EXIT_USAGE,
        Error::DegenerateGap { .. } => EXIT_DEGENERATE_GAP,
        _ => EXIT_ERROR,
    }
}

fn setup(cfg: &RunConfig) -> Result<(CrossSection, SpectralBasis)> {
    let cs = build_cross_section(&cfg.cone_spec()?)?;
    let basis = eigendecompose(&second_variation_assemble(&cs), &cs);
    Ok((cs, basis))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".into(), |x| format!("{x:.6}"))
}

pub fn cmd_spectrum(cfg: &RunConfig, timestamp: Option<u64>) -> Result<CommandOutput> {
    let (cs, basis) = setup(cfg)?;
    let manifest = Manifest::new("spectrum", cfg, timestamp);
    let gap = basis.check_gap();
    let body = json!({
        "family": cfg.family()?.to_string(),
        "resolution": cs.spec.resolution,
        "modes": basis.len(),
        "kernel_dim": basis.ell(),
        "negative": basis.negative.len(),
        "positive": basis.positive.len(),
        "gap_minus": basis.gap_minus,
        "gap_plus": basis.gap_plus,
        "kernel_tol": basis.kernel_tol,
        "eigen_residual": basis.residual,
        "gap_ok": gap.is_ok(),
    });
    let mut out = CommandOutput {
        summary: format!(
            "{}: {} modes, kernel {}, negative {}, gap_minus {}, gap_plus {}",
            cfg.cone,
            basis.len(),
            basis.ell(),
            basis.negative.len(),
            opt(basis.gap_minus),
            opt(basis.gap_plus)
        ),
        ..Default::default()
    };
    out.files.push(("spectrum.csv".into(), manifest.csv_header() + &basis.spectrum_csv()));
    out.files.push(("spectrum.json".into(), json_file(&manifest, body)));
    if let Err(e) = gap {
        out.warnings.push(e.to_string());
        out.exit_code = EXIT_DEGENERATE_GAP;
    }
    Ok(out)
}

fn synthetic(cfg: &RunConfig) -> Result<Option<Box<dyn ReducedFunction>>> {
    Ok(match cfg.synthetic.as_deref() {
        None => None,
        Some("quartic") => Some(Box::new(Quartic { dim: 2, radius: cfg.rho_k })),
        Some("saddle") => Some(Box::new(Saddle { radius: cfg.rho_k })),
        Some(other) => return Err(Error::InvalidParameter(format!("unknown synthetic fixture '{other}'"))),
    })
}

fn reduce_with(rf: &dyn ReducedFunction, cfg: &RunConfig) -> Result<(Value, Verdict, String)> {
    let radius = SAMPLE_RADIUS_FRACTION * cfg.rho_k;
    let report = integrability_test(rf, radius, cfg.reduce_samples, INTEGRABILITY_TOL, cfg.seed)?;
    let mut verdict = report.verdict;
    let mut loj = Value::Null;
    if verdict != Verdict::Inconclusive {
        match lojasiewicz_fit(rf, radius, cfg.loj_directions, INTEGRABILITY_TOL, cfg.seed) {
            Ok(f) => {
                loj = json!({
                    "gamma_loj": f.gamma,
                    "c_loj": f.c_loj,
                    "worst_ratio": f.worst_ratio,
                    "vacuous": f.vacuous,
                })
            }
            Err(Error::FitImpossible(m)) => loj = json!({ "error": m }),
            Err(e) => {
                verdict = Verdict::Inconclusive;
                loj = json!({ "error": e.to_string() });
            }
        }
    }
    let body = json!({
        "function": rf.label(),
        "dim": rf.dim(),
        "radius": radius,
        "verdict": verdict,
        "integrable": verdict == Verdict::Integrable,
        "tol": report.tol,
        "max_abs_value": report.max_abs_value,
        "max_grad": report.max_grad,
        "samples": report.samples.len(),
        "failures": report.failures,
        "first_failure": report.first_failure,
        "lojasiewicz": loj,
    });
    Ok((body, verdict, samples_csv(&report.samples)))
}

pub fn cmd_reduce(cfg: &RunConfig, timestamp: Option<u64>) -> Result<CommandOutput> {
    let manifest = Manifest::new("reduce", cfg, timestamp);
    let (body, verdict, csv) = match synthetic(cfg)? {
        Some(rf) => reduce_with(rf.as_ref(), cfg)?,
        None => {
            let (cs, basis) = setup(cfg)?;
            let rm = ReducedMap::new(&cs, &basis).with_radius(cfg.rho_k);
            let (mut body, verdict, csv) = reduce_with(&rm, cfg)?;
            body["max_newton_residual"] = json!(rm.max_cached_residual());
            (body, verdict, csv)
        }
    };
    let mut out = CommandOutput {
        summary: format!(
            "{}: verdict {:?}, max|A| {:e}, gamma_loj {}",
            body["function"].as_str().unwrap_or(""),
            verdict,
            body["max_abs_value"].as_f64().unwrap_or(f64::NAN),
            body["lojasiewicz"]["gamma_loj"]
        ),
        ..Default::default()
    };
    out.files.push(("reduce_samples.csv".into(), manifest.csv_header() + &csv));
    out.files.push(("reduce.json".into(), json_file(&manifest, body)));
    if verdict == Verdict::Inconclusive {
        out.exit_code = EXIT_INCONCLUSIVE;
        out.warnings.push("reduction inconclusive: Newton failure inside the sampled ball".into());
    }
    Ok(out)
}

fn epi_csv(records: &[EpiRecord]) -> String {
    let mut out = String::from("index,seed,h1,c1_alpha,case,a_z,a_h,eps_achieved,outcome,pass,note\n");
    for r in records {
        let rep = &r.report;
        let case = match rep.case {
            Some(Case::Frozen) => "frozen",
            Some(Case::Flow) => "flow",
            None => "-",
        };
        let eps = rep.epsilon_achieved.map(|e| format!("{e:e}")).unwrap_or_default();
        let note = rep.note.clone().unwrap_or_default().replace([',', '\n'], ";");
        out.push_str(&format!(
            "{},{},{:e},{:e},{},{:e},{:e},{},{:?},{},{}\n",
            r.index, r.seed, r.h1, r.c1_alpha, case, rep.a_z, rep.a_h, eps, rep.outcome, rep.pass, note
        ));
    }
    out
}

pub fn cmd_epi_check(cfg: &RunConfig, timestamp: Option<u64>) -> Result<CommandOutput> {
    let (cs, basis) = setup(cfg)?;
    let rm = ReducedMap::new(&cs, &basis).with_radius(cfg.rho_k);
    let mut warnings = Vec::new();
    let (gamma, gamma_source) = match cfg.gamma.or(cfg.epi.gamma) {
        Some(g) => (g, "flag".to_string()),
        None => {
            let radius = SAMPLE_RADIUS_FRACTION * cfg.rho_k;
            let rep = integrability_test(&rm, radius, 24, INTEGRABILITY_TOL, cfg.seed)?;
            match rep.verdict {
                Verdict::Integrable => (0.0, "integrable".to_string()),
                _ => match lojasiewicz_fit(&rm, radius, cfg.loj_directions, INTEGRABILITY_TOL, cfg.seed) {
                    Ok(f) => (f.gamma, "lojasiewicz".to_string()),
                    Err(e) => {
                        warnings.push(format!("Lojasiewicz fit failed ({e}); using gamma = 0.5"));
                        (0.5, "fallback".to_string())
                    }
                },
            }
        }
    };
    let mut params = cfg.epi;
    params.gamma = Some(gamma);
    params.delta = cfg.delta.min(MAX_ADMISSIBLE_DELTA);
    params.validate()?;
    if cfg.delta > params.delta {
        warnings.push(format!(
            "trace norm target {} exceeds the admissible bound; traces above {} are refused",
            cfg.delta, params.delta
        ));
    }
    let mut spec = TraceEnsembleSpec::new(cfg.seed, cfg.ensemble_size, cfg.delta);
    spec.class = cfg.trace_class;
    let (records, summary) = run_ensemble(&cs, &basis, &rm, &spec, &params, gamma)?;
    if summary.refused > 0 {
        warnings.push(format!("{} of {} traces refused", summary.refused, summary.count));
    }
    if summary.fails > 0 {
        warnings.push(format!("{} traces fail the inequality", summary.fails));
    }
    let mut manifest = Manifest::new("epi-check", cfg, timestamp);
    manifest.ensemble = Some(EnsembleManifest { seed: spec.seed, spec_hash: spec.hash() });
    let body = json!({
        "family": cfg.family()?.to_string(),
        "gamma_epi": gamma,
        "gamma_source": gamma_source,
        "params": params,
        "ensemble": spec,
        "summary": summary,
    });
    let out = CommandOutput {
        files: vec![
            ("epi_traces.csv".into(), manifest.csv_header() + &epi_csv(&records)),
            ("epi.json".into(), json_file(&manifest, body)),
        ],
        exit_code: EXIT_OK,
        summary: format!(
            "{}: gamma {} ({}), pass_rate {}, passes {}, fails {}, refused {}, non-positive {}, degenerate {}, min eps {}, calibrated eps {}",
            cfg.cone,
            gamma,
            gamma_source,
            summary.pass_rate,
            summary.passes,
            summary.fails,
            summary.refused,
            summary.nonpositive,
            summary.degenerate,
            opt(summary.min_eps_achieved),
            opt(summary.calibrated_eps)
        ),
        warnings,
    };
    Ok(out)
}

pub fn cmd_decay(cfg: &RunConfig, timestamp: Option<u64>) -> Result<CommandOutput> {
    let mut p = cfg.decay;
    if let Some(g) = cfg.gamma {
        p.gamma = g;
    }
    let traj = integrate_excess(&p)?;
    let fit = if p.e0 > 0.0 { Some(fit_rate(&p)?) } else { None };
    let manifest = Manifest::new("decay", cfg, timestamp);
    let body = json!({
        "params": p,
        "points": traj.len(),
        "steps": traj.steps,
        "max_rel_closed_form": traj.max_rel_closed_form,
        "monotone_violation": traj.m_violation,
        "bound_holds": traj.bound_holds,
        "final_bound_holds": traj.final_bound_holds,
        "absorption_log_r": traj.absorption_log_r,
        "fit": fit,
    });
    let summary = match &fit {
        Some(f) => format!(
            "decay gamma {}: {} rate {:.6} (target {:.6}, rel error {:.2e})",
            p.gamma, f.kind, f.fitted, f.target, f.rel_error
        ),
        None => format!("decay gamma {}: zero excess", p.gamma),
    };
    Ok(CommandOutput {
        files: vec![
            ("decay.csv".into(), manifest.csv_header() + &traj.csv()),
            ("decay.json".into(), json_file(&manifest, body)),
        ],
        exit_code: EXIT_OK,
        warnings: vec![],
        summary,
    })
}

pub const REPORT_INPUTS: [&str; 4] = ["spectrum.json", "reduce.json", "epi.json", "decay.json"];

/// Aggregates the JSON summaries found in `dir`.
pub fn cmd_report(cfg: &RunConfig, dir: &Path, timestamp: Option<u64>) -> Result<CommandOutput> {
    let manifest = Manifest::new("report", cfg, timestamp);
    let mut sections = serde_json::Map::new();
    let mut lines = Vec::new();
    for name in REPORT_INPUTS {
        let path = dir.join(name);
        if !path.exists() {
            continue;
        }
        let v: Value = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
        let key = name.trim_end_matches(".json").to_string();
        lines.push(format!("{key}: config {}", v["manifest"]["config_hash"].as_str().unwrap_or("?")));
        sections.insert(key, v);
    }
    let mut warnings = Vec::new();
    if sections.is_empty() {
        warnings.push(format!("no summaries found in {}", dir.display()));
    }
    let body = json!({ "sections": Value::Object(sections) });
    Ok(CommandOutput {
        files: vec![("report.json".into(), json_file(&manifest, body))],
        exit_code: EXIT_OK,
        warnings,
        summary: lines.join("\n"),
    })
}

/// Writes every file of a command output into `dir`.
pub fn write_output(out: &CommandOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, contents) in &out.files {
        std::fs::write(dir.join(name), contents)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_hash_ignores_nothing_scientific() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 2;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn partial_config_file_uses_defaults() {
        let f: ConfigFile = serde_json::from_str(r#"{"cone": "plane:2,1", "epi": {"eps": 0.1}, "out": "x"}"#).unwrap();
        assert_eq!(f.run.cone, "plane:2,1");
        assert_eq!(f.run.epi.eps, 0.1);
        assert_eq!(f.run.epi.tau, EpiParams::default().tau);
        assert_eq!(f.out.as_deref(), Some("x"));
    }

    #[test]
    fn spectrum_plane() {
        let cfg = RunConfig { cone: "plane:2,1".into(), ..RunConfig::default() };
        let out = cmd_spectrum(&cfg, None).unwrap();
        assert_eq!(out.exit_code, 0);
        let csv = &out.files[0].1;
        assert_eq!(csv.lines().filter(|l| l.contains(",Kernel,")).count(), 2);
        assert!(!csv.contains("timestamp"));
    }

    #[test]
    fn decay_zero_excess_is_all_zero() {
        let mut cfg = RunConfig::default();
        cfg.decay.e0 = 0.0;
        let out = cmd_decay(&cfg, None).unwrap();
        for line in out.files[0].1.lines().filter(|l| !l.starts_with('#')).skip(1) {
            let cols: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
            assert!(cols[2..].iter().all(|&x| x == 0.0), "{line}");
        }
    }

    #[test]
    fn synthetic_quartic_reduce() {
        let cfg = RunConfig { synthetic: Some("quartic".into()), ..RunConfig::default() };
        let out = cmd_reduce(&cfg, None).unwrap();
        let v: Value = serde_json::from_str(&out.files[1].1).unwrap();
        assert_eq!(v["verdict"], "NonIntegrable");
        assert_eq!(v["lojasiewicz"]["gamma_loj"], 0.25);
    }

    #[test]
    fn timestamp_line_is_optional() {
        let m = Manifest::new("x", &RunConfig::default(), Some(5));
        assert!(m.csv_header().contains("# timestamp=5"));
        assert!(!Manifest::new("x", &RunConfig::default(), None).csv_header().contains("timestamp"));
    }
}
