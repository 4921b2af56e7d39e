//! Browser bindings: each operation returns a JSON document
//! `{"summary", "exit_code", "warnings", "files": {name: contents}}`.

use epilab::run::{self, CommandOutput, RunConfig};
use serde_json::{json, Map, Value};
use wasm_bindgen::prelude::*;

fn pack(out: CommandOutput) -> String {
    let files: Map<String, Value> = out.files.into_iter().map(|(n, c)| (n, Value::String(c))).collect();
    json!({
        "summary": out.summary,
        "exit_code": out.exit_code,
        "warnings": out.warnings,
        "files": files,
    })
    .to_string()
}

fn config(cone: &str, resolution: u32) -> RunConfig {
    RunConfig {
        cone: cone.to_string(),
        resolution: (resolution > 0).then_some(resolution as usize),
        ..RunConfig::default()
    }
}

pub fn spectrum_json(cone: &str, resolution: u32) -> epilab::Result<String> {
    run::cmd_spectrum(&config(cone, resolution), None).map(pack)
}

pub fn epi_check_json(cone: &str, resolution: u32, seed: u64, count: usize, delta: f64) -> epilab::Result<String> {
    let cfg = RunConfig { seed, ensemble_size: count, delta, ..config(cone, resolution) };
    run::cmd_epi_check(&cfg, None).map(pack)
}

pub fn decay_json(gamma: f64, eps: f64, e0: f64, levels: u32) -> epilab::Result<String> {
    let mut cfg = RunConfig { gamma: Some(gamma), ..RunConfig::default() };
    cfg.decay.eps = eps;
    cfg.decay.e0 = e0;
    cfg.decay.levels = levels;
    run::cmd_decay(&cfg, None).map(pack)
}

fn js(r: epilab::Result<String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

/// Jacobi spectrum of a cone family; `resolution` 0 selects the default grid.
#[wasm_bindgen]
pub fn spectrum(cone: &str, resolution: u32) -> Result<String, JsError> {
    js(spectrum_json(cone, resolution))
}

/// Epiperimetric check over a seeded trace ensemble.
#[wasm_bindgen(js_name = epiCheck)]
pub fn epi_check(cone: &str, resolution: u32, seed: u32, count: u32, delta: f64) -> Result<String, JsError> {
    js(epi_check_json(cone, resolution, seed as u64, count as usize, delta))
}

/// Density-excess decay curve with rate fit.
#[wasm_bindgen]
pub fn decay(gamma: f64, eps: f64, e0: f64, levels: u32) -> Result<String, JsError> {
    js(decay_json(gamma, eps, e0, levels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Value {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn spectrum_document() {
        let v = parse(&spectrum_json("clifford", 8).unwrap());
        let body = parse(v["files"]["spectrum.json"].as_str().unwrap());
        assert_eq!(body["kernel_dim"], 4);
        assert!(v["files"]["spectrum.csv"].as_str().unwrap().contains("lambda"));
    }

    #[test]
    fn epi_document() {
        let v = parse(&epi_check_json("plane:2,1", 0, 3, 5, 0.02).unwrap());
        let body = parse(v["files"]["epi.json"].as_str().unwrap());
        assert_eq!(body["summary"]["count"], 5);
        assert_eq!(body["summary"]["pass_rate"], 1.0);
    }

    #[test]
    fn decay_document() {
        let v = parse(&decay_json(0.5, 0.1, 0.1, 6).unwrap());
        assert!(v["files"]["decay.csv"].as_str().unwrap().contains("e_tilde"));
    }

    #[test]
    fn bad_cone_is_an_error() {
        assert!(spectrum_json("torus", 0).is_err());
    }
}
