//! Versioned model file: TOML with a `[meta]` header, one `[[marginal]]`
//! table per asset, an optional `[copula]` table and a closing `[end]`
//! marker that detects truncation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use flexdep::gas::{GasCoeffs, GasModel, Scaling, TildeParams};
use flexdep::mscopula::MsCopulaModel;

use crate::error::{CliError, CliResult};

pub const FORMAT_NAME: &str = "flexdep-model";
pub const FORMAT_VERSION: i64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Models {
    pub assets: Vec<String>,
    /// First and last date of the estimation window.
    pub window: (String, String),
    pub marginals: Vec<GasModel>,
    pub copula: Option<MsCopulaModel>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    format: String,
    version: i64,
    assets: Vec<String>,
    window: [String; 2],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MarginalEntry {
    asset: String,
    loglik: f64,
    scaling: Scaling,
    fallback_steps: usize,
    clamped_steps: usize,
    omega: [f64; 4],
    alpha: [f64; 4],
    beta: [f64; 4],
    /// Predicted (μ, ln σ, logit γ, ln(ν−4)) for rows 1..T+1.
    tilde_path: Vec<[f64; 4]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct End {
    complete: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileDoc {
    meta: Meta,
    marginal: Vec<MarginalEntry>,
    copula: Option<MsCopulaModel>,
    end: End,
}

fn to_entry(asset: &str, m: &GasModel) -> MarginalEntry {
    MarginalEntry {
        asset: asset.to_string(),
        loglik: m.loglik,
        scaling: m.scaling,
        fallback_steps: m.fallback_steps,
        clamped_steps: m.clamped_steps,
        omega: m.coeffs.omega,
        alpha: m.coeffs.alpha,
        beta: m.coeffs.beta,
        tilde_path: m.tilde_path.iter().map(|t| t.to_array()).collect(),
    }
}

fn from_entry(e: MarginalEntry) -> GasModel {
    GasModel {
        coeffs: GasCoeffs {
            omega: e.omega,
            alpha: e.alpha,
            beta: e.beta,
        },
        tilde_path: e.tilde_path.into_iter().map(TildeParams::from_array).collect(),
        loglik: e.loglik,
        scaling: e.scaling,
        fallback_steps: e.fallback_steps,
        clamped_steps: e.clamped_steps,
    }
}

pub fn to_string(models: &Models) -> CliResult<String> {
    let doc = FileDoc {
        meta: Meta {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            assets: models.assets.clone(),
            window: [models.window.0.clone(), models.window.1.clone()],
        },
        marginal: models
            .assets
            .iter()
            .zip(&models.marginals)
            .map(|(a, m)| to_entry(a, m))
            .collect(),
        copula: models.copula.clone(),
        end: End { complete: true },
    };
    toml::to_string(&doc).map_err(|e| CliError::Config(format!("model serialization: {e}")))
}

pub fn save_model(path: &Path, models: &Models) -> CliResult<()> {
    flexdep::io::write_atomic(path, to_string(models)?.as_bytes())?;
    Ok(())
}

/// Top-level section headers with their byte offsets, labelled by the first
/// key component (`marginal #k` for the k-th marginal, 1-based).
fn sections(text: &str) -> Vec<(usize, String)> {
    let mut out = Vec::new();
    let mut offset = 0;
    let mut k = 0;
    for line in text.split_inclusive('\n') {
        let t = line.trim();
        if t.starts_with('[') {
            let name = t.trim_start_matches('[').trim_end_matches(']');
            let head = name.split('.').next().unwrap_or("").trim().to_string();
            let label = if head == "marginal" {
                if t.starts_with("[[") && name == "marginal" {
                    k += 1;
                }
                format!("marginal #{k}")
            } else {
                head
            };
            out.push((offset, label));
        }
        offset += line.len();
    }
    out
}

fn section_at(secs: &[(usize, String)], offset: usize) -> String {
    secs.iter()
        .take_while(|(o, _)| *o <= offset)
        .last()
        .map_or_else(|| "meta".to_string(), |(_, l)| l.clone())
}

pub fn from_str(text: &str, path: &Path) -> CliResult<Models> {
    let secs = sections(text);
    let err = |section: &str, message: String| CliError::ModelSection {
        path: path.to_path_buf(),
        section: section.to_string(),
        message,
    };

    // Version first, so an old file is refused before anything else is read.
    let meta_start = secs
        .iter()
        .find(|(_, l)| l == "meta")
        .map(|(o, _)| *o)
        .ok_or_else(|| err("meta", "missing [meta] section".into()))?;
    let meta_end = secs
        .iter()
        .map(|(o, _)| *o)
        .find(|o| *o > meta_start)
        .unwrap_or(text.len());
    let meta: toml::Table =
        toml::from_str(&text[meta_start..meta_end]).map_err(|e| err("meta", e.message().to_string()))?;
    let meta = meta
        .get("meta")
        .and_then(|m| m.as_table())
        .ok_or_else(|| err("meta", "empty section".into()))?;
    if meta.get("format").and_then(|v| v.as_str()) != Some(FORMAT_NAME) {
        return Err(err("meta", format!("not a {FORMAT_NAME} file")));
    }
    let version = meta
        .get("version")
        .and_then(|v| v.as_integer())
        .ok_or_else(|| err("meta", "missing version".into()))?;
    if version != FORMAT_VERSION {
        return Err(CliError::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
            expected: FORMAT_VERSION,
        });
    }

    if !secs.iter().any(|(_, l)| l == "end") {
        let last = secs.last().map_or("meta".to_string(), |(_, l)| l.clone());
        return Err(err(&last, "file is truncated (no [end] marker)".into()));
    }
    let doc: FileDoc = toml::from_str(text).map_err(|e| {
        let at = e.span().map_or(text.len(), |s| s.start);
        err(&section_at(&secs, at), e.message().to_string())
    })?;
    if !doc.end.complete {
        return Err(err("end", "file marked incomplete".into()));
    }
    if doc.marginal.len() != doc.meta.assets.len() {
        return Err(err(
            "meta",
            format!(
                "{} assets listed but {} marginals stored",
                doc.meta.assets.len(),
                doc.marginal.len()
            ),
        ));
    }
    let [w0, w1] = doc.meta.window;
    Ok(Models {
        assets: doc.meta.assets,
        window: (w0, w1),
        marginals: doc.marginal.into_iter().map(from_entry).collect(),
        copula: doc.copula,
    })
}

pub fn load_model(path: &Path) -> CliResult<Models> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    from_str(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use flexdep::mscopula::{DccSpec, RegimeParams, TransitionSpec};

    fn sample() -> Models {
        let gm = GasModel {
            coeffs: GasCoeffs {
                omega: [0.1, -0.01, 0.3, 1e-17],
                alpha: [0.0, 0.0769, 0.0134, 0.01],
                beta: [0.2, 0.97, 0.3, 0.9],
            },
            tilde_path: vec![TildeParams::from_array([0.1, 0.4, -0.2, 1.3]); 3],
            loglik: -1_354.740_000_000_012_3,
            scaling: Scaling::Fisher,
            fallback_steps: 2,
            clamped_steps: 0,
        };
        let r = |nu: f64| RegimeParams {
            a: vec![0.02],
            b: vec![0.95],
            xi: vec![0.001],
            nu_c: nu,
            gamma_lev: None,
        };
        let copula = MsCopulaModel {
            regimes: vec![r(6.0), r(31.123_456_789)],
            trans: TransitionSpec::persistent(2, 0.984),
            spec: DccSpec::Simple,
            leverage: false,
            n_assets: 2,
            window: 20,
            cbar: vec![1.0, 0.3, 0.3, 1.0],
            xbar: vec![0.01],
            nbar: vec![0.0; 4],
            loglik: 123.456_789_012_345_67,
            aic: -1.0,
            bic: 2.0,
            n_obs: 300,
        };
        Models {
            assets: vec!["A".into(), "B".into()],
            window: ("2000-01-07".into(), "2005-09-30".into()),
            marginals: vec![gm.clone(), gm],
            copula: Some(copula),
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let m = sample();
        let text = to_string(&m).unwrap();
        let back = from_str(&text, Path::new("m.toml")).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.marginals[0].loglik.to_bits(), m.marginals[0].loglik.to_bits());
        assert_eq!(to_string(&back).unwrap(), text);
    }

    #[test]
    fn truncation_names_the_section() {
        let text = to_string(&sample()).unwrap();
        let cut = text.find("[copula").unwrap() + 40;
        match from_str(&text[..cut], Path::new("m.toml")) {
            Err(CliError::ModelSection { section, message, .. }) => {
                assert_eq!(section, "copula");
                assert!(message.contains("truncated"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn version_mismatch_is_refused() {
        let text = to_string(&sample()).unwrap().replace("version = 1", "version = 0");
        assert!(matches!(
            from_str(&text, Path::new("m.toml")),
            Err(CliError::VersionMismatch {
                found: 0,
                expected: 1,
                ..
            })
        ));
    }

    #[test]
    fn corrupt_value_names_the_section() {
        let text = to_string(&sample()).unwrap();
        let i = text.find("[[marginal]]").unwrap();
        let j = i + text[i + 1..].find("[[marginal]]").unwrap() + 1;
        let bad = format!(
            "{}{}",
            &text[..j],
            text[j..].replacen("loglik = ", "loglik = \"x\" #", 1)
        );
        match from_str(&bad, Path::new("m.toml")) {
            Err(CliError::ModelSection { section, .. }) => assert_eq!(section, "marginal #2"),
            other => panic!("{other:?}"),
        }
    }
}
