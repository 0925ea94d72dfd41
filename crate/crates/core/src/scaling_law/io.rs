use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LossObservation, ScalingLawParams};
use crate::delimited;
use crate::error::{Error, Result};

/// Reads `(run_id, n_params, weight, domain_tag, loss)` rows. Tab-separated
/// when the file ends in `.tsv`, comma-separated otherwise.
pub fn read_observations(path: &Path) -> Result<Vec<LossObservation>> {
    let mut reader = delimited::reader(path)?;
    let mut out = Vec::new();
    for (line, row) in reader.deserialize::<LossObservation>().enumerate() {
        let obs = row.map_err(|e| {
            Error::parse(format!("{} row {}", path.display(), line + 1), e)
        })?;
        obs.validate()?;
        out.push(obs);
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LawFile {
    schema: String,
    law: BTreeMap<String, LawEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LawEntry {
    alpha: f64,
    beta: f64,
    l_inf: f64,
    c1: f64,
    c2: f64,
    c3: f64,
}

pub const LAW_SCHEMA: &str = "polyplan.scaling-law/1";

/// Renders laws as a TOML document, one `[law.<domain>]` table each. Floats
/// use the shortest representation that parses back to the same bits.
pub fn render_laws(laws: &BTreeMap<String, ScalingLawParams>) -> String {
    let file = LawFile {
        schema: LAW_SCHEMA.to_string(),
        law: laws
            .iter()
            .map(|(d, p)| {
                (
                    d.clone(),
                    LawEntry {
                        alpha: p.alpha,
                        beta: p.beta,
                        l_inf: p.l_inf,
                        c1: p.c1,
                        c2: p.c2,
                        c3: p.c3,
                    },
                )
            })
            .collect(),
    };
    toml::to_string(&file).expect("law table serializes")
}

pub fn parse_laws(text: &str) -> Result<BTreeMap<String, ScalingLawParams>> {
    let file: LawFile = toml::from_str(text).map_err(|e| Error::parse("scaling-law file", e))?;
    if file.schema != LAW_SCHEMA {
        return Err(Error::validation(
            "schema",
            format!("expected `{LAW_SCHEMA}`, found `{}`", file.schema),
        ));
    }
    file.law
        .into_iter()
        .map(|(domain, e)| {
            let params = ScalingLawParams {
                alpha: e.alpha,
                beta: e.beta,
                l_inf: e.l_inf,
                c1: e.c1,
                c2: e.c2,
                c3: e.c3,
                domain_tag: domain.clone(),
            };
            params.validate().map_err(|err| match err {
                Error::Validation { key, message } => {
                    Error::validation(format!("law.{domain}.{key}"), message)
                }
                other => other,
            })?;
            Ok((domain, params))
        })
        .collect()
}

pub fn write_laws(path: &Path, laws: &BTreeMap<String, ScalingLawParams>) -> Result<()> {
    fs::write(path, render_laws(laws)).map_err(|e| Error::io(path, e))
}

pub fn read_laws(path: &Path) -> Result<BTreeMap<String, ScalingLawParams>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_laws(&text)
}
