// SPDX-License-Identifier: Apache-2.0
//! `analyze hijack`.

use std::path::PathBuf;

use clap::Args;
use pollring::analysis::{cost_row, reference_params, CostRow};
use pollring::HijackParams;
use serde::{Deserialize, Serialize};

use crate::{emit, read_json, usage, CliError, RunManifest};

#[derive(Args, Debug)]
pub struct HijackArgs {
    /// JSON list of parameter sets; the six reference rows when absent.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Apathy fraction applied to every row.
    #[arg(long)]
    pub apathy: Option<f64>,
    /// Failure probability applied to every row.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print the table only, no JSON.
    #[arg(long)]
    pub table: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HijackRow {
    pub params: HijackParams,
    #[serde(flatten)]
    pub row: CostRow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HijackReport {
    pub rows: Vec<HijackRow>,
}

pub fn hijack_rows(params: &[HijackParams]) -> Result<Vec<HijackRow>, CliError> {
    params.iter().map(|p| Ok(HijackRow { params: *p, row: cost_row(p).map_err(usage)? })).collect()
}

pub fn table(rows: &[HijackRow]) -> String {
    let mut out = format!("{:>6} {:>5} {:>6} {:>8} {:>12} {:>9}\n", "n_req", "rho", "theta", "c", "users", "baseline");
    for r in rows {
        out += &format!(
            "{:>6} {:>5} {:>6} {:>8.1} {:>12} {:>9}\n",
            r.row.n_req,
            r.row.rho,
            r.params.theta,
            r.row.bandwidth_c,
            r.row.users_needed.round() as u64,
            r.row.baseline_users
        );
    }
    out
}

pub fn run(a: &HijackArgs) -> Result<(), CliError> {
    let mut params: Vec<HijackParams> = match &a.params {
        Some(p) => read_json(p)?,
        None => reference_params(),
    };
    for p in &mut params {
        if let Some(x) = a.apathy {
            p.apathy = x;
        }
        if let Some(e) = a.epsilon {
            p.epsilon = e;
        }
    }
    let rows = hijack_rows(&params)?;
    if a.table {
        print!("{}", table(&rows));
        return Ok(());
    }
    eprint!("{}", table(&rows));
    let manifest = RunManifest::new("analyze hijack", a.params.as_deref(), None, &[&a.out]);
    emit(&manifest, &HijackReport { rows }, &a.out)
}
