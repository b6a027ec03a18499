// SPDX-License-Identifier: Apache-2.0
//! `state inspect`.

use std::path::PathBuf;

use clap::Args;
use pollring::ledger::{gs_verify, GsKey, GsValue, MerkleProof, StateSnapshot};
use serde::{Deserialize, Serialize};

use crate::{emit, read_json, usage, CliError, RunManifest};

#[derive(Args, Debug)]
pub struct InspectArgs {
    /// Snapshot written by `sim run --state-out`.
    #[arg(long)]
    pub snapshot: PathBuf,
    /// Key as `P:<pid hex>`, `I:<pid hex>`, `V:<pid hex>:<k>`,
    /// `T:<pid hex>:<nu hex>`, `W:<topic>`, `U:<topic>` or `B:<block>:<topic>`.
    #[arg(long)]
    pub key: String,
    /// Trusted root in hex; the snapshot's recorded root when absent.
    #[arg(long)]
    pub root: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InspectReport {
    pub key: String,
    pub kind: String,
    pub height: u64,
    pub present: bool,
    /// Decoded value; `null` when absent.
    pub value: serde_json::Value,
    pub proof: MerkleProof,
    #[serde(with = "hex::serde")]
    pub trusted_root: Vec<u8>,
    #[serde(with = "hex::serde")]
    pub rebuilt_root: Vec<u8>,
    /// The proof checks against the trusted root.
    pub proof_valid: bool,
}

pub fn inspect(snap: &StateSnapshot, key: &GsKey, trusted_root: Option<Vec<u8>>) -> Result<InspectReport, CliError> {
    let mut store = snap.to_store().map_err(usage)?;
    let rebuilt_root = store.root();
    let trusted_root = trusted_root.unwrap_or_else(|| snap.root.clone());
    let kb = key.to_bytes();
    let (value, proof) = store.read(&kb);
    let proof_valid = gs_verify(&trusted_root, &kb, value.as_deref(), &proof);
    let decoded = match &value {
        Some(v) => GsValue::decode(key, v).map_err(usage)?.to_json(),
        None => serde_json::Value::Null,
    };
    Ok(InspectReport {
        key: key.to_string(),
        kind: key.kind_name().to_string(),
        height: snap.height,
        present: value.is_some(),
        value: decoded,
        proof,
        trusted_root,
        rebuilt_root,
        proof_valid,
    })
}

pub fn run(a: &InspectArgs) -> Result<(), CliError> {
    let snap: StateSnapshot = read_json(&a.snapshot)?;
    let key: GsKey = a.key.parse().map_err(usage)?;
    let root = a.root.as_deref().map(hex::decode).transpose().map_err(|e| usage(format!("--root: {e}")))?;
    let report = inspect(&snap, &key, root)?;
    let manifest = RunManifest::new("state inspect", Some(&a.snapshot), None, &[&a.out]);
    emit(&manifest, &report, &a.out)?;
    match (report.proof_valid, report.present) {
        (true, true) => {
            eprintln!("{} present, proof verified", report.key);
            Ok(())
        }
        (true, false) => {
            eprintln!("{} absent, absence proof verified", report.key);
            Ok(())
        }
        (false, _) => Err(CliError::Violation(format!(
            "proof for {} rejected against root {}",
            report.key,
            hex::encode(&report.trusted_root)
        ))),
    }
}
