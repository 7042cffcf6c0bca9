use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One row of the per-step loss log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    #[serde(rename = "L_adv_G")]
    pub adv_g: f64,
    #[serde(rename = "L_adv_D")]
    pub adv_d: f64,
    #[serde(rename = "L_direct")]
    pub direct: f64,
    #[serde(rename = "L_cons")]
    pub cons: f64,
    #[serde(rename = "L_reg")]
    pub reg: f64,
    #[serde(rename = "L_total")]
    pub total: f64,
}

pub const LOSS_COLUMNS: [&str; 7] = ["step", "L_adv_G", "L_adv_D", "L_direct", "L_cons", "L_reg", "L_total"];

pub fn write_loss_csv(path: &Path, records: &[LossRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    if records.is_empty() {
        w.write_record(LOSS_COLUMNS)?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_loss_csv(path: &Path) -> Result<Vec<LossRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
