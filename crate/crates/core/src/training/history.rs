use std::io::{Read, Write};

use crate::error::Result;

/// One row of the per-epoch training history.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    /// η used during this epoch.
    pub learning_rate: f32,
}

pub fn write_history_csv<W: Write>(history: &[EpochRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "train_loss", "val_loss", "val_accuracy", "learning_rate"])?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            format!("{:.8}", r.train_loss),
            format!("{:.8}", r.val_loss),
            format!("{:.6}", r.val_accuracy),
            format!("{}", r.learning_rate),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_history_csv<R: Read>(input: R) -> Result<Vec<EpochRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or_default();
        let bad = |what: &str| crate::Error::Malformed(format!("history column {what}"));
        out.push(EpochRecord {
            epoch: field(0).parse().map_err(|_| bad("epoch"))?,
            train_loss: field(1).parse().map_err(|_| bad("train_loss"))?,
            val_loss: field(2).parse().map_err(|_| bad("val_loss"))?,
            val_accuracy: field(3).parse().map_err(|_| bad("val_accuracy"))?,
            learning_rate: field(4).parse().map_err(|_| bad("learning_rate"))?,
        });
    }
    Ok(out)
}
