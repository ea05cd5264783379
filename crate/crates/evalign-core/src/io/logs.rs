//! Tab-separated training logs and metric report tables.
//!
//! Pretraining logs carry exactly the columns
//! `step  L  L_ct  L_zs  L_kl  heldout_acc`; fine-tuning logs carry
//! `step  L_pred  train_acc`. Cells without a value that step are left
//! empty. Metric reports are plain TSV tables with a header row.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::loss::LossBreakdown;
use crate::train::LogRecord;

pub const PRETRAIN_LOG_COLUMNS: [&str; 6] = ["step", "L", "L_ct", "L_zs", "L_kl", "heldout_acc"];
pub const FINETUNE_LOG_COLUMNS: [&str; 3] = ["step", "L_pred", "train_acc"];

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.17e}")).unwrap_or_default()
}

pub fn write_pretrain_log(records: &[LogRecord], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", PRETRAIN_LOG_COLUMNS.join("\t"))?;
    for r in records {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.step,
            fmt_opt(r.loss.map(|b| b.total)),
            fmt_opt(r.loss.map(|b| b.ct)),
            fmt_opt(r.loss.map(|b| b.zs)),
            fmt_opt(r.loss.map(|b| b.kl)),
            fmt_opt(r.acc),
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pretrain_log(path: &Path) -> Result<Vec<LogRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty log file".into()))??;
    if header.split('\t').ne(PRETRAIN_LOG_COLUMNS) {
        return Err(Error::Format(format!("unexpected log columns: {header:?}")));
    }
    let mut records = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != PRETRAIN_LOG_COLUMNS.len() {
            return Err(Error::Format(format!(
                "line {}: expected {} columns, got {}",
                lineno + 2,
                PRETRAIN_LOG_COLUMNS.len(),
                cells.len()
            )));
        }
        let parse_opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse::<f64>()
                    .map(Some)
                    .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 2)))
            }
        };
        let step = cells[0]
            .parse::<u64>()
            .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 2)))?;
        let total = parse_opt(cells[1])?;
        let ct = parse_opt(cells[2])?;
        let zs = parse_opt(cells[3])?;
        let kl = parse_opt(cells[4])?;
        let acc = parse_opt(cells[5])?;
        let loss = match (total, ct, zs, kl) {
            (Some(total), Some(ct), Some(zs), Some(kl)) => {
                Some(LossBreakdown { total, ct, zs, kl })
            }
            (None, None, None, None) => None,
            _ => {
                return Err(Error::Format(format!(
                    "line {}: partially filled loss columns",
                    lineno + 2
                )))
            }
        };
        records.push(LogRecord { step, loss, pred: None, acc });
    }
    Ok(records)
}

pub fn write_finetune_log(records: &[LogRecord], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", FINETUNE_LOG_COLUMNS.join("\t"))?;
    for r in records {
        writeln!(w, "{}\t{}\t{}", r.step, fmt_opt(r.pred), fmt_opt(r.acc))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a TSV metric table: a header row then one row per record.
pub fn write_table(headers: &[&str], rows: &[Vec<String>], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", headers.join("\t"))?;
    for row in rows {
        if row.len() != headers.len() {
            return Err(Error::Data(format!(
                "table row has {} cells for {} headers",
                row.len(),
                headers.len()
            )));
        }
        writeln!(w, "{}", row.join("\t"))?;
    }
    w.flush()?;
    Ok(())
}

/// A small self-contained matplotlib script that plots the curve files
/// written next to it. Emitted alongside logs so results can be visualized
/// without adding plotting dependencies here.
pub fn write_plot_script(log_names: &[&str], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "#!/usr/bin/env python3")?;
    writeln!(w, "# Plots the TSV training logs in this directory.")?;
    writeln!(w, "import csv, os")?;
    writeln!(w, "import matplotlib")?;
    writeln!(w, "matplotlib.use('Agg')")?;
    writeln!(w, "import matplotlib.pyplot as plt")?;
    writeln!(w)?;
    writeln!(w, "here = os.path.dirname(os.path.abspath(__file__))")?;
    writeln!(w, "logs = {log_names:?}")?;
    writeln!(w, "fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(11, 4))")?;
    writeln!(w, "for name in logs:")?;
    writeln!(w, "    path = os.path.join(here, name)")?;
    writeln!(w, "    if not os.path.exists(path):")?;
    writeln!(w, "        continue")?;
    writeln!(w, "    steps, losses, accs = [], [], []")?;
    writeln!(w, "    with open(path) as fh:")?;
    writeln!(w, "        for row in csv.DictReader(fh, delimiter='\\t'):")?;
    writeln!(w, "            loss_col = row.get('L') or row.get('L_pred')")?;
    writeln!(w, "            acc_col = row.get('heldout_acc') or row.get('train_acc')")?;
    writeln!(w, "            if loss_col:")?;
    writeln!(w, "                steps.append(int(row['step'])); losses.append(float(loss_col))")?;
    writeln!(w, "            if acc_col:")?;
    writeln!(w, "                accs.append((int(row['step']), float(acc_col)))")?;
    writeln!(w, "    ax_loss.plot(steps, losses, label=name)")?;
    writeln!(w, "    if accs:")?;
    writeln!(w, "        ax_acc.plot([s for s, _ in accs], [a for _, a in accs], label=name)")?;
    writeln!(w, "ax_loss.set_xlabel('step'); ax_loss.set_ylabel('loss'); ax_loss.legend()")?;
    writeln!(w, "ax_acc.set_xlabel('step'); ax_acc.set_ylabel('accuracy'); ax_acc.legend()")?;
    writeln!(w, "out = os.path.join(here, 'curves.png')")?;
    writeln!(w, "fig.tight_layout(); fig.savefig(out, dpi=120)")?;
    writeln!(w, "print(out)")?;
    w.flush()?;
    Ok(())
}
