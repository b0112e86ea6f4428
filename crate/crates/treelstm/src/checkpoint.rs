//! On-disk formats for trained models and training runs.
//!
//! Checkpoints are plain text, one record per parameter: name, shape, then
//! the row-major values as IEEE-754 bit patterns in hex. The hex encoding
//! makes save/load round-trips bit-exact, which the determinism contract
//! relies on.

use std::fs;
use std::path::Path;

use thiserror::Error;

use treelstm_core::tensor::{f64_from_hex, f64_to_hex, ParamStore};
use treelstm_core::training::{EpochRecord, Evaluation};

const CHECKPOINT_HEADER: &str = "treelstm-checkpoint v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("line {line}: malformed checkpoint record")]
    Parse { line: usize },
    #[error("checkpoint does not match the model: {0}")]
    CheckpointMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn checkpoint_text(store: &ParamStore) -> String {
    let mut out = String::from(CHECKPOINT_HEADER);
    out.push('\n');
    for (_, p) in store.iter() {
        let (rows, cols) = p.value.shape();
        out.push_str(&format!("{} {} {}", p.name, rows, cols));
        for &v in p.value.values() {
            out.push(' ');
            out.push_str(&f64_to_hex(v));
        }
        out.push('\n');
    }
    out
}

pub fn save_checkpoint(store: &ParamStore, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, checkpoint_text(store))?;
    Ok(())
}

/// Restores parameter values into a store built from the same config. Every
/// record must match the store's parameter of the same position by name and
/// shape.
pub fn apply_checkpoint_text(store: &mut ParamStore, text: &str) -> Result<(), CheckpointError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == CHECKPOINT_HEADER => {}
        _ => return Err(CheckpointError::CheckpointMismatch("missing header".into())),
    }
    let ids: Vec<_> = store.ids().collect();
    let mut next = 0usize;
    for (i, raw) in lines {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let mut fields = raw.split_whitespace();
        let name = fields.next().ok_or(CheckpointError::Parse { line })?;
        let rows: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or(CheckpointError::Parse { line })?;
        let cols: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or(CheckpointError::Parse { line })?;
        let values: Vec<f64> = fields
            .map(f64_from_hex)
            .collect::<Option<_>>()
            .ok_or(CheckpointError::Parse { line })?;
        if values.len() != rows * cols {
            return Err(CheckpointError::Parse { line });
        }
        let Some(&id) = ids.get(next) else {
            return Err(CheckpointError::CheckpointMismatch(format!(
                "extra parameter '{name}'"
            )));
        };
        next += 1;
        let param = store.get_mut(id);
        if param.name != name {
            return Err(CheckpointError::CheckpointMismatch(format!(
                "expected parameter '{}', found '{}'",
                param.name, name
            )));
        }
        if param.value.shape() != (rows, cols) {
            return Err(CheckpointError::CheckpointMismatch(format!(
                "parameter '{}' has shape {:?}, checkpoint has ({rows}, {cols})",
                name,
                param.value.shape()
            )));
        }
        param.value.values_mut().copy_from_slice(&values);
    }
    if next != ids.len() {
        return Err(CheckpointError::CheckpointMismatch(format!(
            "checkpoint has {} of {} parameters",
            next,
            ids.len()
        )));
    }
    Ok(())
}

pub fn load_checkpoint(store: &mut ParamStore, path: &Path) -> Result<(), CheckpointError> {
    apply_checkpoint_text(store, &fs::read_to_string(path)?)
}

/// One line per epoch: epoch, training loss, early-stop metric, accuracy,
/// and compression rate when the task has one. Tab-separated.
pub fn history_text(history: &[EpochRecord]) -> String {
    let mut out = String::new();
    for r in history {
        out.push_str(&format!("{}\t{}\t{}\t{}", r.epoch, r.train_loss, r.val_metric, r.val_accuracy));
        if let Some(c) = r.val_compression {
            out.push_str(&format!("\t{c}"));
        }
        out.push('\n');
    }
    out
}

pub fn save_history(history: &[EpochRecord], path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, history_text(history))?;
    Ok(())
}

/// TSV metric report over runs: header, one row per run, and a mean row
/// when there is more than one run.
pub fn report_text(rows: &[(String, Evaluation)]) -> String {
    let prune = rows.iter().any(|(_, e)| e.compression.is_some());
    let mut out = String::from(if prune {
        "run\taccuracy\tcompression\tt\n"
    } else {
        "run\taccuracy\n"
    });
    for (name, e) in rows {
        if prune {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                name,
                e.accuracy,
                e.compression.unwrap_or(0.0),
                e.hybrid.unwrap_or(0.0)
            ));
        } else {
            out.push_str(&format!("{}\t{}\n", name, e.accuracy));
        }
    }
    if rows.len() > 1 {
        let n = rows.len() as f64;
        let mean = |f: &dyn Fn(&Evaluation) -> f64| rows.iter().map(|(_, e)| f(e)).sum::<f64>() / n;
        if prune {
            out.push_str(&format!(
                "mean\t{}\t{}\t{}\n",
                mean(&|e| e.accuracy),
                mean(&|e| e.compression.unwrap_or(0.0)),
                mean(&|e| e.hybrid.unwrap_or(0.0))
            ));
        } else {
            out.push_str(&format!("mean\t{}\n", mean(&|e| e.accuracy)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use treelstm_core::tensor::{ParamKind, Tensor};

    fn store_with(values: &[(&str, usize, usize, Vec<f64>)]) -> ParamStore {
        let mut s = ParamStore::default();
        for (name, r, c, data) in values {
            s.add(*name, ParamKind::Weight, Tensor::new(*r, *c, data.clone()).unwrap());
        }
        s
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<f64> = (0..12).map(|_| rng.random_range(-2.0..2.0)).collect();
        let src = store_with(&[("a.W", 3, 4, data), ("a.b", 2, 1, vec![0.1, -1.0e-300])]);
        let text = checkpoint_text(&src);
        let mut dst =
            store_with(&[("a.W", 3, 4, vec![0.0; 12]), ("a.b", 2, 1, vec![0.0, 0.0])]);
        apply_checkpoint_text(&mut dst, &text).unwrap();
        for (a, b) in src.iter().zip(dst.iter()) {
            for (x, y) in a.1.value.values().iter().zip(b.1.value.values()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        // serializing the restored store reproduces the bytes
        assert_eq!(checkpoint_text(&dst), text);
    }

    #[test]
    fn mismatches_are_rejected() {
        let src = store_with(&[("a.W", 2, 2, vec![1.0; 4])]);
        let text = checkpoint_text(&src);

        let mut wrong_name = store_with(&[("b.W", 2, 2, vec![0.0; 4])]);
        assert!(matches!(
            apply_checkpoint_text(&mut wrong_name, &text),
            Err(CheckpointError::CheckpointMismatch(_))
        ));

        let mut wrong_shape = store_with(&[("a.W", 4, 1, vec![0.0; 4])]);
        assert!(matches!(
            apply_checkpoint_text(&mut wrong_shape, &text),
            Err(CheckpointError::CheckpointMismatch(_))
        ));

        let mut too_many = store_with(&[("a.W", 2, 2, vec![0.0; 4]), ("a.b", 1, 1, vec![0.0])]);
        assert!(matches!(
            apply_checkpoint_text(&mut too_many, &text),
            Err(CheckpointError::CheckpointMismatch(_))
        ));

        let mut ok = store_with(&[("a.W", 2, 2, vec![0.0; 4])]);
        assert!(matches!(
            apply_checkpoint_text(&mut ok, "garbage"),
            Err(CheckpointError::CheckpointMismatch(_))
        ));
        assert!(matches!(
            apply_checkpoint_text(&mut ok, "treelstm-checkpoint v1\na.W 2 2 zz zz zz zz\n"),
            Err(CheckpointError::Parse { line: 2 })
        ));
    }

    #[test]
    fn history_lines() {
        let h = vec![
            EpochRecord {
                epoch: 1,
                train_loss: 0.5,
                val_metric: 0.8,
                val_accuracy: 0.8,
                val_compression: None,
            },
            EpochRecord {
                epoch: 2,
                train_loss: 0.25,
                val_metric: 0.9,
                val_accuracy: 0.9,
                val_compression: Some(0.7),
            },
        ];
        let text = history_text(&h);
        assert_eq!(text, "1\t0.5\t0.8\t0.8\n2\t0.25\t0.9\t0.9\t0.7\n");
    }

    #[test]
    fn report_mean_row() {
        let e = |a: f64| Evaluation { metric: a, accuracy: a, compression: None, hybrid: None };
        let rows = vec![("run1".to_string(), e(0.5)), ("run2".to_string(), e(0.7))];
        let text = report_text(&rows);
        assert_eq!(text, "run\taccuracy\nrun1\t0.5\nrun2\t0.7\nmean\t0.6\n");

        let p = |a: f64| Evaluation {
            metric: a,
            accuracy: a,
            compression: Some(0.5),
            hybrid: Some(a * a / 0.5),
        };
        let text = report_text(&[("run1".to_string(), p(1.0))]);
        assert_eq!(text, "run\taccuracy\tcompression\tt\nrun1\t1\t0.5\t2\n");
    }
}
