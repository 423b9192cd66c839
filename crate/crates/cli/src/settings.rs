//! TOML pipeline config with `section.key=value` overrides.

use std::path::Path;

use toml::{Table, Value};
use trajaudit::config::PipelineConfig;

use crate::error::CliError;

fn parse_value(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    match doc.parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

/// Sets `a.b.c = value` in `table`, creating intermediate tables.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::usage(format!("--set expects key=value, got {assignment:?}")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::usage(format!("--set: bad key {key:?}")));
    }
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => return Err(CliError::usage(format!("--set: {p:?} is not a section"))),
        };
    }
    cur.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<PipelineConfig, CliError> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            text.parse::<Table>()
                .map_err(|e| CliError::schema(format!("{}: {e}", p.display())))?
        }
        None => Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let cfg: PipelineConfig = Value::Table(table)
        .try_into()
        .map_err(|e| CliError::usage(format!("invalid config: {e}")))?;
    let cfg = cfg.normalized();
    cfg.validate().map_err(|e| CliError::usage(format!("invalid config: {e}")))?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_nest_and_type() {
        let mut t = Table::new();
        apply_override(&mut t, "tracker.gate_radius=2.5").unwrap();
        apply_override(&mut t, "miner.min_track_length = 4").unwrap();
        apply_override(&mut t, "tracker.gate_mode.mode=center_distance").unwrap();
        let cfg: PipelineConfig = Value::Table(t).try_into().unwrap();
        assert_eq!(cfg.tracker.gate_radius, 2.5);
        assert_eq!(cfg.miner.min_track_length, 4);
    }

    #[test]
    fn dt_propagates() {
        let cfg = load(None, &["dt=0.05".into()]).unwrap();
        assert_eq!(cfg.stabilizer.dt, 0.05);
        assert_eq!(cfg.miner.dt, 0.05);
        assert_eq!(cfg.eval.dt, 0.05);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = load(None, &["tracker.gate_radiuss=2".into()]).unwrap_err();
        assert_eq!(err.kind, crate::error::Kind::Usage);
        assert!(load(None, &["novalue".into()]).is_err());
    }
}
