use std::io::Write;

use super::HarnessError;
use crate::losses::LossSpec;

/// Grid points `t_min + i * step` up to `t_max`, inclusive within rounding.
pub fn grid(t_min: f64, t_max: f64, step: f64) -> Result<Vec<f64>, HarnessError> {
    if !(t_min.is_finite() && t_max.is_finite() && step.is_finite()) || t_min >= t_max || step <= 0.0 {
        return Err(HarnessError::Config(format!("invalid grid [{t_min}, {t_max}] step {step}")));
    }
    let n = ((t_max - t_min) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| t_min + i as f64 * step).collect())
}

/// Per-component loss values `l(t)` for each spec on the grid, one row per
/// grid point: `t, spec_1, spec_2, ...`.
pub fn loss_figure_rows(specs: &[LossSpec], t_min: f64, t_max: f64, step: f64) -> Result<Vec<Vec<f64>>, HarnessError> {
    Ok(grid(t_min, t_max, step)?
        .into_iter()
        .map(|t| std::iter::once(t).chain(specs.iter().map(|s| s.component(t))).collect())
        .collect())
}

/// Writes the loss-figure table as CSV with header `t,<label>...`.
pub fn emit_loss_figure<W: Write>(
    specs: &[LossSpec],
    t_min: f64,
    t_max: f64,
    step: f64,
    out: W,
) -> Result<(), HarnessError> {
    let rows = loss_figure_rows(specs, t_min, t_max, step)?;
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<String> = std::iter::once("t".to_string()).chain(specs.iter().map(LossSpec::label)).collect();
    w.write_record(&header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| super::fmt_f64(*v)))?;
    }
    w.flush().map_err(|e| HarnessError::Io(e.to_string()))?;
    Ok(())
}

/// Parses `--specs`: inline JSON (an array or a single spec) or a path to a
/// file holding it.
pub fn parse_specs(arg: &str) -> Result<Vec<LossSpec>, HarnessError> {
    let trimmed = arg.trim_start();
    let text = if trimmed.starts_with('[') || trimmed.starts_with('{') {
        arg.to_string()
    } else {
        std::fs::read_to_string(arg).map_err(|e| HarnessError::io(std::path::Path::new(arg), e))?
    };
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("loss specs: {e}")))?;
    let specs =
        if value.is_array() { serde_json::from_value(value) } else { serde_json::from_value(value).map(|s| vec![s]) };
    specs.map_err(|e| HarnessError::Config(format!("loss specs: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_endpoints() {
        let g = grid(-4.0, 4.0, 0.01).unwrap();
        assert_eq!(g.len(), 801);
        assert_eq!(g[0], -4.0);
        assert!((g[800] - 4.0).abs() < 1e-12);
        assert!(grid(1.0, 1.0, 0.1).is_err());
        assert!(grid(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn figure_values() {
        let specs = [LossSpec::log_cosh(1.0).unwrap(), LossSpec::lp(2).unwrap(), LossSpec::pseudo_huber(1.0).unwrap()];
        let rows = loss_figure_rows(&specs, -4.0, 4.0, 1.0).unwrap();
        let zero = &rows[4];
        assert_eq!(zero[0], 0.0);
        assert_eq!(zero[1], 0.0);
        let four = &rows[8];
        assert_eq!(four[2], 8.0);
        assert!((four[3] - 17f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn csv_output_and_spec_parsing() {
        let specs = parse_specs(r#"[{"kind": "lp", "p": 2}, {"kind": "log_cosh", "alpha": 1.0}]"#).unwrap();
        assert_eq!(specs.len(), 2);
        assert_eq!(parse_specs(r#"{"kind": "square"}"#).unwrap(), vec![LossSpec::Square]);
        assert!(parse_specs(r#"[{"kind": "lp", "p": 3}]"#).is_err());

        let mut buf = Vec::new();
        emit_loss_figure(&specs, -1.0, 1.0, 0.5, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,lp_p2,log_cosh_a1");
        assert_eq!(text.lines().count(), 6);
    }
}
