use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// One evaluation outcome as written by the `eval-*` commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    /// `zeroshot`, `fewshot` or `linear`.
    pub protocol: String,
    pub dataset: String,
    pub config_hash: String,
    pub metrics: BTreeMap<String, f64>,
    pub ci: Option<f64>,
}

impl EvalReport {
    /// The headline accuracy of the protocol, as a percentage.
    pub fn headline(&self) -> Option<f64> {
        let key = match self.protocol.as_str() {
            "zeroshot" | "fewshot" => "accuracy",
            "linear" => "test_acc",
            _ => return None,
        };
        self.metrics.get(key).map(|v| 100.0 * v)
    }
}

type Cell = Option<(f64, Option<f64>)>;

/// Fixed-width table with one row per (dataset, config) and ZS / FS / LP columns.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut rows: BTreeMap<(String, String), [Cell; 3]> = BTreeMap::new();
    for r in reports {
        let col = match r.protocol.as_str() {
            "zeroshot" => 0,
            "fewshot" => 1,
            "linear" => 2,
            _ => continue,
        };
        if let Some(v) = r.headline() {
            rows.entry((r.dataset.clone(), r.config_hash.clone())).or_default()[col] = Some((v, r.ci.map(|c| 100.0 * c)));
        }
    }
    let mut out = String::new();
    let _ = writeln!(out, "{:<20} {:<16} {:>12} {:>12} {:>12}", "dataset", "config", "ZS", "FS", "LP");
    for ((dataset, hash), cols) in rows {
        let _ = write!(out, "{dataset:<20} {hash:<16}");
        for c in cols {
            let cell = match c {
                Some((v, Some(ci))) => format!("{v:.1}±{ci:.1}"),
                Some((v, None)) => format!("{v:.1}"),
                None => "-".to_string(),
            };
            let _ = write!(out, " {cell:>12}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(protocol: &str, key: &str, v: f64, ci: Option<f64>) -> EvalReport {
        EvalReport {
            protocol: protocol.into(),
            dataset: "synthetic".into(),
            config_hash: "00ff".into(),
            metrics: BTreeMap::from([(key.to_string(), v)]),
            ci,
        }
    }

    #[test]
    fn table_layout() {
        let t = render_table(&[
            report("zeroshot", "accuracy", 0.8125, None),
            report("fewshot", "accuracy", 0.9, Some(0.004)),
        ]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[1].starts_with("synthetic"));
        assert!(lines[1].contains("81.2"));
        assert!(lines[1].contains("90.0±0.4"));
        assert!(lines[1].trim_end().ends_with('-'));
    }
}
