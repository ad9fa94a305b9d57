//! Tabular reports. Each `name.csv` is paired with `name.json` holding the
//! resolved-config hash, the column list and a summary.

use std::path::Path;

use serde_json::{json, Value};
use txrl_core::eval::{ActionMarginals, HomogeneityVariant, QMortalityCurve};
use txrl_core::{compare_policies, BootstrapEnsemble};
use txrl_core::eval::PolicyComparison;

use crate::io::{write_bytes, write_json};

pub struct Table {
    pub name: &'static str,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &'static str, header: &[&'static str]) -> Self {
        Table {
            name,
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write(&self, out: &Path, config_hash: &str, summary: Value) -> anyhow::Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("csv buffer: {e}"))?;
        write_bytes(&out.join(format!("{}.csv", self.name)), &bytes)?;
        write_sidecar(out, self.name, config_hash, &self.header, self.rows.len(), summary)
    }
}

pub fn write_sidecar(
    out: &Path,
    name: &str,
    config_hash: &str,
    columns: &[&str],
    rows: usize,
    summary: Value,
) -> anyhow::Result<()> {
    write_json(
        &out.join(format!("{name}.json")),
        &json!({
            "file": format!("{name}.csv"),
            "config_sha256": config_hash,
            "columns": columns,
            "rows": rows,
            "summary": summary,
        }),
    )
}

pub fn num(x: f64) -> String {
    x.to_string()
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn policy_comparison(ens: &BootstrapEnsemble) -> anyhow::Result<(PolicyComparison, Table)> {
    let cmp = compare_policies(ens)?;
    let mut t = Table::new("policy_values", &["policy", "value", "ci_low", "ci_high", "n_replicates"]);
    for p in &cmp.policies {
        t.push(vec![
            p.policy.clone(),
            num(p.value),
            num(p.ci_low),
            num(p.ci_high),
            p.replicate_values.len().to_string(),
        ]);
    }
    Ok((cmp, t))
}

pub fn qvalue_mortality(curve: &QMortalityCurve) -> Table {
    let mut t = Table::new(
        "qvalue_mortality",
        &["bin", "q_low", "q_high", "q_center", "n", "deaths", "mortality", "ci_low", "ci_high"],
    );
    for (i, b) in curve.bins.iter().enumerate() {
        t.push(vec![
            i.to_string(),
            num(b.lo),
            num(b.hi),
            num(b.center),
            b.n.to_string(),
            b.deaths.to_string(),
            opt(b.mortality),
            opt(b.ci_low),
            opt(b.ci_high),
        ]);
    }
    t
}

/// Long-format marginals: one row per (source, label, axis, bin).
pub fn action_marginals(name: &'static str, sources: &[(&str, &[ActionMarginals])]) -> Table {
    let mut t = Table::new(name, &["source", "label", "observations", "axis", "bin", "mass", "fraction"]);
    for (source, marginals) in sources {
        for m in marginals.iter() {
            let axes: [(&str, &[f64]); 2] = [("fluid", &m.fluid), ("vaso", &m.vaso)];
            for (axis, mass) in axes {
                for (i, &v) in mass.iter().enumerate() {
                    let frac = if m.observations > 0 { v / m.observations as f64 } else { 0.0 };
                    t.push(vec![
                        source.to_string(),
                        m.label.as_str().to_string(),
                        m.observations.to_string(),
                        axis.to_string(),
                        (i + 1).to_string(),
                        num(v),
                        num(frac),
                    ]);
                }
            }
        }
    }
    t
}

/// Total variation distance between two sets of per-label marginals, per
/// label and axis.
pub fn marginal_shift(a: &[ActionMarginals], b: &[ActionMarginals]) -> Value {
    let tv = |x: &[f64], nx: usize, y: &[f64], ny: usize| -> Option<f64> {
        (nx > 0 && ny > 0).then(|| {
            0.5 * x
                .iter()
                .zip(y)
                .map(|(p, q)| (p / nx as f64 - q / ny as f64).abs())
                .sum::<f64>()
        })
    };
    let rows: Vec<Value> = a
        .iter()
        .zip(b)
        .map(|(ma, mb)| {
            json!({
                "label": ma.label.as_str(),
                "fluid_tv": tv(&ma.fluid, ma.observations, &mb.fluid, mb.observations),
                "vaso_tv": tv(&ma.vaso, ma.observations, &mb.vaso, mb.observations),
            })
        })
        .collect();
    Value::Array(rows)
}

pub fn homogeneity(variants: &[HomogeneityVariant]) -> (Table, Table) {
    let mut top = Table::new(
        "homogeneity",
        &[
            "variant",
            "rank",
            "state",
            "n_shock",
            "n_non_shock",
            "shock_fraction",
            "median_vis_shock",
            "median_vis_non_shock",
            "gap",
        ],
    );
    let mut occ = Table::new(
        "homogeneity_occupancy",
        &["variant", "state", "p_state_given_shock", "p_state_given_non_shock"],
    );
    for v in variants {
        for (rank, s) in v.top_states.iter().enumerate() {
            top.push(vec![
                v.name.clone(),
                (rank + 1).to_string(),
                s.state.to_string(),
                s.n_shock.to_string(),
                s.n_non_shock.to_string(),
                num(s.shock_fraction),
                opt(s.median_vis_shock),
                opt(s.median_vis_non_shock),
                num(s.gap),
            ]);
        }
        for s in 0..v.n_states {
            let get = |o: &Option<Vec<f64>>| opt(o.as_ref().map(|p| p[s]));
            occ.push(vec![
                v.name.clone(),
                s.to_string(),
                get(&v.occupancy_shock),
                get(&v.occupancy_non_shock),
            ]);
        }
    }
    (top, occ)
}

pub fn homogeneity_summary(variants: &[HomogeneityVariant]) -> Value {
    Value::Array(
        variants
            .iter()
            .map(|v| {
                json!({
                    "variant": v.name,
                    "n_states": v.n_states,
                    "median_gap": v.median_gap,
                    "notes": v.notes,
                })
            })
            .collect(),
    )
}
