//! Tabulated figure data: optimal policy against a state probability, the
//! max-envelope `μ* = max(constants, μ)` and density tables.

use crate::dists::Density1D;
use crate::model::{argmax, DecisionModel, ModelError};

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    /// Comma-separated with a header row and LF line endings.
    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn grid(lo: f64, hi: f64, points: usize) -> impl Iterator<Item = f64> {
    let last = points.max(2) - 1;
    (0..=last).map(move |i| {
        if i == last {
            hi
        } else {
            lo + (hi - lo) * i as f64 / last as f64
        }
    })
}

/// Rows `(pi, action, value, kind)` for the probability of `state` on a
/// uniform grid plus one `breakpoint` row per policy switch, sorted by `pi`.
pub fn policy_vs_pi(model: &DecisionModel, state: usize, points: usize) -> Result<Table, ModelError> {
    let regions = model.policy_regions(state)?;
    let other = 1 - state;
    let row_at = |pi: f64, kind: &str| {
        let values: Vec<f64> = model
            .utilities()
            .iter()
            .map(|u| pi * u[state] + (1.0 - pi) * u[other])
            .collect();
        let k = argmax(&values);
        (pi, vec![num(pi), model.actions()[k].clone(), num(values[k]), kind.to_string()])
    };
    let mut rows: Vec<(f64, Vec<String>)> = grid(0.0, 1.0, points).map(|p| row_at(p, "grid")).collect();
    rows.extend(regions.windows(2).map(|w| row_at(w[0].hi, "breakpoint")));
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(Table {
        header: vec!["pi", "action", "value", "kind"],
        rows: rows.into_iter().map(|r| r.1).collect(),
    })
}

/// Rows `(mu, mustar, kind)` over `[lo, hi]`, with a `kink` row where `μ`
/// overtakes the largest constant.
pub fn mustar_vs_mu(constants: &[f64], lo: f64, hi: f64, points: usize) -> Table {
    let top = constants.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let row = |mu: f64, kind: &str| (mu, vec![num(mu), num(top.max(mu)), kind.to_string()]);
    let mut rows: Vec<(f64, Vec<String>)> = grid(lo, hi, points).map(|m| row(m, "grid")).collect();
    if top.is_finite() && top > lo && top < hi {
        rows.push(row(top, "kink"));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    Table {
        header: vec!["mu", "mustar", "kind"],
        rows: rows.into_iter().map(|r| r.1).collect(),
    }
}

/// Rows `(t, pdf, cdf, kind)` over the support, plus one `atom` row per point
/// mass with the mass in the `pdf` column.
pub fn pdf_table(d: &Density1D, points: usize) -> Table {
    let (lo, hi) = d.support();
    let mut rows: Vec<(f64, Vec<String>)> = if hi > lo {
        grid(lo, hi, points)
            .map(|t| (t, vec![num(t), num(d.pdf(t)), num(d.cdf(t)), "grid".into()]))
            .collect()
    } else {
        Vec::new()
    };
    for a in d.atoms() {
        rows.push((a.at, vec![num(a.at), num(a.mass), num(d.cdf(a.at)), "atom".into()]));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    Table {
        header: vec!["t", "pdf", "cdf", "kind"],
        rows: rows.into_iter().map(|r| r.1).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::party2;

    #[test]
    fn party_policy_breakpoint() {
        let t = policy_vs_pi(&party2(), 0, 1001).unwrap();
        assert_eq!(t.rows.len(), 1002);
        let bp: Vec<&Vec<String>> = t.rows.iter().filter(|r| r[3] == "breakpoint").collect();
        assert_eq!(bp.len(), 1);
        let pi: f64 = bp[0][0].parse().unwrap();
        assert!((pi - 43.0 / 110.0).abs() < 1e-12);
        assert_eq!(t.rows[0][1], "Outdoor");
        assert_eq!(t.rows.last().unwrap()[1], "Indoor");
        let row = t.rows.iter().find(|r| r[0] == "0.2").unwrap();
        assert_eq!(row[1], "Outdoor");
        assert!(t.to_csv().starts_with("pi,action,value,kind\n0,Outdoor,"));
    }

    #[test]
    fn mustar_kink() {
        let t = mustar_vs_mu(&[0.62, 0.61], 0.5, 0.7, 21);
        let kink = t.rows.iter().find(|r| r[2] == "kink").unwrap();
        assert_eq!(kink[0], "0.62");
        for r in &t.rows {
            let (mu, star): (f64, f64) = (r[0].parse().unwrap(), r[1].parse().unwrap());
            assert_eq!(star, mu.max(0.62));
        }
    }

    #[test]
    fn triangular_pdf_peak() {
        let d = Density1D::triangular(0.56, 0.61, 0.66).unwrap();
        let t = pdf_table(&d, 101);
        let peak = t.rows.iter().map(|r| r[1].parse::<f64>().unwrap()).fold(0.0, f64::max);
        assert!((peak - 20.0).abs() < 1e-9);
        let atoms = pdf_table(&Density1D::point(0.3).unwrap(), 11);
        assert_eq!(atoms.rows, vec![vec!["0.3".to_string(), "1".into(), "1".into(), "atom".into()]]);
    }
}
