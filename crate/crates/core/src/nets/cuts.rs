//! Affine pieces of a GroupMax network at a fixed `x`.
//!
//! Every hidden unit is a minimum of affine functions of `y`. A unit of the
//! next layer combines its inputs with non-negative weights, so it is the
//! minimum over one choice of piece per input; the group minimum then
//! unions the pieces of its members. The output minimum unions all rows.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{Icnn, IcnnKind};
use crate::autodiff::ParamStore;
use crate::error::{invalid, Error, Result};

pub const DEFAULT_CUT_CAP: usize = 4096;
const DEDUP_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cut {
    pub alpha: f64,
    pub beta: Vec<f64>,
}

impl Cut {
    pub fn value(&self, y: &[f64]) -> f64 {
        self.alpha + self.beta.iter().zip(y).map(|(b, v)| b * v).sum::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutSet {
    pub cuts: Vec<Cut>,
    /// Number of pieces enumerated before duplicates were merged.
    pub raw_count: u128,
}

impl CutSet {
    pub fn value(&self, y: &[f64]) -> f64 {
        self.cuts.iter().map(|c| c.value(y)).fold(f64::INFINITY, f64::min)
    }

    pub fn len(&self) -> usize {
        self.cuts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cuts.is_empty()
    }

    /// Cuts of `v(y) = a + b * f(y / s)` when `self` holds the cuts of `f`
    /// and `b > 0`.
    pub fn rescaled(&self, a: f64, b: f64, s: &[f64]) -> CutSet {
        CutSet {
            cuts: self
                .cuts
                .iter()
                .map(|c| Cut {
                    alpha: a + b * c.alpha,
                    beta: c.beta.iter().zip(s).map(|(v, s)| b * v / s).collect(),
                })
                .collect(),
            raw_count: self.raw_count,
        }
    }

    /// CSV with header `alpha,beta_0,...`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let d = self.cuts.first().map_or(0, |c| c.beta.len());
        let header: Vec<String> = std::iter::once("alpha".to_string())
            .chain((0..d).map(|k| format!("beta_{k}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for c in &self.cuts {
            let row: Vec<String> = std::iter::once(c.alpha)
                .chain(c.beta.iter().copied())
                .map(|v| format!("{v:e}"))
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Pieces of `net(x, .)`. Fails with [`Error::CutCapExceeded`] before
/// enumerating more than `cap` pieces in any layer.
pub fn extract_cuts(net: &Icnn, store: &ParamStore, x: &[f64], cap: usize) -> Result<CutSet> {
    let IcnnKind::GroupMax { group } = net.spec.kind else {
        return Err(invalid("cuts are only defined for GroupMax networks"));
    };
    if x.len() != net.spec.dx {
        return Err(invalid(format!("x has {} entries, network expects {}", x.len(), net.spec.dx)));
    }
    let dy = net.spec.dy;
    let layers = net.freeze_at(store, x);
    let last = layers.len() - 1;
    let mut units: Vec<Vec<Cut>> = Vec::new();
    let mut raw: u128 = 0;
    for (i, l) in layers.iter().enumerate() {
        let counts: Vec<u128> = units.iter().map(|u| u.len() as u128).collect();
        let per_row: u128 = counts.iter().product();
        let total = per_row.saturating_mul(l.out as u128);
        if total > cap as u128 {
            return Err(Error::CutCapExceeded { requested: total, cap });
        }
        let mut rows: Vec<Vec<Cut>> = Vec::with_capacity(l.out);
        for r in 0..l.out {
            let base = Cut {
                alpha: l.c[r],
                beta: l.wy[r * dy..(r + 1) * dy].to_vec(),
            };
            let weights = &l.a[r * l.zin..(r + 1) * l.zin];
            rows.push(combine(&base, weights, &units));
        }
        if i == last {
            raw = total.max(l.out as u128);
            units = vec![rows.into_iter().flatten().collect()];
        } else {
            units = rows
                .chunks(group)
                .map(|g| g.iter().flatten().cloned().collect())
                .collect();
        }
    }
    let mut cuts = units.pop().unwrap_or_default();
    dedup(&mut cuts);
    Ok(CutSet { cuts, raw_count: raw })
}

/// `base + sum_j w_j * piece_j` over every choice of one piece per input.
fn combine(base: &Cut, w: &[f64], inputs: &[Vec<Cut>]) -> Vec<Cut> {
    let mut acc = vec![base.clone()];
    for (wj, pieces) in w.iter().zip(inputs) {
        let mut next = Vec::with_capacity(acc.len() * pieces.len());
        for a in &acc {
            for p in pieces {
                next.push(Cut {
                    alpha: a.alpha + wj * p.alpha,
                    beta: a.beta.iter().zip(&p.beta).map(|(x, y)| x + wj * y).collect(),
                });
            }
        }
        acc = next;
    }
    acc
}

fn dedup(cuts: &mut Vec<Cut>) {
    cuts.sort_by(|a, b| a.alpha.total_cmp(&b.alpha));
    let mut kept: Vec<Cut> = Vec::with_capacity(cuts.len());
    for c in cuts.drain(..) {
        let dup = kept.iter().rev().take_while(|k| c.alpha - k.alpha <= DEDUP_TOL).any(|k| {
            k.beta
                .iter()
                .zip(&c.beta)
                .all(|(a, b)| (a - b).abs() <= DEDUP_TOL)
        });
        if !dup {
            kept.push(c);
        }
    }
    *cuts = kept;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::nets::IcnnSpec;

    fn gm(dy: usize, m_y: usize, layers: usize, seed: u64) -> (ParamStore, Icnn) {
        let mut s = ParamStore::new(seed);
        let n = Icnn::build(
            &mut s,
            "gm",
            IcnnSpec {
                kind: IcnnKind::GroupMax { group: 2 },
                dx: 1,
                dy,
                m_x: 6,
                m_y,
                layers,
            },
        )
        .unwrap();
        (s, n)
    }

    #[test]
    fn cuts_reproduce_the_network_on_a_grid() {
        let (s, n) = gm(1, 4, 1, 3);
        for x in [-1.0, 0.3, 2.0] {
            let cs = extract_cuts(&n, &s, &[x], DEFAULT_CUT_CAP).unwrap();
            assert_eq!(cs.raw_count, 16);
            assert!(cs.len() <= 16);
            let ys: Vec<f64> = (0..1000).map(|k| -0.5 + 2.0 * k as f64 / 999.0).collect();
            let vals = n.eval(&s, &Tensor::filled(1000, 1, x), &Tensor::column(ys.clone()));
            for (y, v) in ys.iter().zip(vals) {
                let c = cs.value(&[*y]);
                assert!((c - v).abs() <= 1e-9 * v.abs().max(1.0), "{c} vs {v}");
            }
        }
    }

    #[test]
    fn two_hidden_min_layers_in_two_dimensions() {
        let (s, n) = gm(2, 4, 2, 8);
        let cs = extract_cuts(&n, &s, &[0.4], DEFAULT_CUT_CAP).unwrap();
        let mut ys = Vec::new();
        for a in 0..30 {
            for b in 0..30 {
                ys.push(a as f64 / 29.0);
                ys.push(b as f64 / 29.0);
            }
        }
        let vals = n.eval(&s, &Tensor::filled(900, 1, 0.4), &Tensor::from_vec(900, 2, ys.clone()));
        for (k, v) in vals.iter().enumerate() {
            let c = cs.value(&ys[2 * k..2 * k + 2]);
            assert!((c - v).abs() <= 1e-9 * v.abs().max(1.0));
        }
    }

    #[test]
    fn affine_network_has_one_cut() {
        let (mut s, n) = gm(1, 4, 1, 3);
        s.values_mut().iter_mut().for_each(|v| *v = 0.0);
        let id = s.find("gm.z1.wy").unwrap();
        s.get_mut(id).iter_mut().for_each(|v| *v = 2.0);
        let id = s.find("gm.z1.by").unwrap();
        s.get_mut(id)[0] = 1.0;
        let cs = extract_cuts(&n, &s, &[0.0], DEFAULT_CUT_CAP).unwrap();
        assert_eq!(cs.len(), 1);
        assert_eq!(cs.cuts[0].beta, vec![2.0]);
    }

    #[test]
    fn final_bias_shifts_every_intercept() {
        let (mut s, n) = gm(1, 4, 1, 5);
        let before = extract_cuts(&n, &s, &[0.2], DEFAULT_CUT_CAP).unwrap();
        let id = s.find("gm.z1.b").unwrap();
        s.get_mut(id).iter_mut().for_each(|v| *v += 3.5);
        let after = extract_cuts(&n, &s, &[0.2], DEFAULT_CUT_CAP).unwrap();
        assert_eq!(before.len(), after.len());
        for (a, b) in before.cuts.iter().zip(&after.cuts) {
            assert!((b.alpha - a.alpha - 3.5).abs() < 1e-12);
            assert_eq!(a.beta, b.beta);
        }
    }

    #[test]
    fn cap_is_enforced() {
        let (s, n) = gm(1, 12, 1, 1);
        let err = extract_cuts(&n, &s, &[0.0], 100).unwrap_err();
        assert!(matches!(err, Error::CutCapExceeded { requested: 768, cap: 100 }));
    }

    #[test]
    fn csv_round_shape() {
        let (s, n) = gm(1, 4, 1, 3);
        let cs = extract_cuts(&n, &s, &[0.0], DEFAULT_CUT_CAP).unwrap();
        let mut buf = Vec::new();
        cs.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("alpha,beta_0\n"));
        assert_eq!(text.lines().count(), cs.len() + 1);
    }
}
