//! Gauss–Legendre quadrature and orthonormal associated Legendre functions.
//!
//! `Y_JM(θ,φ) = P̄_J^M(cos θ) e^{iMφ} / √(2π)` with Condon–Shortley phase and
//! `∫_{-1}^{1} (P̄_J^M)² dx = 1`.

use std::f64::consts::PI;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "gauss_legendre needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // three-term recurrence for P_n(x) and its derivative
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pm1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Table of `P̄_J^M(x)` for `0 ≤ M ≤ J ≤ l_max` at one point `x`.
#[derive(Clone, Debug)]
pub struct LegendreTable {
    l_max: usize,
    values: Vec<f64>,
}

impl LegendreTable {
    pub fn new(l_max: u32, x: f64) -> Self {
        let l = l_max as usize;
        let mut values = vec![0.0; (l + 1) * (l + 1)];
        let idx = |j: usize, m: usize| j * (l + 1) + m;
        let s = (1.0 - x * x).max(0.0).sqrt();
        let mut pmm = (0.5f64).sqrt();
        for m in 0..=l {
            if m > 0 {
                pmm *= -((2 * m + 1) as f64 / (2 * m) as f64).sqrt() * s;
            }
            values[idx(m, m)] = pmm;
            if m < l {
                let p1 = x * ((2 * m + 3) as f64).sqrt() * pmm;
                values[idx(m + 1, m)] = p1;
                let mut p_prev = pmm;
                let mut p_cur = p1;
                for j in (m + 2)..=l {
                    let jf = j as f64;
                    let mf = m as f64;
                    let a = ((4.0 * jf * jf - 1.0) / (jf * jf - mf * mf)).sqrt();
                    let b = (((jf - 1.0) * (jf - 1.0) - mf * mf)
                        / (4.0 * (jf - 1.0) * (jf - 1.0) - 1.0))
                        .sqrt();
                    let p_next = a * (x * p_cur - b * p_prev);
                    values[idx(j, m)] = p_next;
                    p_prev = p_cur;
                    p_cur = p_next;
                }
            }
        }
        LegendreTable { l_max: l, values }
    }

    /// `P̄_J^M(x)` for any sign of `M` (`P̄_J^{-M} = (-1)^M P̄_J^M`).
    pub fn get(&self, j: u32, m: i32) -> f64 {
        let ma = m.unsigned_abs() as usize;
        let j = j as usize;
        debug_assert!(j <= self.l_max && ma <= j);
        let v = self.values[j * (self.l_max + 1) + ma];
        if m < 0 && ma % 2 == 1 {
            -v
        } else {
            v
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(6);
        // exact up to degree 11
        for deg in 0..12 {
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg)).sum();
            let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
            assert!((q - exact).abs() < 1e-14, "degree {deg}: {q} vs {exact}");
        }
    }

    #[test]
    fn single_node_rule() {
        let (x, w) = gauss_legendre(1);
        assert!(x[0].abs() < 1e-15);
        assert!((w[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn low_order_closed_forms() {
        let x = 0.37;
        let t = LegendreTable::new(3, x);
        let s = (1.0 - x * x).sqrt();
        assert!((t.get(0, 0) - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((t.get(1, 0) - (1.5f64).sqrt() * x).abs() < 1e-15);
        assert!((t.get(1, 1) + (0.75f64).sqrt() * s).abs() < 1e-15);
        assert!((t.get(1, -1) - (0.75f64).sqrt() * s).abs() < 1e-15);
        let p20 = (2.5f64).sqrt() * 0.5 * (3.0 * x * x - 1.0);
        assert!((t.get(2, 0) - p20).abs() < 1e-14);
    }

    #[test]
    fn orthonormal_on_grid() {
        let l = 12u32;
        let (xs, ws) = gauss_legendre(l as usize + 2);
        let tables: Vec<_> = xs.iter().map(|&x| LegendreTable::new(l, x)).collect();
        for m in 0..=l as i32 {
            for j1 in m as u32..=l {
                for j2 in m as u32..=l {
                    let s: f64 = tables
                        .iter()
                        .zip(&ws)
                        .map(|(t, w)| w * t.get(j1, m) * t.get(j2, m))
                        .sum();
                    let e = if j1 == j2 { 1.0 } else { 0.0 };
                    assert!((s - e).abs() < 1e-12, "J={j1},{j2} M={m}: {s}");
                }
            }
        }
    }
}
