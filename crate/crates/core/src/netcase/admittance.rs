use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::NetworkCase;

/// Bus admittance data of a case.
///
/// `g` and `b` are the real and imaginary parts of the full bus admittance
/// matrix. `b_noshunt` keeps the off-diagonal susceptances and sets each
/// diagonal to the negated off-diagonal row sum, i.e. line charging, bus
/// shunts and off-nominal tap shunts are left out.
#[derive(Debug, Clone)]
pub struct Admittance {
    pub g: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub b_noshunt: DMatrix<f64>,
    /// Sparse rows of the complex admittance matrix, sorted by column.
    pub rows: Vec<Vec<(usize, Complex64)>>,
}

/// Per-branch two-port admittances `(y_ff, y_ft, y_tf, y_tt)`.
pub(crate) fn branch_two_port(br: &super::Branch) -> (Complex64, Complex64, Complex64, Complex64) {
    let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
    let tap = Complex64::from_polar(br.tap_ratio, br.phase_shift);
    let ytt = ys + Complex64::new(0.0, br.b_charging / 2.0);
    let yff = ytt / (tap * tap.conj());
    let yft = -ys / tap.conj();
    let ytf = -ys / tap;
    (yff, yft, ytf, ytt)
}

pub fn build_admittance(case: &NetworkCase) -> Admittance {
    let nb = case.buses.len();
    let mut rows: Vec<BTreeMap<usize, Complex64>> = vec![BTreeMap::new(); nb];
    for (i, bus) in case.buses.iter().enumerate() {
        if bus.gs != 0.0 || bus.bs != 0.0 {
            *rows[i].entry(i).or_default() += Complex64::new(bus.gs, bus.bs);
        }
    }
    for br in case.branches.iter().filter(|br| br.status) {
        let (yff, yft, ytf, ytt) = branch_two_port(br);
        let (f, t) = (br.from, br.to);
        *rows[f].entry(f).or_default() += yff;
        *rows[f].entry(t).or_default() += yft;
        *rows[t].entry(f).or_default() += ytf;
        *rows[t].entry(t).or_default() += ytt;
    }

    let mut g = DMatrix::zeros(nb, nb);
    let mut b = DMatrix::zeros(nb, nb);
    let mut b_noshunt = DMatrix::zeros(nb, nb);
    for (i, row) in rows.iter().enumerate() {
        let mut off_sum = 0.0;
        for (&j, y) in row {
            g[(i, j)] = y.re;
            b[(i, j)] = y.im;
            if i != j {
                b_noshunt[(i, j)] = y.im;
                off_sum += y.im;
            }
        }
        b_noshunt[(i, i)] = -off_sum;
    }

    Admittance {
        g,
        b,
        b_noshunt,
        rows: rows
            .into_iter()
            .map(|r| r.into_iter().collect())
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::super::parse_case;
    use super::*;

    #[test]
    fn two_bus_line() {
        let case = parse_case(TWO_BUS).unwrap();
        let y = build_admittance(&case);
        let expect = DMatrix::from_row_slice(2, 2, &[-10.0, 10.0, 10.0, -10.0]);
        assert!((&y.b - &expect).abs().max() < 1e-12);
        assert!(y.g.abs().max() < 1e-12);
        assert!((&y.b_noshunt - &expect).abs().max() < 1e-12);
    }

    #[test]
    fn line_charging_only_touches_full_diagonal() {
        let text = TWO_BUS.replace("1 2 0 0.1 0 ", "1 2 0 0.1 0.02 ");
        let case = parse_case(&text).unwrap();
        let y = build_admittance(&case);
        assert!((y.b[(0, 0)] - (-10.0 + 0.01)).abs() < 1e-12);
        assert!((y.b[(1, 1)] - (-10.0 + 0.01)).abs() < 1e-12);
        assert!((y.b[(0, 1)] - 10.0).abs() < 1e-12);
        let expect = DMatrix::from_row_slice(2, 2, &[-10.0, 10.0, 10.0, -10.0]);
        assert!((&y.b_noshunt - &expect).abs().max() < 1e-12);
    }

    #[test]
    fn ieee14_symmetry_and_row_sums() {
        let case = parse_case(&case14_text()).unwrap();
        let y = build_admittance(&case);
        assert!((&y.g - y.g.transpose()).abs().max() < 1e-12);
        assert!((&y.b - y.b.transpose()).abs().max() < 1e-12);
        for i in 0..14 {
            assert!(y.b_noshunt.row(i).sum().abs() < 1e-9);
        }
        // Sparse rows agree with the dense parts.
        for (i, row) in y.rows.iter().enumerate() {
            for &(j, v) in row {
                assert_eq!(v.re, y.g[(i, j)]);
                assert_eq!(v.im, y.b[(i, j)]);
            }
        }
    }
}
