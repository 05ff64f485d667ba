use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{ModelSpec, TransitionTopology};
use crate::{Error, Result};

/// Structured model parameters.
///
/// `d_cholesky` packs the lower-triangular factor `L` of `D = L Lᵀ` row-wise
/// (`L11, L21, L22, L31, …`) with the diagonal stored on the log scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub beta: Vec<f64>,
    pub log_sigma: f64,
    pub d_cholesky: Vec<f64>,
    pub gamma: Vec<f64>,
    pub zeta: Vec<f64>,
    pub eta: Vec<f64>,
    pub spline_coefs: Vec<Vec<f64>>,
}

impl Parameters {
    pub fn sigma(&self) -> f64 {
        self.log_sigma.exp()
    }

    pub fn cholesky_factor(&self, q: usize) -> DMatrix<f64> {
        cholesky_from_packed(&self.d_cholesky, q)
    }

    pub fn d_matrix(&self, q: usize) -> DMatrix<f64> {
        let l = self.cholesky_factor(q);
        &l * l.transpose()
    }
}

/// Lower-triangular factor from the row-wise packing with log-diagonal.
pub(crate) fn cholesky_from_packed(packed: &[f64], q: usize) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(q, q);
    let mut k = 0;
    for r in 0..q {
        for c in 0..=r {
            l[(r, c)] = if r == c { packed[k].exp() } else { packed[k] };
            k += 1;
        }
    }
    l
}

/// Row-wise packing (log-diagonal) of the Cholesky factor of a positive-definite `d`.
pub fn packed_from_d(d: &DMatrix<f64>) -> Result<Vec<f64>> {
    let q = d.nrows();
    let l = d
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("D is not positive definite".into()))?
        .l();
    let mut out = Vec::with_capacity(q * (q + 1) / 2);
    for r in 0..q {
        for c in 0..=r {
            out.push(if r == c { l[(r, c)].ln() } else { l[(r, c)] });
        }
    }
    Ok(out)
}

/// Positions of every parameter block inside the flat vector, plus names.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterLayout {
    pub p: usize,
    pub q: usize,
    pub n_gamma: usize,
    /// ζ slot for each transition (`None` for reference transitions).
    pub zeta_index: Vec<Option<usize>>,
    /// (level slot, slope slot) into the η block for each transition.
    pub eta_index: Vec<(Option<usize>, Option<usize>)>,
    pub n_zeta: usize,
    pub n_eta: usize,
    pub spline_sizes: Vec<usize>,
    /// Baseline group of each transition.
    pub group_of: Vec<usize>,
    pub names: Vec<String>,
}

impl ParameterLayout {
    pub fn new(spec: &ModelSpec, topology: &TransitionTopology) -> Result<Self> {
        spec.validate(topology)?;
        let k = topology.n_transitions();
        let (p, q) = (spec.p(), spec.q());
        let group_of = spec.group_of(k);
        let mut zeta_index = vec![None; k];
        let mut n_zeta = 0;
        for g in &spec.baseline_groups {
            for &t in &g.transitions {
                if t != g.reference {
                    zeta_index[t] = Some(n_zeta);
                    n_zeta += 1;
                }
            }
        }
        let mut eta_index = vec![(None, None); k];
        let mut n_eta = 0;
        for (t, dep) in spec.dependence.iter().enumerate() {
            if dep.has_level() {
                eta_index[t].0 = Some(n_eta);
                n_eta += 1;
            }
            if dep.has_slope() {
                eta_index[t].1 = Some(n_eta);
                n_eta += 1;
            }
        }
        let nb = spec.spline.internal_knots + spec.spline.degree + 1;
        let spline_sizes = vec![nb; spec.baseline_groups.len()];

        let mut names = Vec::new();
        for t in &spec.fixed {
            names.push(format!("beta[{t}]"));
        }
        names.push("log_sigma".into());
        for r in 0..q {
            for c in 0..=r {
                if r == c {
                    names.push(format!("log_chol[{},{}]", r + 1, c + 1));
                } else {
                    names.push(format!("chol[{},{}]", r + 1, c + 1));
                }
            }
        }
        for c in &spec.transition_covariates {
            let labels: Vec<String> = c.transitions.iter().map(|&t| topology.label(t)).collect();
            names.push(format!("gamma[{};{}]", c.covariate, labels.join(",")));
        }
        for (t, z) in zeta_index.iter().enumerate() {
            if z.is_some() {
                names.push(format!("zeta[{}]", topology.label(t)));
            }
        }
        for (t, (l, s)) in eta_index.iter().enumerate() {
            if l.is_some() {
                names.push(format!("eta_level[{}]", topology.label(t)));
            }
            if s.is_some() {
                names.push(format!("eta_slope[{}]", topology.label(t)));
            }
        }
        for (gi, g) in spec.baseline_groups.iter().enumerate() {
            for j in 0..spline_sizes[gi] {
                names.push(format!("spline[{};{}]", topology.label(g.reference), j + 1));
            }
        }
        Ok(Self {
            p,
            q,
            n_gamma: spec.transition_covariates.len(),
            zeta_index,
            eta_index,
            n_zeta,
            n_eta,
            spline_sizes,
            group_of,
            names,
        })
    }

    pub fn n_chol(&self) -> usize {
        self.q * (self.q + 1) / 2
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn beta(&self) -> Range<usize> {
        0..self.p
    }

    pub fn log_sigma(&self) -> usize {
        self.p
    }

    pub fn chol(&self) -> Range<usize> {
        let s = self.p + 1;
        s..s + self.n_chol()
    }

    pub fn gamma(&self) -> Range<usize> {
        let s = self.chol().end;
        s..s + self.n_gamma
    }

    pub fn zeta(&self) -> Range<usize> {
        let s = self.gamma().end;
        s..s + self.n_zeta
    }

    pub fn eta(&self) -> Range<usize> {
        let s = self.zeta().end;
        s..s + self.n_eta
    }

    pub fn spline(&self, group: usize) -> Range<usize> {
        let s = self.eta().end + self.spline_sizes[..group].iter().sum::<usize>();
        s..s + self.spline_sizes[group]
    }

    /// Everything after the random-effects block: γ, ζ, η and spline coefficients.
    pub fn survival(&self) -> Range<usize> {
        self.gamma().start..self.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Flat, named parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub values: Vec<f64>,
    pub names: Vec<String>,
}

pub fn pack(params: &Parameters, layout: &ParameterLayout) -> Result<ParameterVector> {
    let dim = |what: &str, got: usize, want: usize| -> Result<()> {
        if got == want {
            Ok(())
        } else {
            Err(Error::Dimension(format!("{what}: got {got}, expected {want}")))
        }
    };
    dim("beta", params.beta.len(), layout.p)?;
    dim("d_cholesky", params.d_cholesky.len(), layout.n_chol())?;
    dim("gamma", params.gamma.len(), layout.n_gamma)?;
    dim("zeta", params.zeta.len(), layout.n_zeta)?;
    dim("eta", params.eta.len(), layout.n_eta)?;
    dim("spline groups", params.spline_coefs.len(), layout.spline_sizes.len())?;
    for (c, &n) in params.spline_coefs.iter().zip(&layout.spline_sizes) {
        dim("spline coefficients", c.len(), n)?;
    }
    let mut values = Vec::with_capacity(layout.len());
    values.extend_from_slice(&params.beta);
    values.push(params.log_sigma);
    values.extend_from_slice(&params.d_cholesky);
    values.extend_from_slice(&params.gamma);
    values.extend_from_slice(&params.zeta);
    values.extend_from_slice(&params.eta);
    for c in &params.spline_coefs {
        values.extend_from_slice(c);
    }
    Ok(ParameterVector { values, names: layout.names.clone() })
}

pub fn unpack(vector: &ParameterVector, layout: &ParameterLayout) -> Result<Parameters> {
    unpack_slice(&vector.values, layout)
}

pub(crate) fn unpack_slice(v: &[f64], layout: &ParameterLayout) -> Result<Parameters> {
    if v.len() != layout.len() {
        return Err(Error::Dimension(format!(
            "parameter vector has {} entries, layout expects {}",
            v.len(),
            layout.len()
        )));
    }
    Ok(Parameters {
        beta: v[layout.beta()].to_vec(),
        log_sigma: v[layout.log_sigma()],
        d_cholesky: v[layout.chol()].to_vec(),
        gamma: v[layout.gamma()].to_vec(),
        zeta: v[layout.zeta()].to_vec(),
        eta: v[layout.eta()].to_vec(),
        spline_coefs: (0..layout.spline_sizes.len())
            .map(|g| v[layout.spline(g)].to_vec())
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn layout() -> ParameterLayout {
        let topo = TransitionTopology::illness_death();
        ParameterLayout::new(&ModelSpec::intercept_slope(&topo, "X"), &topo).unwrap()
    }

    #[test]
    fn layout_sizes_and_names() {
        let l = layout();
        assert_eq!(l.len(), 4 + 1 + 3 + 3 + 6 + 21);
        assert_eq!(l.names[0], "beta[1]");
        assert_eq!(l.names[l.log_sigma()], "log_sigma");
        assert_eq!(l.names[l.eta().start], "eta_level[0->1]");
        assert_eq!(l.names[l.gamma().start], "gamma[X;0->1]");
        assert_eq!(l.spline(2).end, l.len());
    }

    #[test]
    fn identity_d_round_trip() {
        let l = layout();
        let p = Parameters {
            beta: vec![0.0; 4],
            log_sigma: 0.0,
            d_cholesky: packed_from_d(&DMatrix::identity(2, 2)).unwrap(),
            gamma: vec![0.0; 3],
            zeta: vec![],
            eta: vec![0.0; 6],
            spline_coefs: vec![vec![0.0; 7]; 3],
        };
        let v = pack(&p, &l).unwrap();
        assert_eq!(unpack(&v, &l).unwrap(), p);
        assert_eq!(p.d_matrix(2), DMatrix::identity(2, 2));
    }

    #[test]
    fn reported_d_reconstructs() {
        let d = DMatrix::from_row_slice(2, 2, &[0.349, -0.041, -0.041, 0.062]);
        let packed = packed_from_d(&d).unwrap();
        let back = cholesky_from_packed(&packed, 2);
        let rec = &back * back.transpose();
        assert!((rec - d).abs().max() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let l = layout();
        let bad = ParameterVector { values: vec![0.0; 3], names: vec![] };
        assert!(matches!(unpack(&bad, &l), Err(Error::Dimension(_))));
    }

    proptest! {
        #[test]
        fn unpack_pack_bit_exact(v in proptest::collection::vec(-5.0f64..5.0, 38)) {
            let l = layout();
            let pv = ParameterVector { values: v.clone(), names: l.names.clone() };
            let back = pack(&unpack(&pv, &l).unwrap(), &l).unwrap();
            prop_assert_eq!(back.values, v);
        }

        #[test]
        fn reconstructed_d_is_psd(v in proptest::collection::vec(-3.0f64..3.0, 6)) {
            let l = cholesky_from_packed(&v, 3);
            let d = &l * l.transpose();
            let eig = d.clone().symmetric_eigen().eigenvalues;
            prop_assert!(eig.iter().all(|&e| e >= -1e-12 * d.abs().max()));
        }
    }
}
