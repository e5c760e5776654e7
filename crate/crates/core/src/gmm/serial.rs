//! JSON form: `{weights, means, covariances, covariance_index}` where
//! `covariances` lists the distinct matrices (as rows) and
//! `covariance_index[j]` names the one used by component `j`. A covariance
//! kept in factored form is written as `{"factor": rows}` with `Σ = L Lᵀ`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::ser::{SerializeSeq, SerializeStruct};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::covariance::Cov;
use super::Gmm;

struct Rows<'a>(&'a DMatrix<f64>);

impl Serialize for Rows<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(self.0.nrows()))?;
        for r in 0..self.0.nrows() {
            let row: Vec<f64> = self.0.row(r).iter().copied().collect();
            seq.serialize_element(&row)?;
        }
        seq.end()
    }
}

struct Vectors<'a>(&'a [DVector<f64>]);

impl Serialize for Vectors<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(self.0.len()))?;
        for v in self.0 {
            seq.serialize_element(v.as_slice())?;
        }
        seq.end()
    }
}

struct Matrices<'a>(&'a [&'a Cov]);

impl Serialize for Matrices<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(self.0.len()))?;
        for c in self.0 {
            match c.factor() {
                Some(l) => seq.serialize_element(&Factor { factor: Rows(l) })?,
                None => seq.serialize_element(&Rows(c.matrix()))?,
            }
        }
        seq.end()
    }
}

#[derive(Serialize)]
struct Factor<'a> {
    factor: Rows<'a>,
}

impl Serialize for Gmm {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let (distinct, index) = self.distinct_storage();
        let mut st = s.serialize_struct("Gmm", 4)?;
        st.serialize_field("weights", &self.weights)?;
        st.serialize_field("means", &Vectors(&self.means))?;
        st.serialize_field("covariances", &Matrices(&distinct))?;
        st.serialize_field("covariance_index", &index)?;
        st.end()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GmmJson {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covariances: Vec<CovJson>,
    #[serde(default)]
    covariance_index: Option<Vec<usize>>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CovJson {
    Full(Vec<Vec<f64>>),
    Factor { factor: Vec<Vec<f64>> },
}

impl<'de> Deserialize<'de> for Gmm {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = GmmJson::deserialize(d)?;
        let mut mats = Vec::with_capacity(raw.covariances.len());
        let mut factored = Vec::with_capacity(raw.covariances.len());
        for c in raw.covariances {
            let (rows, is_factor) = match c {
                CovJson::Full(rows) => (rows, false),
                CovJson::Factor { factor } => (factor, true),
            };
            let n = rows.len();
            let r = if is_factor { rows.first().map_or(0, Vec::len) } else { n };
            if rows.iter().any(|row| row.len() != r) {
                return Err(D::Error::custom(if is_factor {
                    "covariance factor rows differ in length"
                } else {
                    "covariance matrices must be square"
                }));
            }
            let flat: Vec<f64> = rows.into_iter().flatten().collect();
            if flat.iter().any(|v| !v.is_finite()) {
                return Err(D::Error::custom("non-finite covariance entry"));
            }
            mats.push(DMatrix::from_row_slice(n, r, &flat));
            factored.push(is_factor);
        }
        let index = raw
            .covariance_index
            .unwrap_or_else(|| (0..raw.weights.len()).collect());
        if index.len() != raw.weights.len() || index.iter().any(|&i| i >= mats.len()) {
            return Err(D::Error::custom("covariance_index does not match the components"));
        }
        let means = raw.means.into_iter().map(DVector::from_vec).collect();
        if factored.iter().any(|f| *f) {
            // Factored entries are PSD by construction; full ones still get checked.
            let shared: Vec<Arc<Cov>> = mats
                .into_iter()
                .zip(factored)
                .map(|(m, f)| {
                    if f {
                        Ok(Arc::new(Cov::factored(m)))
                    } else {
                        crate::linalg::enforce_psd(m).map(|m| Arc::new(Cov::full(m)))
                    }
                })
                .collect::<crate::Result<_>>()
                .map_err(D::Error::custom)?;
            let covs = index.iter().map(|&i| shared[i].clone()).collect();
            return Gmm::from_parts(raw.weights, means, covs).map_err(D::Error::custom);
        }
        let mats: Vec<Arc<DMatrix<f64>>> = mats.into_iter().map(Arc::new).collect();
        let covs = index.iter().map(|&i| mats[i].clone()).collect();
        Gmm::from_shared(raw.weights, means, covs).map_err(D::Error::custom)
    }
}
