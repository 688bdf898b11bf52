//! Pointwise curvature formulas written once over [`Real`], so the same code
//! runs on `f64` (oracle-facing API) and on batched tape columns (losses).
//!
//! Christoffel symbols are stored `[k][i][j]` for `Γ_{ij}^k`.

use crate::ad::{Mat, Real};

#[derive(Clone, Debug)]
pub struct Christoffel<S> {
    d: usize,
    data: Vec<S>,
}

impl<S: Clone> Christoffel<S> {
    pub fn dim(&self) -> usize {
        self.d
    }

    /// `Γ_{ij}^k`
    pub fn get(&self, k: usize, i: usize, j: usize) -> &S {
        &self.data[(k * self.d + i) * self.d + j]
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn map<T>(&self, f: impl Fn(&S) -> T) -> Christoffel<T> {
        Christoffel {
            d: self.d,
            data: self.data.iter().map(f).collect(),
        }
    }
}

fn sum<S: Real>(mut terms: impl Iterator<Item = S>) -> S {
    let first = terms.next().expect("empty sum");
    terms.fold(first, |a, b| a + b)
}

/// `Γ_{ij}^k = ½ g^{kl}(∂_i g_{jl} + ∂_j g_{il} − ∂_l g_{ij})`, with
/// `dg[m] = ∂_m g`.
pub fn christoffel<S: Real>(g_inv: &Mat<S>, dg: &[Mat<S>]) -> Christoffel<S> {
    let d = g_inv.rows();
    assert_eq!(dg.len(), d, "need one metric derivative per coordinate");
    // first kind: [l][i][j] = ½(∂_i g_jl + ∂_j g_il − ∂_l g_ij)
    let mut first = Vec::with_capacity(d * d * d);
    for l in 0..d {
        for i in 0..d {
            for j in 0..d {
                let v = (dg[i].get(j, l).clone() + dg[j].get(i, l).clone() - dg[l].get(i, j).clone()) * 0.5;
                first.push(v);
            }
        }
    }
    let mut data = Vec::with_capacity(d * d * d);
    for k in 0..d {
        for i in 0..d {
            for j in 0..d {
                data.push(sum((0..d).map(|l| g_inv.get(k, l).clone() * first[(l * d + i) * d + j].clone())));
            }
        }
    }
    Christoffel { d, data }
}

/// The two circulation coefficients `P = (√det g / g₁₁) Γ₁₁²` and
/// `Q = (√det g / g₁₁) Γ₁₂²` of a surface chart (0-based indices).
pub fn circulation_coefficients<S: Real>(g: &Mat<S>, gamma: &Christoffel<S>) -> (S, S) {
    assert_eq!(g.rows(), 2, "circulation coefficients are defined for surfaces");
    let weight = g.det().sqrt() / g.get(0, 0).clone();
    (
        weight.clone() * gamma.get(1, 0, 0).clone(),
        weight * gamma.get(1, 0, 1).clone(),
    )
}

/// One term of the discretized circulation average:
/// `P·(−sin ω) + Q·cos ω`.
pub fn circulation_term<S: Real>(p: &S, q: &S, omega: f64) -> S {
    p.clone() * (-omega.sin()) + q.clone() * omega.cos()
}

/// Normal-bundle projection norm `Π_ij = ||∂_ijℰ − g^{kl}⟨∂_ijℰ, ∂_kℰ⟩∂_lℰ||`.
///
/// `hess[i * d + j][a]` is `∂_ij ℰ^a`; `jac` is `D x d`.
pub fn second_fundamental_form<S: Real>(hess: &[Vec<S>], jac: &Mat<S>, g_inv: &Mat<S>) -> Mat<S> {
    let d = jac.cols();
    let big_d = jac.rows();
    Mat::from_fn(d, d, |i, j| {
        let h = &hess[i * d + j];
        // ⟨∂_ijℰ, ∂_kℰ⟩
        let inner: Vec<S> = (0..d)
            .map(|k| sum((0..big_d).map(|a| h[a].clone() * jac.get(a, k).clone())))
            .collect();
        // coefficients c_l = g^{kl} inner_k
        let coef: Vec<S> = (0..d)
            .map(|l| sum((0..d).map(|k| g_inv.get(k, l).clone() * inner[k].clone())))
            .collect();
        let normal_sq = sum((0..big_d).map(|a| {
            let tangential = sum((0..d).map(|l| coef[l].clone() * jac.get(a, l).clone()));
            (h[a].clone() - tangential).square()
        }));
        normal_sq.sqrt()
    })
}

/// Componentwise Laplace–Beltrami of an immersion:
/// `g^{ij}(∂_ijℰ^a − Γ_{ij}^k ∂_kℰ^a)`.
pub fn immersion_laplacian<S: Real>(hess: &[Vec<S>], jac: &Mat<S>, g_inv: &Mat<S>, gamma: &Christoffel<S>) -> Vec<S> {
    let d = jac.cols();
    let big_d = jac.rows();
    (0..big_d)
        .map(|a| {
            sum((0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| {
                let conn = sum((0..d).map(|k| gamma.get(k, i, j).clone() * jac.get(a, k).clone()));
                g_inv.get(i, j).clone() * (hess[i * d + j][a].clone() - conn)
            }))
        })
        .collect()
}

/// `||Δ_g ℰ||`, the mean-curvature proxy.
pub fn mean_curvature_from_laplacian<S: Real>(lap: &[S]) -> S {
    sum(lap.iter().map(|x| x.square())).sqrt()
}

/// `Ĥ_ij = Π_ij − (H/d) g_ij`.
pub fn traceless<S: Real>(pi: &Mat<S>, g: &Mat<S>, mean_curvature: &S) -> Mat<S> {
    let d = g.rows() as f64;
    let factor = mean_curvature.clone() / d;
    pi.sub(&g.scale(&factor))
}

/// `g^{ij} A_ij`.
pub fn g_trace<S: Real>(g_inv: &Mat<S>, a: &Mat<S>) -> S {
    g_inv.frobenius_dot(a)
}

/// How the pure-diagonal correction `δ_ij Ĥ_ii` enters the flow tensor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiagonalConvention {
    /// Add `Ĥ_ii` as is; the trace identity of the flow holds exactly.
    Signed,
    /// Add `|Ĥ_ii|`, keeping the diagonal correction nonnegative.
    #[default]
    NonNegative,
}

/// Contracted flow tensor
/// `H_ij = −R̄/(d−2) g_ij + (1/(d−2))(g_ij tr_gĤ + (d−2)Ĥ_ij) + δ_ij Ĥ_ii`.
pub fn h_flow<S: Real>(g: &Mat<S>, g_inv: &Mat<S>, hhat: &Mat<S>, ambient_scalar: f64, convention: DiagonalConvention) -> Mat<S> {
    let d = g.rows();
    assert!(d >= 3, "flow tensor divides by d - 2");
    let dm2 = (d - 2) as f64;
    let tr = g_trace(g_inv, hhat);
    Mat::from_fn(d, d, |i, j| {
        let gij = g.get(i, j).clone();
        let mut v = gij.clone() * (-ambient_scalar / dm2) + (gij * tr.clone() + hhat.get(i, j).clone() * dm2) / dm2;
        if i == j {
            let diag = hhat.get(i, i).clone();
            v = v + match convention {
                DiagonalConvention::Signed => diag,
                DiagonalConvention::NonNegative => diag.abs(),
            };
        }
        v
    })
}

/// Diagonal of the nested-sine round metric of radius `r`:
/// `r²`, `r² sin²u₀`, `r² sin²u₀ sin²u₁`, ...
pub fn sphere_metric_diagonal<S: Real>(u: &[S], radius: f64) -> Vec<S> {
    let d = u.len();
    let mut out = Vec::with_capacity(d);
    let mut acc = u[0].constant_like(radius * radius);
    out.push(acc.clone());
    for ui in u.iter().take(d - 1) {
        acc = acc * ui.sin().square();
        out.push(acc.clone());
    }
    out
}

/// `4(d−1)/(d−2)`, the conformal Laplacian coefficient.
pub fn conformal_coefficient(d: usize) -> f64 {
    4.0 * (d as f64 - 1.0) / (d as f64 - 2.0)
}

/// Scalar curvature of `ψ^{4/(d−2)} g₀` from `Δ_{g₀}ψ`, `ψ` and `R(g₀)`:
/// `(R(g₀)ψ − 4(d−1)/(d−2) Δψ) / ψ^{(d+2)/(d−2)}`.
pub fn conformal_scalar<S: Real>(lap_psi: &S, psi: &S, base_scalar: &S, d: usize) -> S {
    let p = (d as f64 + 2.0) / (d as f64 - 2.0);
    (base_scalar.clone() * psi.clone() - lap_psi.clone() * conformal_coefficient(d)) / psi.powf(p)
}

/// `Δ_g f = g^{ij}(∂_ij f − Γ_{ij}^k ∂_k f)` from first and second partials.
pub fn scalar_laplacian<S: Real>(grad: &[S], hess: &Mat<S>, g_inv: &Mat<S>, gamma: &Christoffel<S>) -> S {
    let d = grad.len();
    sum((0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| {
        let conn = sum((0..d).map(|k| gamma.get(k, i, j).clone() * grad[k].clone()));
        g_inv.get(i, j).clone() * (hess.get(i, j).clone() - conn)
    }))
}
