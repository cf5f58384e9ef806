//! Seeded random variates: Gamma-family draws, the generalized inverse
//! Gaussian (ratio-of-uniforms), and the forest-process prior simulator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal, StudentT};

use crate::domain::AugmentedTree;
use crate::error::{Error, Result};

/// Default generator for every stochastic routine in the crate.
pub type SeededRng = ChaCha8Rng;

/// A generator for `stream` under the root `seed`. Distinct streams are
/// independent, so each chain or worker gets its own.
pub fn seeded_rng(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Rejection loops give up after this many proposals.
pub const MAX_REJECTION_TRIALS: u64 = 1_000_000;

/// Draws from Gamma(shape, scale).
pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> Result<f64> {
    let g = Gamma::new(shape, scale)
        .map_err(|e| Error::InvalidParameters(format!("gamma(shape={shape}, scale={scale}): {e}")))?;
    Ok(g.sample(rng))
}

/// Draws from the inverse gamma with density proportional to `x^{-shape-1} exp(-scale/x)`.
pub fn sample_inverse_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0 && shape.is_finite() && scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidParameters(format!("inverse-gamma(shape={shape}, scale={scale})")));
    }
    Ok(scale / sample_gamma(shape, 1.0, rng)?)
}

pub fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn sample_student_t<R: Rng + ?Sized>(df: f64, rng: &mut R) -> Result<f64> {
    let t = StudentT::new(df).map_err(|e| Error::InvalidParameters(format!("student-t(df={df}): {e}")))?;
    Ok(t.sample(rng))
}

/// Isotropic Gaussian vector `N(mean, sd^2 I)`.
pub fn sample_gaussian_vec<R: Rng + ?Sized>(mean: &[f64], sd: f64, rng: &mut R) -> Vec<f64> {
    mean.iter().map(|m| m + sd * sample_standard_normal(rng)).collect()
}

/// Vector of independent Student-t coordinates shifted by `mean`.
pub fn sample_t_vec<R: Rng + ?Sized>(mean: &[f64], df: f64, rng: &mut R) -> Result<Vec<f64>> {
    mean.iter().map(|m| Ok(m + sample_student_t(df, rng)?)).collect()
}

/// Generalized inverse Gaussian parameters; density proportional to
/// `x^{lam - 1} exp(-(psi x + chi / x) / 2)` on `x > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GigParams {
    pub psi: f64,
    pub chi: f64,
    pub lam: f64,
}

impl GigParams {
    pub fn new(psi: f64, chi: f64, lam: f64) -> Result<Self> {
        let g = GigParams { psi, chi, lam };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let GigParams { psi, chi, lam } = *self;
        let finite = psi.is_finite() && chi.is_finite() && lam.is_finite();
        let ok = finite
            && psi >= 0.0
            && chi >= 0.0
            && ((psi > 0.0 && chi > 0.0) || (chi == 0.0 && lam > 0.0 && psi > 0.0) || (psi == 0.0 && lam < 0.0 && chi > 0.0));
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameters(format!("GIG(psi={psi}, chi={chi}, lambda={lam}) is outside the valid domain")))
        }
    }

    /// Log of the unnormalized density.
    pub fn log_kernel(&self, x: f64) -> f64 {
        (self.lam - 1.0) * x.ln() - 0.5 * (self.psi * x + self.chi / x)
    }
}

/// Proposal counters for the GIG rejection samplers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GigStats {
    pub proposals: u64,
    pub accepted: u64,
}

impl GigStats {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            return f64::NAN;
        }
        self.accepted as f64 / self.proposals as f64
    }
}

pub fn sample_gig<R: Rng + ?Sized>(params: GigParams, rng: &mut R) -> Result<f64> {
    sample_gig_counted(params, rng, &mut GigStats::default())
}

/// GIG draw that also records how many proposals the rejection step used.
///
/// The two-parameter core `x^{lam-1} exp(-omega (x + 1/x) / 2)` is sampled
/// with one of three rejection schemes depending on `(lam, omega)`: a
/// mode-shifted ratio-of-uniforms, an unshifted ratio-of-uniforms, or a
/// piecewise hat for the non-log-concave corner. Negative orders use the
/// reciprocal identity.
pub fn sample_gig_counted<R: Rng + ?Sized>(params: GigParams, rng: &mut R, stats: &mut GigStats) -> Result<f64> {
    params.validate()?;
    let GigParams { psi, chi, lam } = params;

    if chi == 0.0 {
        stats.proposals += 1;
        stats.accepted += 1;
        return sample_gamma(lam, 2.0 / psi, rng);
    }
    if psi == 0.0 {
        stats.proposals += 1;
        stats.accepted += 1;
        return Ok(1.0 / sample_gamma(-lam, 2.0 / chi, rng)?);
    }

    let alpha = (chi / psi).sqrt();
    let omega = (psi * chi).sqrt();
    let order = lam.abs();

    let x = if order > 2.0 || omega > 3.0 {
        rou_shifted(order, omega, rng, stats)?
    } else if order >= 1.0 - 2.25 * omega * omega || omega > 0.2 {
        rou_unshifted(order, omega, rng, stats)?
    } else if omega > 0.0 {
        concave_hat(order, omega, rng, stats)?
    } else {
        return Err(Error::InvalidParameters(format!("GIG omega = {omega}")));
    };
    let x = if lam < 0.0 { alpha / x } else { alpha * x };
    if x.is_finite() && x > 0.0 {
        Ok(x)
    } else {
        Err(Error::Numerical(format!("GIG draw {x} for {params:?}")))
    }
}

fn gig_mode(lam: f64, omega: f64) -> f64 {
    if lam >= 1.0 {
        ((lam - 1.0).hypot(omega) + (lam - 1.0)) / omega
    } else {
        omega / ((1.0 - lam).hypot(omega) + (1.0 - lam))
    }
}

fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

fn rou_unshifted<R: Rng + ?Sized>(lam: f64, omega: f64, rng: &mut R, stats: &mut GigStats) -> Result<f64> {
    let t = 0.5 * (lam - 1.0);
    let s = 0.25 * omega;
    let xm = gig_mode(lam, omega);
    let nc = t * xm.ln() - s * (xm + 1.0 / xm);
    let ym = ((lam + 1.0) + (lam + 1.0).hypot(omega)) / omega;
    let um = (0.5 * (lam + 1.0) * ym.ln() - s * (ym + 1.0 / ym) - nc).exp();
    for _ in 0..MAX_REJECTION_TRIALS {
        stats.proposals += 1;
        let u = um * open_unit(rng);
        let v = open_unit(rng);
        let x = u / v;
        if v.ln() <= t * x.ln() - s * (x + 1.0 / x) - nc {
            stats.accepted += 1;
            return Ok(x);
        }
    }
    Err(Error::BudgetExceeded { context: "GIG ratio-of-uniforms", budget: MAX_REJECTION_TRIALS })
}

fn rou_shifted<R: Rng + ?Sized>(lam: f64, omega: f64, rng: &mut R, stats: &mut GigStats) -> Result<f64> {
    let t = 0.5 * (lam - 1.0);
    let s = 0.25 * omega;
    let xm = gig_mode(lam, omega);
    let nc = t * xm.ln() - s * (xm + 1.0 / xm);

    // Extremes of (x - xm) sqrt(f(x)) solve y^3 + a y^2 + b y + c = 0.
    let a = -(2.0 * (lam + 1.0) / omega + xm);
    let b = 2.0 * (lam - 1.0) * xm / omega - 1.0;
    let c = xm;
    let p = b - a * a / 3.0;
    let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
    let phi = (-q / (2.0 * (-(p * p * p) / 27.0).sqrt())).clamp(-1.0, 1.0).acos();
    let fak = 2.0 * (-p / 3.0).sqrt();
    let y1 = fak * (phi / 3.0).cos() - a / 3.0;
    let y2 = fak * (phi / 3.0 + 4.0 / 3.0 * std::f64::consts::PI).cos() - a / 3.0;

    let uplus = (y1 - xm) * (t * y1.ln() - s * (y1 + 1.0 / y1) - nc).exp();
    let uminus = (y2 - xm) * (t * y2.ln() - s * (y2 + 1.0 / y2) - nc).exp();
    if !(uplus.is_finite() && uminus.is_finite()) {
        return Err(Error::Numerical(format!("GIG bounding box failed for lambda={lam}, omega={omega}")));
    }

    for _ in 0..MAX_REJECTION_TRIALS {
        stats.proposals += 1;
        let u = uminus + rng.random::<f64>() * (uplus - uminus);
        let v = open_unit(rng);
        let x = u / v + xm;
        if x > 0.0 && v.ln() <= t * x.ln() - s * (x + 1.0 / x) - nc {
            stats.accepted += 1;
            return Ok(x);
        }
    }
    Err(Error::BudgetExceeded { context: "GIG shifted ratio-of-uniforms", budget: MAX_REJECTION_TRIALS })
}

// Constant hat on [0, x0], a power hat on [x0, 2/omega] and an exponential
// tail beyond; used for small omega with 0 <= lam < 1.
fn concave_hat<R: Rng + ?Sized>(lam: f64, omega: f64, rng: &mut R, stats: &mut GigStats) -> Result<f64> {
    let xm = gig_mode(lam, omega);
    let x0 = omega / (1.0 - lam);
    let k0 = ((lam - 1.0) * xm.ln() - 0.5 * omega * (xm + 1.0 / xm)).exp();
    let a0 = k0 * x0;
    let (k1, a1, k2, a2);
    if x0 >= 2.0 / omega {
        k1 = 0.0;
        a1 = 0.0;
        k2 = x0.powf(lam - 1.0);
        a2 = k2 * 2.0 * (-omega * x0 / 2.0).exp() / omega;
    } else {
        k1 = (-omega).exp();
        a1 = if lam == 0.0 {
            k1 * (2.0 / (omega * omega)).ln()
        } else {
            k1 / lam * ((2.0 / omega).powf(lam) - x0.powf(lam))
        };
        k2 = (2.0 / omega).powf(lam - 1.0);
        a2 = k2 * 2.0 * (-1.0f64).exp() / omega;
    }
    let total = a0 + a1 + a2;
    let tail_start = x0.max(2.0 / omega);

    for _ in 0..MAX_REJECTION_TRIALS {
        stats.proposals += 1;
        let mut v = total * rng.random::<f64>();
        let (x, hx) = if v <= a0 {
            (x0 * v / a0, k0)
        } else {
            v -= a0;
            if v <= a1 {
                if lam == 0.0 {
                    let x = omega * (omega.exp() * v).exp();
                    (x, k1 / x)
                } else {
                    let x = (x0.powf(lam) + lam / k1 * v).powf(1.0 / lam);
                    (x, k1 * x.powf(lam - 1.0))
                }
            } else {
                v -= a1;
                let x = -2.0 / omega * ((-omega / 2.0 * tail_start).exp() - omega / (2.0 * k2) * v).ln();
                (x, k2 * (-omega / 2.0 * x).exp())
            }
        };
        let u = rng.random::<f64>() * hx;
        if x > 0.0 && u.ln() <= (lam - 1.0) * x.ln() - omega / 2.0 * (x + 1.0 / x) {
            stats.accepted += 1;
            return Ok(x);
        }
    }
    Err(Error::BudgetExceeded { context: "GIG piecewise hat", budget: MAX_REJECTION_TRIALS })
}

/// Runs the sequential forest process for nodes `1..=n` in index order:
/// node `i` attaches to each earlier node with probability `1/(i-1+alpha)`
/// and to the hub (opening a cluster) with probability `alpha/(i-1+alpha)`.
pub fn simulate_forest_process<R: Rng + ?Sized>(n: usize, alpha: f64, rng: &mut R) -> Result<AugmentedTree> {
    if n < 1 {
        return Err(Error::invalid("forest process needs n >= 1"));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    let mut parent = vec![0usize; n + 1];
    for i in 2..=n {
        let total = (i - 1) as f64 + alpha;
        let u = rng.random::<f64>() * total;
        // [0, i-1) -> earlier node floor(u) + 1; the rest -> hub
        parent[i] = if u < (i - 1) as f64 { (u as usize).min(i - 2) + 1 } else { 0 };
    }
    AugmentedTree::from_parents(parent)
}

/// Exact log probability of `tree` under [`simulate_forest_process`];
/// `-inf` for trees the sequential order cannot produce.
pub fn forest_process_log_prob(tree: &AugmentedTree, alpha: f64) -> f64 {
    let mut lp = 0.0;
    for i in 1..=tree.n() {
        let total = (i - 1) as f64 + alpha;
        let p = tree.parent(i);
        lp += if p == 0 {
            (alpha / total).ln()
        } else if p < i {
            -total.ln()
        } else {
            return f64::NEG_INFINITY;
        };
    }
    lp
}
